#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace cormult {

enum class Modality : std::size_t { Audio = 0, Text = 1, Vision = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::Audio, Modality::Text, Modality::Vision};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

constexpr std::string_view name_of(Modality m) {
  switch (m) {
    case Modality::Audio: return "A";
    case Modality::Text: return "T";
    case Modality::Vision: return "V";
  }
  return "?";
}

// The two modalities other than m, in A, T, V order.
constexpr std::array<Modality, 2> partners_of(Modality m) {
  switch (m) {
    case Modality::Audio: return {Modality::Text, Modality::Vision};
    case Modality::Text: return {Modality::Audio, Modality::Vision};
    case Modality::Vision: return {Modality::Audio, Modality::Text};
  }
  return {Modality::Audio, Modality::Text};
}

}  // namespace cormult
