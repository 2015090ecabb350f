#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cormult/tensor.hpp"

namespace cormult {

struct ParamRecord {
  std::string name;
  Tensor value;
};

// Layout: 4-byte magic, u32 record count, then per record u32 name length,
// name bytes, u8 rank, u32 extents and float32 payload, all little-endian.
std::string encode_records(std::string_view magic, const std::vector<ParamRecord>& records);
std::vector<ParamRecord> decode_records(std::string_view magic, const std::string& bytes,
                                        const std::string& what);

void write_records(const std::filesystem::path& path, std::string_view magic,
                   const std::vector<ParamRecord>& records);
std::vector<ParamRecord> read_records(const std::filesystem::path& path, std::string_view magic);

}  // namespace cormult
