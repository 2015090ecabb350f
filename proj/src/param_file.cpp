#include "cormult/param_file.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "cormult/errors.hpp"

namespace cormult {
namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& what) : b_(bytes), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError(what_ + ": truncated");
  }
  const std::string& b_;
  const std::string& what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_records(std::string_view magic, const std::vector<ParamRecord>& records) {
  std::string s(magic);
  put_u32(s, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.value.rank() == 0 || r.value.rank() > 255) throw FormatError(r.name + ": unsupported rank");
    put_u32(s, static_cast<std::uint32_t>(r.name.size()));
    s += r.name;
    s.push_back(static_cast<char>(r.value.rank()));
    for (auto e : r.value.shape()) put_u32(s, static_cast<std::uint32_t>(e));
    for (double v : r.value.data()) put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return s;
}

std::vector<ParamRecord> decode_records(std::string_view magic, const std::string& bytes, const std::string& what) {
  if (bytes.compare(0, magic.size(), magic) != 0) {
    throw FormatError(what + ": expected magic " + std::string(magic));
  }
  Reader r(bytes, what);
  r.str(magic.size());
  const std::uint32_t count = r.u32();
  std::vector<ParamRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamRecord rec;
    rec.name = r.str(r.u32());
    const std::size_t rank = r.u8();
    if (rank == 0) throw FormatError(what + ": " + rec.name + " has rank 0");
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) throw FormatError(what + ": " + rec.name + " has a zero extent");
    }
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<float>(r.u32());
    rec.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError(what + ": trailing bytes");
  return out;
}

void write_records(const std::filesystem::path& path, std::string_view magic, const std::vector<ParamRecord>& records) {
  const std::string s = encode_records(magic, records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFile(path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::vector<ParamRecord> read_records(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_records(magic, ss.str(), path.string());
}

}  // namespace cormult
