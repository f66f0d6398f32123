#include "fdy/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fdy/errors.hpp"

namespace fdy {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'Y', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointData& data) {
  std::string out(kMagic, 4);
  put_u32(out, data.version);
  put_u32(out, static_cast<std::uint32_t>(data.config_text.size()));
  out += data.config_text;
  put_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("not a checkpoint file (bad magic)");
  CheckpointData data;
  data.version = r.u32("version");
  if (data.version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(data.version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  data.config_text = r.str(r.u32("config length"), "config text");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str(r.u32("tensor name length"), "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw FormatError("tensor " + t.name + ": implausible rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32("tensor dims"));
      n *= t.dims.back();
    }
    r.need(static_cast<std::size_t>(n) * 4, "tensor payload");
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) v = std::bit_cast<float>(r.u32("tensor payload"));
    data.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last checkpoint tensor");
  return data;
}

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  const std::string bytes = encode_checkpoint(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to " + path + " failed");
}

CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace fdy
