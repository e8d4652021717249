#include "umct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "umct/errors.hpp"

namespace umct {
namespace {

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.header.size()));
  out += ckpt.header;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (shape_numel(e.shape) != static_cast<std::int64_t>(e.values.size()))
      throw ShapeError("checkpoint entry '" + e.name + "' has " + std::to_string(e.values.size()) +
                       " values for shape " + shape_str(e.shape));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto x : e.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(x));
    for (float v : e.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw IoError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.header = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError("checkpoint: entry '" + e.name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>()));
    const auto n = static_cast<std::size_t>(shape_numel(e.shape));
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(r.get<std::uint32_t>());
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after last entry");
  return ckpt;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace umct
