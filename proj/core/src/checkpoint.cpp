#include "gcanet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "gcanet/error.hpp"

namespace gcanet {
namespace {

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("checkpoint truncated: " + path_);
  }
  const std::vector<unsigned char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
  buf.push_back(kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    const Shape& s = e.value.shape();
    put_u32(buf, static_cast<std::uint32_t>(s.n));
    put_u32(buf, static_cast<std::uint32_t>(s.c));
    put_u32(buf, static_cast<std::uint32_t>(s.h));
    put_u32(buf, static_cast<std::uint32_t>(s.w));
    for (float v : e.value.vec()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path.string());
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw IoError("bad checkpoint magic: " + path.string());
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.bytes(r.u32());
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    if (!s.valid()) throw IoError("invalid shape for '" + e.name + "' in " + path.string());
    std::vector<float> data(static_cast<std::size_t>(s.numel()));
    for (auto& v : data) v = std::bit_cast<float>(r.u32());
    e.value = Tensor<float>(s, std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint: " + path.string());
  return entries;
}

template <class T>
void save_parameters(const std::filesystem::path& path, std::span<Parameter<T>* const> params) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.size());
  for (const auto* p : params) entries.push_back({p->name, p->value.template cast<float>()});
  write_checkpoint(path, entries);
}

template <class T>
void load_parameters(const std::filesystem::path& path, std::span<Parameter<T>* const> params) {
  auto entries = read_checkpoint(path);
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw IoError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second->value.shape() != p->value.shape()) {
      throw ShapeError("checkpoint shape " + it->second->value.shape().str() + " for '" + p->name +
                       "' does not match " + p->value.shape().str());
    }
    p->value = it->second->value.template cast<T>();
  }
}

template void save_parameters<float>(const std::filesystem::path&, std::span<Parameter<float>* const>);
template void save_parameters<double>(const std::filesystem::path&, std::span<Parameter<double>* const>);
template void load_parameters<float>(const std::filesystem::path&, std::span<Parameter<float>* const>);
template void load_parameters<double>(const std::filesystem::path&, std::span<Parameter<double>* const>);

}  // namespace gcanet
