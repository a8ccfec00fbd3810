#include "caila/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <utility>

#include "caila/config.hpp"
#include "caila/error.hpp"

namespace caila {

namespace {

constexpr char kMagic[] = "CAILA1\n";
constexpr std::size_t kMagicLen = 7;
constexpr std::size_t kMaxRank = 8;
constexpr std::uint64_t kMaxElems = std::uint64_t(1) << 31;

void put_u8(std::string& out, std::uint8_t x) { out.push_back(char(x)); }

void put_u16(std::string& out, std::uint16_t x) {
  out.push_back(char(x & 0xff));
  out.push_back(char((x >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(char((x >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float x) { put_u32(out, std::bit_cast<std::uint32_t>(x)); }

struct Cursor {
  const std::string& buf;
  std::size_t off = 0;

  void need(std::size_t k, const char* what) const {
    if (buf.size() - off < k)
      throw FormatError(std::string("checkpoint truncated in ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return std::uint8_t(buf[off++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t x = 0;
    for (int i = 0; i < 2; ++i) x |= std::uint16_t(std::uint8_t(buf[off++])) << (8 * i);
    return x;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= std::uint32_t(std::uint8_t(buf[off++])) << (8 * i);
    return x;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

std::string join_lines(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back('\n');
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = s.find('\n', start);
    const std::string part =
        s.substr(start, (end == std::string::npos ? s.size() : end) - start);
    if (!part.empty()) out.push_back(part);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p,
                     std::uint64_t backbone_hash) {
  std::string out;
  out.append(kMagic, kMagicLen);

  const auto& named = p.named();
  put_u32(out, std::uint32_t(named.size()));
  std::vector<std::string> frozen;
  for (const auto& [name, t] : named) {
    if (!t.requires_grad()) frozen.push_back(name);
    if (name.size() > 0xffff) throw ValueError("tensor name too long: '" + name + "'");
    put_u16(out, std::uint16_t(name.size()));
    out += name;
    put_u8(out, std::uint8_t(t.rank()));
    for (int dim : t.shape()) put_u32(out, std::uint32_t(dim));
    for (float v : t.data()) put_f32(out, v);
  }

  std::vector<std::string> meta;
  meta.push_back("config=" + serialize_encoder_config(p.config()));
  meta.push_back("vocab.attributes=" + join_lines(p.vocab().attributes));
  meta.push_back("vocab.objects=" + join_lines(p.vocab().objects));
  meta.push_back("frozen=" + join_lines(frozen));
  char hex[24];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(backbone_hash));
  meta.push_back(std::string("backbone_hash=") + hex);

  put_u32(out, std::uint32_t(meta.size()));
  for (const std::string& entry : meta) {
    put_u32(out, std::uint32_t(entry.size()));
    out += entry;
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Cursor c{buf};
  const std::string magic = c.str(kMagicLen, "magic");
  if (magic.compare(0, 5, "CAILA") != 0)
    throw FormatError("not a CAILA checkpoint (bad magic)");
  if (magic != kMagic) throw FormatError("unsupported checkpoint version");

  Checkpoint ck;
  const std::uint32_t count = c.u32("tensor count");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = c.u16("tensor name length");
    if (name_len == 0) throw FormatError("empty tensor name");
    const std::string name = c.str(name_len, "tensor name");
    if (!names.insert(name).second)
      throw FormatError("duplicate tensor '" + name + "'");
    const std::uint8_t rank = c.u8("tensor rank");
    if (rank > kMaxRank)
      throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const std::uint32_t dim = c.u32("tensor dims");
      if (dim == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      numel *= dim;
      if (numel > kMaxElems)
        throw FormatError("tensor '" + name + "' exceeds the element limit");
      shape.push_back(int(dim));
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    c.need(4 * std::size_t(numel), "tensor payload");
    for (float& v : values) v = c.f32("tensor payload");
    ck.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(values)));
  }

  const std::uint32_t meta_count = c.u32("metadata count");
  std::map<std::string, std::string> meta;
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    const std::uint32_t len = c.u32("metadata length");
    const std::string entry = c.str(len, "metadata entry");
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos)
      throw FormatError("metadata entry without '=': '" + entry.substr(0, 32) + "'");
    const std::string key = entry.substr(0, eq);
    if (!meta.emplace(key, entry.substr(eq + 1)).second)
      throw FormatError("duplicate metadata key '" + key + "'");
  }
  if (c.off != buf.size()) throw FormatError("trailing bytes after checkpoint payload");

  for (const char* key :
       {"config", "vocab.attributes", "vocab.objects", "frozen", "backbone_hash"})
    if (!meta.count(key)) throw FormatError(std::string("missing metadata key '") + key + "'");
  for (const auto& [key, value] : meta) {
    (void)value;
    if (key != "config" && key != "vocab.attributes" && key != "vocab.objects" &&
        key != "frozen" && key != "backbone_hash")
      throw FormatError("unknown metadata key '" + key + "'");
  }

  try {
    ck.config = parse_encoder_config(meta.at("config"));
    ck.vocab.attributes = split_lines(meta.at("vocab.attributes"));
    ck.vocab.objects = split_lines(meta.at("vocab.objects"));
    ck.vocab.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  ck.frozen = split_lines(meta.at("frozen"));

  const std::string& hex = meta.at("backbone_hash");
  char* end = nullptr;
  ck.backbone_hash = std::strtoull(hex.c_str(), &end, 16);
  if (hex.empty() || end != hex.c_str() + hex.size())
    throw FormatError("backbone_hash '" + hex + "' is not hexadecimal");

  return ck;
}

ModelParams Checkpoint::restore() const {
  ModelParams model(config, vocab, 0);
  std::map<std::string, Tensor> table;
  for (const auto& [name, t] : tensors) table.emplace(name, t);

  for (const auto& [name, handle] : model.named()) {
    auto it = table.find(name);
    if (it == table.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
    Tensor dst = handle;
    const Tensor& src = it->second;
    if (src.shape() != dst.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_str(src.shape()) +
                        ", the model expects " + shape_str(dst.shape()));
    auto from = src.data();
    auto to = dst.data();
    std::copy(from.begin(), from.end(), to.begin());
    table.erase(it);
  }
  if (!table.empty())
    throw FormatError("checkpoint has unknown tensor '" + table.begin()->first + "'");

  for (const std::string& name : frozen) {
    try {
      Tensor t = model.find(name);
      t.set_requires_grad(false);
    } catch (const Error&) {
      throw FormatError("frozen list names unknown tensor '" + name + "'");
    }
  }
  return model;
}

}  // namespace caila
