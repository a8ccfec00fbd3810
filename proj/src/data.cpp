#include "caila/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "caila/util.hpp"

namespace fs = std::filesystem;

namespace caila {

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

namespace {

int find_name(const std::vector<std::string>& names, const std::string& name, const char* kind) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return int(i);
  }
  throw VocabError(std::string("unknown ") + kind + " '" + name + "'");
}

void check_unique(const std::vector<std::string>& names, const char* kind) {
  if (names.empty()) throw ConfigError(std::string(kind) + " list is empty");
  std::set<std::string> seen;
  for (const std::string& n : names) {
    if (n.empty() || n.find('\t') != std::string::npos || n.find('\n') != std::string::npos) {
      throw ConfigError(std::string("invalid ") + kind + " name '" + n + "'");
    }
    if (!seen.insert(n).second) throw ConfigError(std::string("duplicate ") + kind + " '" + n + "'");
  }
}

}  // namespace

int VocabSpec::attr_id(const std::string& name) const {
  return find_name(attributes, name, "attribute");
}

int VocabSpec::obj_id(const std::string& name) const { return find_name(objects, name, "object"); }

void VocabSpec::validate() const {
  check_unique(attributes, "attribute");
  check_unique(objects, "object");
}

// The renderable palette: appearance names and shape names understood by
// render_image. default_vocab takes prefixes of these lists.
namespace {

constexpr int kPaletteSize = 8;
const std::array<const char*, kPaletteSize> kAttrNames = {
    "red", "green", "blue", "yellow", "striped", "checkered", "dotted", "banded"};
const std::array<const char*, kPaletteSize> kObjNames = {
    "circle", "square", "triangle", "ring", "cross", "star", "diamond", "hbar"};

}  // namespace

VocabSpec default_vocab(int attrs, int objs) {
  if (attrs < 1 || attrs > kPaletteSize || objs < 1 || objs > kPaletteSize) {
    throw ConfigError("default_vocab: counts must lie in [1, " + std::to_string(kPaletteSize) +
                      "], got " + std::to_string(attrs) + "x" + std::to_string(objs));
  }
  VocabSpec v;
  for (int i = 0; i < attrs; ++i) v.attributes.emplace_back(kAttrNames[std::size_t(i)]);
  for (int i = 0; i < objs; ++i) v.objects.emplace_back(kObjNames[std::size_t(i)]);
  return v;
}

// ---------------------------------------------------------------------------
// LabelSpace
// ---------------------------------------------------------------------------

bool LabelSpace::is_seen(PairLabel p) const {
  return std::binary_search(seen.begin(), seen.end(), p);
}

bool LabelSpace::is_unseen(PairLabel p) const {
  return std::binary_search(unseen.begin(), unseen.end(), p);
}

std::vector<PairLabel> LabelSpace::candidates(World world) const {
  std::vector<PairLabel> out;
  if (world == World::Closed) {
    out.insert(out.end(), seen.begin(), seen.end());
    out.insert(out.end(), unseen.begin(), unseen.end());
  } else {
    out.reserve(std::size_t(vocab.num_pairs()));
    for (int a = 0; a < vocab.num_attrs(); ++a) {
      for (int o = 0; o < vocab.num_objs(); ++o) out.push_back({a, o});
    }
  }
  return out;
}

void LabelSpace::validate() const {
  vocab.validate();
  auto check_list = [&](const std::vector<PairLabel>& v, const char* which) {
    for (PairLabel p : v) {
      if (p.attr < 0 || p.attr >= vocab.num_attrs() || p.obj < 0 || p.obj >= vocab.num_objs()) {
        throw ConfigError(std::string("label space: ") + which + " pair out of vocab range");
      }
    }
    if (!std::is_sorted(v.begin(), v.end()) ||
        std::adjacent_find(v.begin(), v.end()) != v.end()) {
      throw ConfigError(std::string("label space: ") + which + " pairs not sorted-unique");
    }
  };
  check_list(seen, "seen");
  check_list(unseen, "unseen");
  if (seen.empty()) throw ConfigError("label space: no seen pairs");
  for (PairLabel p : unseen) {
    if (is_seen(p)) {
      throw ConfigError("label space: pair (" + vocab.attributes[std::size_t(p.attr)] + ", " +
                        vocab.objects[std::size_t(p.obj)] + ") is both seen and unseen");
    }
  }
  std::vector<bool> attr_cov(std::size_t(vocab.num_attrs()), false);
  std::vector<bool> obj_cov(std::size_t(vocab.num_objs()), false);
  for (PairLabel p : seen) {
    attr_cov[std::size_t(p.attr)] = true;
    obj_cov[std::size_t(p.obj)] = true;
  }
  for (int a = 0; a < vocab.num_attrs(); ++a) {
    if (!attr_cov[std::size_t(a)]) {
      throw ConfigError("label space: attribute '" + vocab.attributes[std::size_t(a)] +
                        "' appears in no seen pair");
    }
  }
  for (int o = 0; o < vocab.num_objs(); ++o) {
    if (!obj_cov[std::size_t(o)]) {
      throw ConfigError("label space: object '" + vocab.objects[std::size_t(o)] +
                        "' appears in no seen pair");
    }
  }
}

LabelSpace split_compositions(const VocabSpec& vocab, double seen_fraction, std::uint64_t seed) {
  vocab.validate();
  const int na = vocab.num_attrs();
  const int no = vocab.num_objs();
  const int total = na * no;
  if (total < na + no) {
    throw ConfigError("split_compositions: " + std::to_string(na) + "x" + std::to_string(no) +
                      " vocabulary cannot cover all primitives with pairs to spare");
  }
  if (!(seen_fraction > 0.0 && seen_fraction < 1.0)) {
    throw ConfigError("split_compositions: seen_fraction must lie in (0, 1)");
  }
  const long target = round_half_even(seen_fraction * total);
  const int cover = std::max(na, no);
  if (target < cover) {
    throw ConfigError("split_compositions: seen_fraction " + std::to_string(seen_fraction) +
                      " leaves fewer than " + std::to_string(cover) +
                      " pairs, too few to cover every primitive");
  }
  if (target >= total) {
    throw ConfigError("split_compositions: seen_fraction leaves no unseen pairs");
  }

  // Diagonal (i mod |A|, i mod |O|) hits every attribute and object once
  // within max(|A|, |O|) steps, and those pairs are distinct.
  std::set<PairLabel> seen_set;
  for (int i = 0; i < cover; ++i) seen_set.insert({i % na, i % no});

  std::vector<PairLabel> pool;
  for (int a = 0; a < na; ++a) {
    for (int o = 0; o < no; ++o) {
      PairLabel p{a, o};
      if (!seen_set.count(p)) pool.push_back(p);
    }
  }
  Rng rng(mix_seed(seed, 0x51CA5eedULL));
  rng.shuffle(pool);
  const std::size_t need = std::size_t(target) - seen_set.size();
  for (std::size_t i = 0; i < need; ++i) seen_set.insert(pool[i]);

  LabelSpace ls;
  ls.vocab = vocab;
  for (int a = 0; a < na; ++a) {
    for (int o = 0; o < no; ++o) {
      PairLabel p{a, o};
      (seen_set.count(p) ? ls.seen : ls.unseen).push_back(p);
    }
  }
  ls.validate();
  return ls;
}

void save_labelspace(const LabelSpace& ls, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  auto emit = [&](const std::vector<PairLabel>& v, const char* tag) {
    for (PairLabel p : v) {
      out << tag << '\t' << ls.vocab.attributes[std::size_t(p.attr)] << '\t'
          << ls.vocab.objects[std::size_t(p.obj)] << '\n';
    }
  };
  emit(ls.seen, "seen");
  emit(ls.unseen, "unseen");
  if (!out) throw IoError("write failed for '" + path + "'");
}

LabelSpace load_labelspace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open label-space file '" + path + "'");
  struct Row {
    bool seen;
    std::string attr, obj;
  };
  std::vector<Row> rows;
  std::set<std::string> attrs, objs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag, a, o, extra;
    if (!std::getline(ss, tag, '\t') || !std::getline(ss, a, '\t') || !std::getline(ss, o, '\t') ||
        std::getline(ss, extra, '\t')) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected tag<TAB>attr<TAB>obj");
    }
    if (tag != "seen" && tag != "unseen") {
      throw FormatError(path + ":" + std::to_string(lineno) + ": unknown tag '" + tag + "'");
    }
    rows.push_back({tag == "seen", a, o});
    attrs.insert(a);
    objs.insert(o);
  }
  LabelSpace ls;
  ls.vocab.attributes.assign(attrs.begin(), attrs.end());
  ls.vocab.objects.assign(objs.begin(), objs.end());
  for (const Row& r : rows) {
    PairLabel p{ls.vocab.attr_id(r.attr), ls.vocab.obj_id(r.obj)};
    (r.seen ? ls.seen : ls.unseen).push_back(p);
  }
  auto canon = [](std::vector<PairLabel>& v) {
    std::sort(v.begin(), v.end());
    if (std::adjacent_find(v.begin(), v.end()) != v.end()) {
      throw FormatError("label-space file lists a pair twice");
    }
  };
  canon(ls.seen);
  canon(ls.unseen);
  ls.validate();
  return ls;
}

// ---------------------------------------------------------------------------
// Renderer
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  float r, g, b;
};

constexpr Rgb kBackground{0.12f, 0.12f, 0.13f};

// Discrete jitter grid shared by the renderer and the analyzers; brute-force
// recovery needs the grid to be small and exact.
constexpr int kJitterRange = 4;  // dx, dy in [-4, 4]
constexpr std::array<float, 4> kScales = {0.75f, 0.875f, 1.0f, 1.125f};
constexpr float kBaseRadiusFrac = 0.28f;  // radius = frac * hw * scale

/// True when pixel (x, y) lies inside shape `shape` centered at (cx, cy) with
/// radius R. Shapes are defined on unit coordinates u, v in [-1, 1].
bool shape_hit(int shape, float cx, float cy, float R, int x, int y) {
  float u = (float(x) + 0.5f - cx) / R;
  float v = (float(y) + 0.5f - cy) / R;
  float au = std::fabs(u);
  float av = std::fabs(v);
  switch (shape) {
    case 0:  // circle
      return u * u + v * v <= 1.0f;
    case 1:  // square
      return au <= 0.9f && av <= 0.9f;
    case 2: {  // triangle, apex up
      if (v < -1.0f || v > 0.8f) return false;
      // width grows linearly from apex (v=-1) to base (v=0.8)
      return au <= 0.95f * (v + 1.0f) / 1.8f;
    }
    case 3: {  // ring
      float rr = u * u + v * v;
      return rr <= 1.0f && rr >= 0.55f * 0.55f;
    }
    case 4:  // cross
      return (au <= 0.35f && av <= 1.0f) || (av <= 0.35f && au <= 1.0f);
    case 5:  // four-point star (astroid)
      return std::sqrt(au) + std::sqrt(av) <= 1.0f;
    case 6:  // diamond
      return au + av <= 1.0f;
    case 7:  // horizontal bar
      return av <= 0.35f && au <= 1.0f;
    default:
      throw VocabError("unknown shape id " + std::to_string(shape));
  }
}

/// Fill color for appearance `attr` at image position (x, y). Patterns are
/// anchored to image coordinates, so the analyzers can re-evaluate them
/// without knowing the object placement.
Rgb appearance_color(int attr, int x, int y) {
  switch (attr) {
    case 0:
      return {1.0f, 0.15f, 0.15f};  // red
    case 1:
      return {0.15f, 1.0f, 0.15f};  // green
    case 2:
      return {0.2f, 0.35f, 1.0f};  // blue
    case 3:
      return {1.0f, 1.0f, 0.2f};  // yellow
    case 4:  // striped: horizontal orange/white bands
      return (y / 4) % 2 == 0 ? Rgb{1.0f, 0.6f, 0.1f} : Rgb{1.0f, 1.0f, 1.0f};
    case 5:  // checkered: purple/white 4x4 checkerboard
      return ((x / 4) + (y / 4)) % 2 == 0 ? Rgb{0.7f, 0.2f, 0.9f} : Rgb{1.0f, 1.0f, 1.0f};
    case 6:  // dotted: cyan with dark dots
      return (x % 6 < 2 && y % 6 < 2) ? Rgb{0.05f, 0.05f, 0.05f} : Rgb{0.2f, 0.9f, 0.9f};
    case 7:  // banded: vertical magenta/white bands
      return (x / 4) % 2 == 0 ? Rgb{0.95f, 0.2f, 0.75f} : Rgb{1.0f, 1.0f, 1.0f};
    default:
      throw VocabError("unknown appearance id " + std::to_string(attr));
  }
}

int palette_attr_id(const std::string& name) {
  for (int i = 0; i < kPaletteSize; ++i) {
    if (name == kAttrNames[std::size_t(i)]) return i;
  }
  throw VocabError("attribute '" + name + "' is not renderable");
}

int palette_obj_id(const std::string& name) {
  for (int i = 0; i < kPaletteSize; ++i) {
    if (name == kObjNames[std::size_t(i)]) return i;
  }
  throw VocabError("object '" + name + "' is not renderable");
}

struct Placement {
  float cx, cy, R;
};

Placement placement_for(int hw, int dx, int dy, float scale) {
  return {float(hw) / 2 + float(dx), float(hw) / 2 + float(dy),
          kBaseRadiusFrac * float(hw) * scale};
}

}  // namespace

Image render_image(const std::string& attr, const std::string& obj, const RenderSpec& spec,
                   std::uint64_t sample_seed) {
  if (spec.image_hw < 32) throw ConfigError("render: image_hw must be at least 32");
  if (spec.noise < 0.0f || spec.noise > 0.5f) throw ConfigError("render: noise must lie in [0, 0.5]");
  const int shape = palette_obj_id(obj);
  const int appearance = palette_attr_id(attr);
  const int hw = spec.image_hw;

  Rng rng(mix_seed(spec.seed, sample_seed));
  const int jitter = std::max(1, hw / 16);
  const int dx = rng.uniform_int(2 * jitter + 1) - jitter;
  const int dy = rng.uniform_int(2 * jitter + 1) - jitter;
  const float sc = kScales[std::size_t(rng.uniform_int(int(kScales.size())))];
  const Placement pl = placement_for(hw, dx, dy, sc);

  Image img;
  img.hw = hw;
  img.rgb.resize(std::size_t(hw) * std::size_t(hw) * 3);
  std::size_t k = 0;
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      Rgb c = shape_hit(shape, pl.cx, pl.cy, pl.R, x, y) ? appearance_color(appearance, x, y)
                                                         : kBackground;
      img.rgb[k++] = c.r;
      img.rgb[k++] = c.g;
      img.rgb[k++] = c.b;
    }
  }
  if (spec.noise > 0.0f) {
    for (float& v : img.rgb) {
      v = std::clamp(v + float(rng.uniform(-double(spec.noise), double(spec.noise))), 0.0f, 1.0f);
    }
  }
  return img;
}

namespace {

std::vector<bool> foreground_mask(const Image& img) {
  std::vector<bool> fg(std::size_t(img.hw) * std::size_t(img.hw));
  std::size_t i = 0;
  for (int y = 0; y < img.hw; ++y) {
    for (int x = 0; x < img.hw; ++x, ++i) {
      float d = std::fabs(img.at(y, x, 0) - kBackground.r) +
                std::fabs(img.at(y, x, 1) - kBackground.g) +
                std::fabs(img.at(y, x, 2) - kBackground.b);
      fg[i] = d > 0.25f;
    }
  }
  return fg;
}

}  // namespace

std::string analyze_object(const Image& img, const VocabSpec& vocab) {
  const int hw = img.hw;
  const std::vector<bool> fg = foreground_mask(img);
  const int jitter = std::max(1, hw / 16);
  double best = -1.0;
  std::string best_name;
  for (const std::string& name : vocab.objects) {
    const int shape = palette_obj_id(name);
    double shape_best = -1.0;
    for (int dx = -jitter; dx <= jitter; ++dx) {
      for (int dy = -jitter; dy <= jitter; ++dy) {
        for (float sc : kScales) {
          const Placement pl = placement_for(hw, dx, dy, sc);
          long inter = 0, uni = 0;
          std::size_t i = 0;
          for (int y = 0; y < hw; ++y) {
            for (int x = 0; x < hw; ++x, ++i) {
              bool m = shape_hit(shape, pl.cx, pl.cy, pl.R, x, y);
              if (m && fg[i]) ++inter;
              if (m || fg[i]) ++uni;
            }
          }
          double iou = uni == 0 ? 0.0 : double(inter) / double(uni);
          shape_best = std::max(shape_best, iou);
        }
      }
    }
    if (shape_best > best) {
      best = shape_best;
      best_name = name;
    }
  }
  return best_name;
}

std::string analyze_attribute(const Image& img, const VocabSpec& vocab) {
  const int hw = img.hw;
  const std::vector<bool> fg = foreground_mask(img);
  double best = 1e30;
  std::string best_name;
  for (const std::string& name : vocab.attributes) {
    const int appearance = palette_attr_id(name);
    double mse = 0.0;
    long count = 0;
    std::size_t i = 0;
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x, ++i) {
        if (!fg[i]) continue;
        Rgb want = appearance_color(appearance, x, y);
        double dr = img.at(y, x, 0) - want.r;
        double dg = img.at(y, x, 1) - want.g;
        double db = img.at(y, x, 2) - want.b;
        mse += dr * dr + dg * dg + db * db;
        ++count;
      }
    }
    mse = count == 0 ? 1e30 : mse / double(count);
    if (mse < best) {
      best = mse;
      best_name = name;
    }
  }
  if (best_name.empty()) throw ValueError("analyze_attribute: image has no foreground");
  return best_name;
}

// ---------------------------------------------------------------------------
// PPM I/O
// ---------------------------------------------------------------------------

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P6\n" << img.hw << ' ' << img.hw << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.rgb.size());
  for (float v : img.rgb) {
    bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6") throw FormatError("'" + path + "' is not a binary PPM (P6)");
  if (w != h || w <= 0 || maxval != 255) {
    throw FormatError("'" + path + "' has unsupported geometry " + std::to_string(w) + "x" +
                      std::to_string(h) + " maxval " + std::to_string(maxval));
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(std::size_t(w) * std::size_t(h) * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (in.gcount() != std::streamsize(bytes.size())) {
    throw FormatError("'" + path + "' is truncated");
  }
  Image img;
  img.hw = w;
  img.rgb.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = float(bytes[i]) / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// Dataset generation and manifest I/O
// ---------------------------------------------------------------------------

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::ValSeen:
      return "val_seen";
    case Split::ValUnseen:
      return "val_unseen";
    case Split::TestSeen:
      return "test_seen";
    case Split::TestUnseen:
      return "test_unseen";
  }
  throw ValueError("bad split enum value");
}

Split split_from_name(const std::string& name) {
  for (int i = 0; i < kNumSplits; ++i) {
    Split s = Split(i);
    if (name == split_name(s)) return s;
  }
  throw FormatError("unknown split '" + name + "'");
}

bool split_is_seen(Split s) { return s != Split::ValUnseen && s != Split::TestUnseen; }

int PerPairCounts::for_split(Split s) const {
  switch (s) {
    case Split::Train:
      return train;
    case Split::ValSeen:
      return val_seen;
    case Split::ValUnseen:
      return val_unseen;
    case Split::TestSeen:
      return test_seen;
    case Split::TestUnseen:
      return test_unseen;
  }
  throw ValueError("bad split enum value");
}

static const char* kManifestHeader = "#caila-manifest v1";

void generate_dataset(const LabelSpace& ls, const RenderSpec& spec, const PerPairCounts& counts,
                      std::uint64_t seed, const std::string& dir) {
  ls.validate();
  if (counts.train < 1) throw ConfigError("generate_dataset: train count must be at least 1");
  for (int i = 0; i < kNumSplits; ++i) {
    if (counts.for_split(Split(i)) < 0) throw ConfigError("generate_dataset: negative count");
  }
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create '" + dir + "/images': " + ec.message());

  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (int si = 0; si < kNumSplits; ++si) {
    const Split split = Split(si);
    const int count = counts.for_split(split);
    const auto& pairs = split_is_seen(split) ? ls.seen : ls.unseen;
    for (PairLabel p : pairs) {
      const std::string& attr = ls.vocab.attributes[std::size_t(p.attr)];
      const std::string& obj = ls.vocab.objects[std::size_t(p.obj)];
      const int linear = p.attr * ls.vocab.num_objs() + p.obj;
      for (int k = 0; k < count; ++k) {
        Image img = render_image(attr, obj, spec,
                                 mix_seed(seed, std::uint64_t(si), std::uint64_t(linear),
                                          std::uint64_t(k)));
        std::string rel = "images/" + std::string(split_name(split)) + "_" + attr + "_" + obj +
                          "_" + std::to_string(k) + ".ppm";
        write_ppm(img, (fs::path(dir) / rel).string());
        manifest << rel << '\t' << attr << '\t' << obj << '\t' << split_name(split) << '\n';
      }
    }
  }
  {
    std::ofstream out(fs::path(dir) / "manifest.tsv", std::ios::binary);
    if (!out) throw IoError("cannot open '" + dir + "/manifest.tsv' for writing");
    out << manifest.str();
    if (!out) throw IoError("write failed for '" + dir + "/manifest.tsv'");
  }
  save_labelspace(ls, (fs::path(dir) / "labelspace.tsv").string());
}

std::vector<ManifestRow> load_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.tsv").string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw FormatError("'" + path + "': missing header '" + kManifestHeader + "'");
  }
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestRow r;
    std::string split, extra;
    if (!std::getline(ss, r.path, '\t') || !std::getline(ss, r.attr, '\t') ||
        !std::getline(ss, r.obj, '\t') || !std::getline(ss, split, '\t') ||
        std::getline(ss, extra, '\t')) {
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected path<TAB>attr<TAB>obj<TAB>split");
    }
    r.split = split_from_name(split);
    rows.push_back(std::move(r));
  }
  return rows;
}

void validate_manifest(std::span<const ManifestRow> rows, const LabelSpace& ls) {
  for (const ManifestRow& r : rows) {
    PairLabel p{ls.vocab.attr_id(r.attr), ls.vocab.obj_id(r.obj)};
    if (split_is_seen(r.split) && !ls.is_seen(p)) {
      throw ConfigError("manifest row '" + r.path + "' labels a " +
                        std::string(split_name(r.split)) + " sample with non-seen pair (" +
                        r.attr + ", " + r.obj + ")");
    }
    if (!split_is_seen(r.split) && !ls.is_unseen(p)) {
      throw ConfigError("manifest row '" + r.path + "' labels a " +
                        std::string(split_name(r.split)) + " sample with non-unseen pair (" +
                        r.attr + ", " + r.obj + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

Tokenizer::Tokenizer(const VocabSpec& vocab) {
  vocab.validate();
  auto put = [&](const std::string& w) {
    if (index_.emplace(w, int(words_.size())).second) words_.push_back(w);
  };
  put("[PAD]");
  put("[CLS]");
  put("a");
  put("photo");
  put("of");
  put("object");
  for (const std::string& w : vocab.attributes) put(w);
  for (const std::string& w : vocab.objects) put(w);
}

int Tokenizer::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw VocabError("word '" + word + "' is not in the token vocabulary");
  return it->second;
}

const std::string& Tokenizer::word_of(int id) const {
  if (id < 0 || id >= vocab_size()) throw VocabError("token id " + std::to_string(id) + " out of range");
  return words_[std::size_t(id)];
}

Tokenizer::Prompt Tokenizer::tokenize(std::span<const std::string> words, int max_len) const {
  if (int(words.size()) + 1 > max_len) {
    throw ConfigError("prompt of " + std::to_string(words.size()) +
                      " words plus [CLS] exceeds max_text_len " + std::to_string(max_len));
  }
  Prompt p;
  p.ids.reserve(std::size_t(max_len));
  p.ids.push_back(kCls);
  for (const std::string& w : words) p.ids.push_back(id_of(w));
  while (int(p.ids.size()) < max_len) p.ids.push_back(kPad);
  return p;
}

Tokenizer::Prompt Tokenizer::composition_prompt(const std::string& attr, const std::string& obj,
                                                int max_len) const {
  std::vector<std::string> words = {"a", "photo", "of", attr, obj};
  Prompt p = tokenize(words, max_len);
  p.class_slots = {3, 4};
  return p;
}

Tokenizer::Prompt Tokenizer::attribute_prompt(const std::string& attr, int max_len) const {
  std::vector<std::string> words = {"a", "photo", "of", attr, "object"};
  Prompt p = tokenize(words, max_len);
  p.class_slots = {3};
  return p;
}

Tokenizer::Prompt Tokenizer::object_prompt(const std::string& obj, int max_len) const {
  std::vector<std::string> words = {"a", "photo", "of", obj};
  Prompt p = tokenize(words, max_len);
  p.class_slots = {3};
  return p;
}

}  // namespace caila
