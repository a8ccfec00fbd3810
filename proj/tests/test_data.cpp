#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "caila/data.hpp"
#include "caila/util.hpp"

using namespace caila;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("caila_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("default vocab and id lookup") {
  VocabSpec v = default_vocab(6, 6);
  CHECK(v.num_attrs() == 6);
  CHECK(v.num_objs() == 6);
  CHECK(v.attributes[0] == "red");
  CHECK(v.objects[0] == "circle");
  CHECK(v.attr_id("striped") == 4);
  CHECK(v.obj_id("star") == 5);
  CHECK_THROWS_AS(v.attr_id("mauve"), VocabError);
  CHECK_THROWS_AS(default_vocab(0, 6), ConfigError);
  CHECK_THROWS_AS(default_vocab(6, 9), ConfigError);
  v.validate();

  VocabSpec dup;
  dup.attributes = {"red", "red"};
  dup.objects = {"circle"};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("split_compositions small case is exhaustively correct") {
  VocabSpec v = default_vocab(2, 2);
  LabelSpace ls = split_compositions(v, 0.75, 7);
  CHECK(ls.seen.size() == 3);
  CHECK(ls.unseen.size() == 1);
  ls.validate();
  std::set<PairLabel> all;
  for (PairLabel p : ls.seen) all.insert(p);
  for (PairLabel p : ls.unseen) all.insert(p);
  CHECK(all.size() == 4);
}

TEST_CASE("split_compositions is deterministic and covers primitives at 6x6") {
  VocabSpec v = default_vocab(6, 6);
  LabelSpace a = split_compositions(v, 2.0 / 3.0, 123);
  LabelSpace b = split_compositions(v, 2.0 / 3.0, 123);
  CHECK(a.seen == b.seen);
  CHECK(a.unseen == b.unseen);
  CHECK(a.seen.size() == 24);
  CHECK(a.unseen.size() == 12);
  a.validate();

  // exhaustive coverage re-check, independent of validate()
  for (int attr = 0; attr < 6; ++attr) {
    bool hit = false;
    for (PairLabel p : a.seen) hit = hit || p.attr == attr;
    CHECK(hit);
  }
  for (int obj = 0; obj < 6; ++obj) {
    bool hit = false;
    for (PairLabel p : a.seen) hit = hit || p.obj == obj;
    CHECK(hit);
  }
}

TEST_CASE("split_compositions rejects infeasible requests") {
  VocabSpec v = default_vocab(6, 6);
  CHECK_THROWS_AS(split_compositions(v, 0.999, 1), ConfigError);  // no unseen left
  CHECK_THROWS_AS(split_compositions(v, 0.05, 1), ConfigError);   // cannot cover primitives
  CHECK_THROWS_AS(split_compositions(default_vocab(1, 1), 0.5, 1), ConfigError);
}

TEST_CASE("candidates enumerate both worlds") {
  LabelSpace ls = split_compositions(default_vocab(3, 4), 0.6, 5);
  auto closed = ls.candidates(World::Closed);
  auto open = ls.candidates(World::Open);
  CHECK(closed.size() == ls.seen.size() + ls.unseen.size());
  CHECK(open.size() == 12);
  // closed world lists seen pairs first
  for (std::size_t i = 0; i < ls.seen.size(); ++i) CHECK(closed[i] == ls.seen[i]);
  // open world is the full grid in attr-major order
  CHECK(open[0] == PairLabel{0, 0});
  CHECK(open[11] == PairLabel{2, 3});
}

TEST_CASE("labelspace file round trip") {
  LabelSpace ls = split_compositions(default_vocab(4, 3), 0.7, 99);
  fs::path dir = fresh_dir("labelspace");
  std::string path = (dir / "ls.tsv").string();
  save_labelspace(ls, path);
  LabelSpace back = load_labelspace(path);
  back.validate();
  // vocabulary is canonicalized lexicographically on load; compare name sets
  std::set<std::string> attrs_in(ls.vocab.attributes.begin(), ls.vocab.attributes.end());
  std::set<std::string> attrs_out(back.vocab.attributes.begin(), back.vocab.attributes.end());
  CHECK(attrs_in == attrs_out);
  CHECK(std::is_sorted(back.vocab.attributes.begin(), back.vocab.attributes.end()));

  auto names = [](const LabelSpace& l, const std::vector<PairLabel>& v) {
    std::set<std::pair<std::string, std::string>> out;
    for (PairLabel p : v) {
      out.insert({l.vocab.attributes[std::size_t(p.attr)], l.vocab.objects[std::size_t(p.obj)]});
    }
    return out;
  };
  CHECK(names(ls, ls.seen) == names(back, back.seen));
  CHECK(names(ls, ls.unseen) == names(back, back.unseen));

  // save(load(x)) is a fixed point byte-wise
  std::string path2 = (dir / "ls2.tsv").string();
  save_labelspace(back, path2);
  LabelSpace again = load_labelspace(path2);
  std::string path3 = (dir / "ls3.tsv").string();
  save_labelspace(again, path3);
  CHECK(slurp(path2) == slurp(path3));
}

TEST_CASE("load_labelspace rejects malformed files") {
  fs::path dir = fresh_dir("labelspace_bad");
  {
    std::ofstream out(dir / "bad.tsv");
    out << "seen\tred\n";
  }
  CHECK_THROWS_AS(load_labelspace((dir / "bad.tsv").string()), FormatError);
  {
    std::ofstream out(dir / "tag.tsv");
    out << "sean\tred\tcircle\n";
  }
  CHECK_THROWS_AS(load_labelspace((dir / "tag.tsv").string()), FormatError);
  CHECK_THROWS_AS(load_labelspace((dir / "missing.tsv").string()), IoError);
  {
    // uncovered primitive: object 'square' only in an unseen pair
    std::ofstream out(dir / "cov.tsv");
    out << "seen\tred\tcircle\nunseen\tred\tsquare\n";
  }
  CHECK_THROWS_AS(load_labelspace((dir / "cov.tsv").string()), ConfigError);
}

TEST_CASE("rendering is pure and analyzable") {
  RenderSpec spec;
  spec.image_hw = 64;
  spec.noise = 0.0f;
  spec.seed = 11;

  Image a = render_image("red", "circle", spec, 42);
  Image b = render_image("red", "circle", spec, 42);
  CHECK(a.rgb == b.rgb);

  Image c = render_image("red", "square", spec, 42);
  CHECK(a.rgb != c.rgb);

  VocabSpec v = default_vocab(6, 6);
  CHECK(analyze_object(a, v) == "circle");
  CHECK(analyze_object(c, v) == "square");
  CHECK(analyze_attribute(a, v) == "red");
  CHECK(analyze_attribute(c, v) == "red");

  CHECK_THROWS_AS(render_image("mauve", "circle", spec, 1), VocabError);
  CHECK_THROWS_AS(render_image("red", "blob", spec, 1), VocabError);
}

TEST_CASE("analyzers recover every pair at zero noise") {
  RenderSpec spec;
  spec.image_hw = 64;
  spec.noise = 0.0f;
  spec.seed = 3;
  VocabSpec v = default_vocab(6, 6);
  int total = 0, correct = 0;
  for (const std::string& attr : v.attributes) {
    for (const std::string& obj : v.objects) {
      for (std::uint64_t k = 0; k < 2; ++k) {
        Image img = render_image(attr, obj, spec, mix_seed(17, k));
        ++total;
        if (analyze_object(img, v) == obj && analyze_attribute(img, v) == attr) ++correct;
      }
    }
  }
  CHECK(double(correct) / double(total) >= 0.99);
}

TEST_CASE("analyzers still work after the ppm round trip with mild noise") {
  RenderSpec spec;
  spec.image_hw = 64;
  spec.noise = 0.02f;
  spec.seed = 5;
  VocabSpec v = default_vocab(6, 6);
  fs::path dir = fresh_dir("ppm_noise");
  Image img = render_image("checkered", "star", spec, 9);
  write_ppm(img, (dir / "x.ppm").string());
  Image back = load_ppm((dir / "x.ppm").string());
  CHECK(analyze_object(back, v) == "star");
  CHECK(analyze_attribute(back, v) == "checkered");
}

TEST_CASE("ppm io round trip and error paths") {
  fs::path dir = fresh_dir("ppm");
  RenderSpec spec;
  spec.noise = 0.0f;
  Image img = render_image("blue", "ring", spec, 77);
  std::string p1 = (dir / "a.ppm").string();
  write_ppm(img, p1);
  Image back = load_ppm(p1);
  CHECK(back.hw == img.hw);
  std::string p2 = (dir / "b.ppm").string();
  write_ppm(back, p2);
  CHECK(slurp(p1) == slurp(p2));  // quantization is a fixed point

  {
    std::ofstream out(dir / "bad.ppm", std::ios::binary);
    out << "P5\n64 64\n255\n";
  }
  CHECK_THROWS_AS(load_ppm((dir / "bad.ppm").string()), FormatError);
  {
    std::string full = slurp(p1);
    std::ofstream out(dir / "trunc.ppm", std::ios::binary);
    out << full.substr(0, full.size() / 2);
  }
  CHECK_THROWS_AS(load_ppm((dir / "trunc.ppm").string()), FormatError);
  CHECK_THROWS_AS(load_ppm((dir / "missing.ppm").string()), IoError);
}

TEST_CASE("generate_dataset writes a valid, reproducible corpus") {
  LabelSpace ls = split_compositions(default_vocab(2, 2), 0.75, 4);
  RenderSpec spec;
  spec.image_hw = 32;
  spec.seed = 21;
  PerPairCounts counts;
  counts.train = 3;
  counts.val_seen = 1;
  counts.val_unseen = 1;
  counts.test_seen = 1;
  counts.test_unseen = 1;

  fs::path dir = fresh_dir("gen");
  generate_dataset(ls, spec, counts, 1234, dir.string());

  auto rows = load_manifest(dir.string());
  CHECK(rows.size() == 3 * 3 + 3 + 1 + 3 + 1);
  validate_manifest(rows, ls);
  int train_rows = 0;
  for (const ManifestRow& r : rows) {
    if (r.split == Split::Train) ++train_rows;
    Image img = load_ppm((dir / r.path).string());
    CHECK(img.hw == 32);
  }
  CHECK(train_rows == 9);

  LabelSpace reloaded = load_labelspace((dir / "labelspace.tsv").string());
  reloaded.validate();

  fs::path dir2 = fresh_dir("gen2");
  generate_dataset(ls, spec, counts, 1234, dir2.string());
  CHECK(slurp(dir / "manifest.tsv") == slurp(dir2 / "manifest.tsv"));
  CHECK(slurp(dir / "labelspace.tsv") == slurp(dir2 / "labelspace.tsv"));
  CHECK(slurp(dir / rows[0].path) == slurp(dir2 / rows[0].path));

  CHECK_THROWS_AS(load_manifest((dir / "nope").string()), IoError);
  PerPairCounts no_train;
  no_train.train = 0;
  CHECK_THROWS_AS(generate_dataset(ls, spec, no_train, 1, dir.string()), ConfigError);
}

TEST_CASE("manifest validation catches split/label mismatches") {
  LabelSpace ls = split_compositions(default_vocab(2, 2), 0.75, 4);
  PairLabel hidden = ls.unseen[0];
  ManifestRow bad;
  bad.path = "images/x.ppm";
  bad.attr = ls.vocab.attributes[std::size_t(hidden.attr)];
  bad.obj = ls.vocab.objects[std::size_t(hidden.obj)];
  bad.split = Split::Train;
  std::vector<ManifestRow> rows = {bad};
  CHECK_THROWS_AS(validate_manifest(rows, ls), ConfigError);

  bad.split = Split::TestUnseen;
  rows = {bad};
  validate_manifest(rows, ls);  // unseen pair in unseen split is fine

  PairLabel vis = ls.seen[0];
  bad.attr = ls.vocab.attributes[std::size_t(vis.attr)];
  bad.obj = ls.vocab.objects[std::size_t(vis.obj)];
  rows = {bad};
  CHECK_THROWS_AS(validate_manifest(rows, ls), ConfigError);
}

TEST_CASE("split names round trip") {
  for (int i = 0; i < kNumSplits; ++i) {
    Split s = Split(i);
    CHECK(split_from_name(split_name(s)) == s);
  }
  CHECK_THROWS_AS(split_from_name("validation"), FormatError);
  CHECK(split_is_seen(Split::Train));
  CHECK(split_is_seen(Split::ValSeen));
  CHECK_FALSE(split_is_seen(Split::ValUnseen));
  CHECK_FALSE(split_is_seen(Split::TestUnseen));
}

TEST_CASE("tokenizer prompts") {
  VocabSpec v = default_vocab(6, 6);
  Tokenizer tok(v);
  CHECK(tok.id_of("[PAD]") == Tokenizer::kPad);
  CHECK(tok.id_of("[CLS]") == Tokenizer::kCls);
  CHECK(tok.vocab_size() == 2 + 4 + 6 + 6);

  auto comp = tok.composition_prompt("red", "circle", 12);
  CHECK(int(comp.ids.size()) == 12);
  CHECK(comp.ids[0] == Tokenizer::kCls);
  CHECK(comp.ids[1] == tok.id_of("a"));
  CHECK(comp.ids[2] == tok.id_of("photo"));
  CHECK(comp.ids[3] == tok.id_of("of"));
  CHECK(comp.ids[4] == tok.id_of("red"));
  CHECK(comp.ids[5] == tok.id_of("circle"));
  for (int i = 6; i < 12; ++i) CHECK(comp.ids[std::size_t(i)] == Tokenizer::kPad);
  CHECK(comp.class_slots == std::vector<int>{3, 4});
  // 5 template words + [CLS] are the only non-pad tokens
  int non_pad = 0;
  for (int id : comp.ids) non_pad += id != Tokenizer::kPad;
  CHECK(non_pad == 6);

  auto attr = tok.attribute_prompt("striped", 12);
  CHECK(attr.ids[4] == tok.id_of("striped"));
  CHECK(attr.ids[5] == tok.id_of("object"));
  CHECK(attr.class_slots == std::vector<int>{3});

  auto obj = tok.object_prompt("ring", 12);
  CHECK(obj.ids[4] == tok.id_of("ring"));
  CHECK(obj.ids[5] == Tokenizer::kPad);
  CHECK(obj.class_slots == std::vector<int>{3});

  auto again = tok.composition_prompt("red", "circle", 12);
  CHECK(again.ids == comp.ids);

  CHECK_THROWS_WITH_AS(tok.attribute_prompt("mauve", 12),
                       doctest::Contains("mauve"), VocabError);
  CHECK_THROWS_AS(tok.composition_prompt("red", "circle", 5), ConfigError);
}
