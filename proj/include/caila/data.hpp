#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "caila/error.hpp"
#include "caila/types.hpp"

namespace caila {

/// Ordered attribute and object name lists; indices into them are the
/// primitive ids used everywhere else.
struct VocabSpec {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;

  int num_attrs() const { return int(attributes.size()); }
  int num_objs() const { return int(objects.size()); }
  int num_pairs() const { return num_attrs() * num_objs(); }

  int attr_id(const std::string& name) const;  // VocabError if unknown
  int obj_id(const std::string& name) const;

  void validate() const;  // non-empty lists, unique names
};

/// Built-in renderable vocabulary: the first `attrs` appearance names and
/// first `objs` shape names (at most 8 of each).
VocabSpec default_vocab(int attrs, int objs);

/// Seen/unseen partition of the composition space plus the vocabulary it
/// refers to. Pairs are stored sorted by (attr id, obj id).
struct LabelSpace {
  VocabSpec vocab;
  std::vector<PairLabel> seen;
  std::vector<PairLabel> unseen;

  bool is_seen(PairLabel p) const;
  bool is_unseen(PairLabel p) const;
  /// Closed world: seen pairs then unseen pairs. Open world: all of A x O in
  /// attr-major order.
  std::vector<PairLabel> candidates(World world) const;

  /// Checks disjointness, id ranges, sortedness, and that every primitive
  /// occurs in at least one seen pair.
  void validate() const;
};

/// Partitions A x O into seen/unseen deterministically. A greedy diagonal
/// first covers every primitive, then a seeded shuffle fills Y_s up to
/// round(seen_fraction * |A x O|).
LabelSpace split_compositions(const VocabSpec& vocab, double seen_fraction, std::uint64_t seed);

void save_labelspace(const LabelSpace& ls, const std::string& path);
/// Rebuilds the vocabulary from the pair lines; names are assigned ids in
/// lexicographic order so the result is independent of line order.
LabelSpace load_labelspace(const std::string& path);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct Image {
  int hw = 0;
  std::vector<float> rgb;  // hw*hw*3 row-major, values in [0, 1]

  float at(int y, int x, int c) const { return rgb[std::size_t((y * hw + x) * 3 + c)]; }
};

struct RenderSpec {
  int image_hw = 64;
  float noise = 0.02f;  // additive uniform amplitude, clamped to [0, 1]
  std::uint64_t seed = 0;
};

/// Pure function of (attr, obj, spec, sample_seed): the object name picks the
/// shape, the attribute name picks the fill pattern, the seed picks position
/// jitter, scale, and noise.
Image render_image(const std::string& attr, const std::string& obj, const RenderSpec& spec,
                   std::uint64_t sample_seed);

/// Brute-force ground-truth recovery over the renderer's discrete jitter
/// grid. Exact at zero noise; used to certify that generated datasets are
/// learnable.
std::string analyze_object(const Image& img, const VocabSpec& vocab);
std::string analyze_attribute(const Image& img, const VocabSpec& vocab);

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

enum class Split { Train, ValSeen, ValUnseen, TestSeen, TestUnseen };
constexpr int kNumSplits = 5;
const char* split_name(Split s);
Split split_from_name(const std::string& name);
bool split_is_seen(Split s);

struct ManifestRow {
  std::string path;  // relative to the dataset root
  std::string attr;
  std::string obj;
  Split split = Split::Train;
};

struct PerPairCounts {
  int train = 20;
  int val_seen = 5;
  int val_unseen = 5;
  int test_seen = 5;
  int test_unseen = 5;

  int for_split(Split s) const;
};

/// Renders every configured sample under dir/images/, writes dir/manifest.tsv
/// and dir/labelspace.tsv. Deterministic: same inputs give byte-identical
/// files.
void generate_dataset(const LabelSpace& ls, const RenderSpec& spec, const PerPairCounts& counts,
                      std::uint64_t seed, const std::string& dir);

std::vector<ManifestRow> load_manifest(const std::string& dir);
/// Enforces the split/label contract: train and *_seen rows carry seen pairs,
/// *_unseen rows carry unseen pairs, all names known.
void validate_manifest(std::span<const ManifestRow> rows, const LabelSpace& ls);

void write_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Word-level tokenizer over the prompt-template words plus every primitive
/// name. Ids: [PAD]=0, [CLS]=1, then words in registration order.
class Tokenizer {
 public:
  explicit Tokenizer(const VocabSpec& vocab);

  static constexpr int kPad = 0;
  static constexpr int kCls = 1;

  int vocab_size() const { return int(words_.size()); }
  int id_of(const std::string& word) const;  // VocabError naming the word
  const std::string& word_of(int id) const;

  struct Prompt {
    std::vector<int> ids;          // [CLS] + word ids + [PAD] fill
    std::vector<int> class_slots;  // word positions (pre-[CLS]); +1 in id space
  };

  /// [CLS]-prefixed, padded to max_len. Errors on unknown words or overflow.
  Prompt tokenize(std::span<const std::string> words, int max_len) const;

  // "a photo of <attr> <obj>" / "a photo of <attr> object" / "a photo of <obj>"
  Prompt composition_prompt(const std::string& attr, const std::string& obj, int max_len) const;
  Prompt attribute_prompt(const std::string& attr, int max_len) const;
  Prompt object_prompt(const std::string& obj, int max_len) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace caila
