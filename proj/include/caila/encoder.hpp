#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "caila/data.hpp"
#include "caila/tensor.hpp"
#include "caila/types.hpp"
#include "caila/util.hpp"

namespace caila {

enum class Activation { Gelu, Relu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Applies the configured nonlinearity elementwise.
Tensor activate(const Tensor& x, Activation a);

/// Dimensions and switches of the dual encoder. The four booleans exist for
/// ablations: with a switch off, the corresponding adapters (or the
/// three-concept mixing) are absent and that path reduces to the plain
/// backbone or to the single composition stream.
struct EncoderConfig {
  int d = 64;             // embedding width
  int heads = 4;          // attention heads
  int n_vision = 6;       // vision transformer depth
  int n_language = 4;     // language transformer depth
  int moa_layers = 2;     // trailing vision depths that mix all three concept streams
  int reduction = 4;      // adapter bottleneck divisor (hidden width d / reduction)
  int ffn_mult = 2;       // feed-forward hidden width multiplier
  int patch = 8;          // square patch edge in pixels
  int image_hw = 64;      // expected input image edge
  int max_text_len = 12;  // prompt length including [CLS] and padding
  Activation activation = Activation::Gelu;

  bool vision_adapters = true;
  bool language_adapters = true;
  bool vision_moa = true;
  bool language_moa = true;

  int ffn_width() const { return ffn_mult * d; }
  int head_dim() const { return d / heads; }
  int adapter_hidden() const { return d / reduction; }
  int patches_per_side() const { return image_hw / patch; }
  int n_vision_tokens() const { return patches_per_side() * patches_per_side() + 1; }
  /// Depths [0, moa_split()) carry per-concept stage-1 adapters; depths
  /// [moa_split(), n_vision) are the mixing blocks.
  int moa_split() const { return n_vision - moa_layers; }

  void validate() const;  // ConfigError on any bad field
};

/// One bottleneck adapter: h -> f_up(act(f_down(h))) + h. The up projection
/// and both biases start at zero, so a fresh adapter is an exact identity.
struct AdapterParams {
  Tensor w_down;  // [d x d/r]
  Tensor b_down;  // [d/r]
  Tensor w_up;    // [d/r x d]
  Tensor b_up;    // [d]

  static AdapterParams init(int d, int r, Rng& rng);
};

Tensor adapter_forward(const Tensor& h, const AdapterParams& p, Activation act);

/// Frozen pre-norm transformer block weights (shared by every concept stream
/// that passes through the block).
struct BlockWeights {
  Tensor ln1_g, ln1_b;          // attention sublayer norm
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;          // feed-forward sublayer norm
  Tensor w1, b1, w2, b2;

  static BlockWeights init(int d, int ffn, Rng& rng);
};

/// Adapters for the two insertion sites of one block.
struct AdapterPair {
  AdapterParams attn;
  AdapterParams ffn;
};

/// One depth of an encoder: a single frozen weight instance plus per-concept
/// adapters. All concept streams share `frozen` by identity.
struct ConceptBlock {
  std::shared_ptr<BlockWeights> frozen;
  std::map<ConceptKind, AdapterPair> adapters;

  bool has_adapters(ConceptKind k) const { return adapters.count(k) != 0; }
  const AdapterPair& adapters_for(ConceptKind k) const;  // ValueError if absent
};

/// Pre-norm block with the concept's adapters applied to each sublayer output
/// before its residual add. A block with no adapters at all runs plain;
/// a block that has adapters but not this concept's is a contract violation.
Tensor block_forward(const Tensor& h, const ConceptBlock& block, ConceptKind kind,
                     const EncoderConfig& cfg);

/// Mixture-of-adapters site: per-concept bottlenecks z_k = act(f_down_k(s));
/// the composition stream uses the averaged bottleneck, and the three up
/// projections (skip-free) are averaged before the single skip of s.
/// site 0 = attention output, 1 = feed-forward output.
Tensor moa_adapter_site(const Tensor& s, const ConceptBlock& block, int site,
                        const EncoderConfig& cfg);

/// Block whose two adapter sites are the mixture sites above. Requires all
/// three concepts' adapters.
Tensor vision_moa_block_forward(const Tensor& h, const ConceptBlock& block,
                                const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Every tensor of the model, reachable both as members and through a stable
/// named registry. Naming scheme:
///   vision.* / text.*   backbone (frozen after pretraining)
///   prompt.attr|obj     trainable class embedding tables
///   adapter.*           trainable bottleneck adapters
/// Copies share tensor storage; clone() is a deep copy.
class ModelParams {
 public:
  ModelParams(EncoderConfig cfg, VocabSpec vocab, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  const VocabSpec& vocab() const { return vocab_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  // vision backbone
  Tensor patch_w, patch_b;          // [patch^2*3 x d], [d]
  Tensor vis_cls, vis_pos;          // [d], [tokens x d]
  Tensor vis_lnout_g, vis_lnout_b;  // readout norm
  std::vector<ConceptBlock> vision_blocks;

  // language backbone
  Tensor tok_table;                 // [tokenizer vocab x d]
  Tensor txt_pos;                   // [max_text_len x d]
  Tensor txt_lnout_g, txt_lnout_b;
  std::vector<ConceptBlock> text_blocks;

  // trainable class prompts, one row per primitive
  Tensor prompt_attr;               // [|A| x d]
  Tensor prompt_obj;                // [|O| x d]

  // softmax temperatures of the three scoring heads
  float tau_comp = 0.01f;
  float tau_attr = 0.0005f;
  float tau_obj = 0.0005f;

  const std::vector<std::pair<std::string, Tensor>>& named() const { return named_; }
  Tensor find(const std::string& name) const;  // ValueError if absent

  /// Backbone = every tensor outside adapter.* and prompt.*.
  static bool is_backbone_name(const std::string& name);

  void set_backbone_trainable(bool on);
  void set_adapters_trainable(bool on);
  void set_prompts_trainable(bool on);

  /// Order-sensitive digest (name, shape, values) of all backbone tensors;
  /// detects any drift of the frozen partition.
  std::uint64_t backbone_hash() const;

  void zero_all_grads();

  ModelParams clone() const;
  /// Copies tensor values (not grads) from a structurally identical model.
  void copy_values_from(const ModelParams& other);

 private:
  EncoderConfig cfg_;
  VocabSpec vocab_;
  Tokenizer tokenizer_;
  std::vector<std::pair<std::string, Tensor>> named_;
};

// ---------------------------------------------------------------------------
// Encoding pipelines
// ---------------------------------------------------------------------------

/// Flattened patch pixels, one row per patch in row-major grid order; within
/// a patch, pixels row-major with interleaved rgb. ShapeError on resolution
/// mismatch.
Tensor patch_matrix(const Image& img, const EncoderConfig& cfg);

/// [CLS; projected patches] + positional table: the [tokens x d] input state.
Tensor vision_tokens(const Image& img, const ModelParams& p);

/// Stage-1 vision stack (depths before the mixing blocks) under one
/// primitive concept's adapters.
Tensor vision_stage1(const Image& img, const ModelParams& p, ConceptKind kind);

/// Trailing vision depths under one concept's adapters, then readout
/// (ln + L2-normalized [CLS] row).
Tensor vision_primitive_tail(const Tensor& h, const ModelParams& p, ConceptKind kind);

/// Trailing mixture blocks, then readout. Starts from a (possibly fused)
/// stage-1 token state.
Tensor vision_moa_tail(const Tensor& h, const ModelParams& p);

/// Attribute or object image embedding: stage-1 under that concept, then the
/// trailing depths reusing the same concept's adapters. Unit norm.
Tensor encode_vision_primitive(const Image& img, ConceptKind kind, const ModelParams& p);

/// Composition image embedding: token-wise mean of the attribute and object
/// stage-1 states, pushed through the mixture blocks. With vision_moa off,
/// a single composition-adapter stream; with vision_adapters off, the plain
/// backbone. Unit norm.
Tensor encode_vision_composition(const Image& img, const ModelParams& p);

/// Adapter-free reference pass (also the pretraining path).
Tensor encode_vision_backbone(const Image& img, const ModelParams& p);

/// Prompt embeddings: "a photo of <attr> <obj>" under composition adapters,
/// "a photo of <attr> object" under attribute adapters, "a photo of <obj>"
/// under object adapters. Class slots read the trainable prompt tables; all
/// other positions read the frozen token table. Unit norm.
Tensor encode_text_composition(PairLabel pair, const ModelParams& p);
Tensor encode_text_attribute(int attr_id, const ModelParams& p);
Tensor encode_text_object(int obj_id, const ModelParams& p);

/// Adapter-free text reference for the given template (pair.obj is ignored
/// for Attribute, pair.attr for Object).
Tensor encode_text_backbone(ConceptKind kind, PairLabel pair, const ModelParams& p);

/// Language-side mixture: renormalized mean of the three concept embeddings
/// for (a, o); just the composition embedding when language_moa is off.
Tensor text_mixture(PairLabel pair, const ModelParams& p);

/// Scalar scores (rank-0 tensors, differentiable).
Tensor compatibility(const Image& img, PairLabel pair, const ModelParams& p);
Tensor primitive_compatibility(const Image& img, ConceptKind kind, int id, const ModelParams& p);

}  // namespace caila
