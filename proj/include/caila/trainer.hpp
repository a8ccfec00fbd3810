#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "caila/data.hpp"
#include "caila/encoder.hpp"
#include "caila/eval.hpp"
#include "caila/tensor.hpp"
#include "caila/types.hpp"

namespace caila {

struct TrainConfig {
  double lr = 2e-4;  // the reference rate is 2e-5; a tiny random backbone trains 10x hotter
  double weight_decay = 5e-5;
  bool decoupled_decay = true;  // false folds the decay into the gradient instead
  double tau_comp = 0.01;
  double tau_attr = 0.0005;
  double tau_obj = 0.0005;
  int batch = 32;
  int epochs = 8;
  int stage0_epochs = 2;
  double shift_ratio = 0.10;  // fraction of each batch replaced by fused donor features
  std::uint64_t seed = 0;

  /// Temperatures > 0, shift_ratio in [0,1), positive batch, non-negative
  /// epochs/lr/decay. ConfigError otherwise.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Concept shift
// ---------------------------------------------------------------------------

/// Stage-1 token states of one image under the two primitive adapter sets.
struct Stage1Entry {
  Tensor h_attr;
  Tensor h_obj;
  PairLabel label;
};

/// Donor-fused token state standing in for an image: the token-wise mean of
/// one sample's attribute state and another's object state, labeled with the
/// synthesized (donor-attr, donor-obj) pair. The label is always seen.
struct ShiftedFeature {
  Tensor fused;
  PairLabel label;
};

/// One batch slot after concept shift: the original per-concept states, or a
/// fused donor feature that has no raw image (and thus no primitive loss
/// terms) behind it.
struct BatchSlot {
  bool shifted = false;
  Stage1Entry original;    // valid when !shifted
  ShiftedFeature feature;  // valid when shifted
  PairLabel label() const { return shifted ? feature.label : original.label; }
};

struct ShiftResult {
  std::vector<BatchSlot> slots;
  int shifted = 0;
  int skipped = 0;  // slots whose donor search exhausted its retries
};

Stage1Entry stage1_features(const Image& img, PairLabel label, const ModelParams& p);

/// Replaces floor(ratio * batch) randomly chosen slots with fused features
/// from uniformly drawn donor pairs (i for the attribute state, j != i for
/// the object state) whose synthesized label is seen. Up to 20 rejection
/// retries per slot, then the slot keeps its original entry and is counted
/// as skipped. Deterministic in (batch order, seed).
ShiftResult concept_shift(std::span<const Stage1Entry> batch, double ratio, const LabelSpace& ls,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Final unit embeddings of one batch entry. Shifted entries carry no
/// primitive embeddings (their tensors stay undefined).
struct BatchFeature {
  Tensor f_comp;
  Tensor f_attr;
  Tensor f_obj;
  PairLabel label;
  bool shifted = false;
};

/// Three-term cross-entropy core. Composition logits are scores against
/// every seen pair at tau_comp; attribute and object logits cover the full
/// primitive vocabularies at their own temperatures. Each term is a mean
/// over the rows that produce it: all entries for the composition term, the
/// unshifted entries for the primitive terms. ValueError on labels outside
/// the seen set.
Tensor feature_loss(std::span<const BatchFeature> batch, const ModelParams& p,
                    const LabelSpace& ls, const TrainConfig& cfg);

/// Loss over shifted slots in the fused vision pipeline: the composition
/// stream runs the mixing tail on average(h_attr, h_obj) (or the donor-fused
/// state), the primitive streams run their concept tails.
Tensor fused_loss(std::span<const BatchSlot> batch, const ModelParams& p, const LabelSpace& ls,
                  const TrainConfig& cfg);

struct ShiftStats {
  int shifted = 0;
  int skipped = 0;
  bool disabled = false;  // architecture has no fused pipeline to inject into
};

/// The full training-step loss: stage-1 features, concept shift, fused
/// pipeline, three-term loss. Architectures without the fused vision
/// pipeline (adapter or mixing ablations) fall back to the whole-image
/// encoders and do not shift.
Tensor caila_loss(std::span<const EvalSample> batch, const ModelParams& p, const LabelSpace& ls,
                  const TrainConfig& cfg, std::uint64_t shift_seed, ShiftStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Adam moments per trainable tensor, keyed by registry name and created on
/// first touch, so the trainable set may change between stages.
struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> slots;
  long step = 0;
};

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected) over
/// every tensor that requires grad; frozen tensors are untouched. Weight
/// decay is decoupled (applied to the weights directly) unless the config
/// folds it into the gradient. TrainError naming the tensor on non-finite
/// gradients.
void adam_step(ModelParams& p, AdamState& state, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training stages
// ---------------------------------------------------------------------------

/// Composition-term pretraining through the adapter-free paths — exactly the
/// adapter paths at identity initialization, minus their dead compute.
/// Trains backbone, embeddings, and prompt tables; adapters sit out. The
/// backbone is frozen afterwards (even with 0 epochs) and its content hash
/// returned. TrainError on divergence.
std::uint64_t stage0_pretrain(ModelParams& p, std::span<const EvalSample> train,
                              const LabelSpace& ls, const TrainConfig& cfg,
                              std::ostream* log = nullptr);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;        // sample-weighted mean training loss
  double val_seen = 0;    // best seen accuracy over the validation bias sweep
  double val_unseen = 0;  // best unseen accuracy likewise
  double val_auc = 0;
};

struct TrainResult {
  ModelParams model;  // weights of the best-val-AUC epoch (initial weights if 0 epochs)
  std::vector<EpochMetrics> log;
  int best_epoch = -1;
  std::uint64_t backbone_hash = 0;
  int shifted = 0;  // cumulative concept-shift counts over the run
  int skipped = 0;
};

/// In-memory dataset: labeled images per split.
struct LoadedData {
  LabelSpace labels;
  std::vector<EvalSample> train;
  std::vector<EvalSample> val_seen, val_unseen;
  std::vector<EvalSample> test_seen, test_unseen;
};

/// Reads labelspace.tsv, manifest.tsv, and every image under `dir`.
LoadedData load_dataset(const std::string& dir);

/// Stage-0 pretraining, then adapter+prompt training with per-epoch
/// validation (closed world) and best-AUC model selection. Deterministic for
/// a fixed config.
TrainResult train(const LoadedData& data, const EncoderConfig& enc, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

/// CSV metrics log: header then one `epoch,loss,val_seen,val_unseen,val_auc`
/// line per epoch.
void save_metrics(std::span<const EpochMetrics> log, const std::string& path);

}  // namespace caila
