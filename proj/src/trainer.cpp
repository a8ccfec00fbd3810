#include "caila/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "caila/error.hpp"
#include "caila/util.hpp"

namespace caila {

namespace {

std::string pair_str(PairLabel p) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "(a=%d, o=%d)", p.attr, p.obj);
  return buf;
}

std::unordered_map<PairLabel, int, PairLabelHash> seen_index(const LabelSpace& ls) {
  std::unordered_map<PairLabel, int, PairLabelHash> idx;
  for (int j = 0; j < int(ls.seen.size()); ++j) idx.emplace(ls.seen[std::size_t(j)], j);
  return idx;
}

/// Stacked text embeddings over every seen pair under the given encoder.
template <class EncodeFn>
Tensor stacked_rows(int n, EncodeFn&& enc) {
  std::vector<Tensor> rows;
  rows.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) rows.push_back(enc(i));
  return stack_rows(rows);
}

Tensor cross_entropy_block(std::span<const Tensor> feats, const Tensor& table,
                           std::span<const int> targets, double tau) {
  Tensor logits = matmul(stack_rows(feats), transpose(table));
  return softmax_cross_entropy(logits, targets, float(tau));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(tau_comp > 0) || !(tau_attr > 0) || !(tau_obj > 0))
    throw ConfigError("train config: temperatures must be positive");
  if (!(shift_ratio >= 0) || shift_ratio >= 1)
    throw ConfigError("train config: shift_ratio must lie in [0, 1)");
  if (batch < 1) throw ConfigError("train config: batch must be at least 1");
  if (epochs < 0 || stage0_epochs < 0) throw ConfigError("train config: epoch counts must be >= 0");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be finite and >= 0");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
    throw ConfigError("train config: weight_decay must be finite and >= 0");
}

// ---------------------------------------------------------------------------
// Concept shift
// ---------------------------------------------------------------------------

Stage1Entry stage1_features(const Image& img, PairLabel label, const ModelParams& p) {
  return {vision_stage1(img, p, ConceptKind::Attribute), vision_stage1(img, p, ConceptKind::Object),
          label};
}

ShiftResult concept_shift(std::span<const Stage1Entry> batch, double ratio, const LabelSpace& ls,
                          std::uint64_t seed) {
  if (!(ratio >= 0) || ratio >= 1) throw ValueError("concept_shift: ratio must lie in [0, 1)");
  const int n = int(batch.size());
  ShiftResult out;
  out.slots.reserve(std::size_t(n));
  for (const Stage1Entry& e : batch) out.slots.push_back({false, e, {}});

  const int want = int(ratio * n);
  if (want == 0) return out;

  Rng rng(mix_seed(seed, 0x5b1f7ca11aULL));
  // Victim slots: the first `want` entries of a partially shuffled index list.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  for (int k = 0; k < want; ++k) {
    const int j = k + rng.uniform_int(n - k);
    std::swap(order[std::size_t(k)], order[std::size_t(j)]);
  }

  constexpr int kRetries = 20;
  for (int k = 0; k < want; ++k) {
    const int slot = order[std::size_t(k)];
    bool placed = false;
    for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
      const int i = rng.uniform_int(n);
      const int j = rng.uniform_int(n);
      if (j == i) continue;
      const PairLabel synth{batch[std::size_t(i)].label.attr, batch[std::size_t(j)].label.obj};
      if (!ls.is_seen(synth)) continue;
      Tensor fused = average({batch[std::size_t(i)].h_attr, batch[std::size_t(j)].h_obj});
      out.slots[std::size_t(slot)] = {true, {}, {std::move(fused), synth}};
      ++out.shifted;
      placed = true;
    }
    if (!placed) ++out.skipped;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

Tensor feature_loss(std::span<const BatchFeature> batch, const ModelParams& p,
                    const LabelSpace& ls, const TrainConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw ValueError("feature_loss: empty batch");
  const auto idx = seen_index(ls);

  std::vector<Tensor> f_comp;
  std::vector<int> t_comp;
  std::vector<Tensor> f_attr, f_obj;
  std::vector<int> t_attr, t_obj;
  for (const BatchFeature& e : batch) {
    auto it = idx.find(e.label);
    if (it == idx.end())
      throw ValueError("feature_loss: label " + pair_str(e.label) + " is not a seen pair");
    f_comp.push_back(e.f_comp);
    t_comp.push_back(it->second);
    if (e.shifted) continue;
    f_attr.push_back(e.f_attr);
    t_attr.push_back(e.label.attr);
    f_obj.push_back(e.f_obj);
    t_obj.push_back(e.label.obj);
  }

  Tensor g_comp = stacked_rows(int(ls.seen.size()),
                               [&](int j) { return text_mixture(ls.seen[std::size_t(j)], p); });
  Tensor loss = cross_entropy_block(f_comp, g_comp, t_comp, cfg.tau_comp);

  // Shifted entries have no image behind them, so only unshifted rows carry
  // the primitive terms; each term averages over its own rows.
  if (!f_attr.empty()) {
    Tensor g_attr = stacked_rows(ls.vocab.num_attrs(),
                                 [&](int a) { return encode_text_attribute(a, p); });
    Tensor g_obj =
        stacked_rows(ls.vocab.num_objs(), [&](int o) { return encode_text_object(o, p); });
    loss = add(loss, cross_entropy_block(f_attr, g_attr, t_attr, cfg.tau_attr));
    loss = add(loss, cross_entropy_block(f_obj, g_obj, t_obj, cfg.tau_obj));
  }
  return loss;
}

Tensor fused_loss(std::span<const BatchSlot> batch, const ModelParams& p, const LabelSpace& ls,
                  const TrainConfig& cfg) {
  std::vector<BatchFeature> feats;
  feats.reserve(batch.size());
  for (const BatchSlot& s : batch) {
    BatchFeature f;
    f.label = s.label();
    f.shifted = s.shifted;
    if (s.shifted) {
      f.f_comp = vision_moa_tail(s.feature.fused, p);
    } else {
      f.f_comp = vision_moa_tail(average({s.original.h_attr, s.original.h_obj}), p);
      f.f_attr = vision_primitive_tail(s.original.h_attr, p, ConceptKind::Attribute);
      f.f_obj = vision_primitive_tail(s.original.h_obj, p, ConceptKind::Object);
    }
    feats.push_back(std::move(f));
  }
  return feature_loss(feats, p, ls, cfg);
}

Tensor caila_loss(std::span<const EvalSample> batch, const ModelParams& p, const LabelSpace& ls,
                  const TrainConfig& cfg, std::uint64_t shift_seed, ShiftStats* stats) {
  cfg.validate();
  if (batch.empty()) throw ValueError("caila_loss: empty batch");
  const EncoderConfig& enc = p.config();

  if (enc.vision_adapters && enc.vision_moa) {
    std::vector<Stage1Entry> s1;
    s1.reserve(batch.size());
    for (const EvalSample& s : batch) s1.push_back(stage1_features(s.image, s.label, p));
    ShiftResult shift = concept_shift(s1, cfg.shift_ratio, ls, shift_seed);
    if (stats) *stats = {shift.shifted, shift.skipped, false};
    return fused_loss(shift.slots, p, ls, cfg);
  }

  // Ablated vision pipelines have no stage-1 states to fuse: encode whole
  // images and train without concept shift.
  if (stats) *stats = {0, 0, cfg.shift_ratio > 0};
  std::vector<BatchFeature> feats;
  feats.reserve(batch.size());
  for (const EvalSample& s : batch) {
    BatchFeature f;
    f.label = s.label;
    f.f_comp = encode_vision_composition(s.image, p);
    f.f_attr = encode_vision_primitive(s.image, ConceptKind::Attribute, p);
    f.f_obj = encode_vision_primitive(s.image, ConceptKind::Object, p);
    feats.push_back(std::move(f));
  }
  return feature_loss(feats, p, ls, cfg);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

void adam_step(ModelParams& p, AdamState& state, const TrainConfig& cfg) {
  cfg.validate();
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, double(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, double(state.step));

  for (const auto& [name, handle] : p.named()) {
    Tensor t = handle;
    if (!t.requires_grad()) continue;
    auto w = t.data();
    auto g = t.grad();
    AdamState::Moments& mo = state.slots[name];
    if (mo.m.size() != w.size()) {
      mo.m.assign(w.size(), 0.0);
      mo.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g[i];
      if (!std::isfinite(gi))
        throw TrainError("non-finite gradient in '" + name + "'; lower the learning rate");
      if (!cfg.decoupled_decay) gi += cfg.weight_decay * double(w[i]);
      mo.m[i] = kBeta1 * mo.m[i] + (1.0 - kBeta1) * gi;
      mo.v[i] = kBeta2 * mo.v[i] + (1.0 - kBeta2) * gi * gi;
      double wi = double(w[i]) - cfg.lr * (mo.m[i] / bc1) / (std::sqrt(mo.v[i] / bc2) + kEps);
      if (cfg.decoupled_decay) wi -= cfg.lr * cfg.weight_decay * double(w[i]);
      w[i] = float(wi);
    }
  }
}

// ---------------------------------------------------------------------------
// Training stages
// ---------------------------------------------------------------------------

namespace {

/// Composition cross-entropy through the adapter-free encoders.
Tensor backbone_loss(std::span<const EvalSample> batch, const ModelParams& p, const LabelSpace& ls,
                     const TrainConfig& cfg) {
  const auto idx = seen_index(ls);
  std::vector<Tensor> feats;
  std::vector<int> targets;
  for (const EvalSample& s : batch) {
    auto it = idx.find(s.label);
    if (it == idx.end())
      throw ValueError("stage-0: label " + pair_str(s.label) + " is not a seen pair");
    feats.push_back(encode_vision_backbone(s.image, p));
    targets.push_back(it->second);
  }
  Tensor table = stacked_rows(int(ls.seen.size()), [&](int j) {
    return encode_text_backbone(ConceptKind::Composition, ls.seen[std::size_t(j)], p);
  });
  return cross_entropy_block(feats, table, targets, cfg.tau_comp);
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(order[std::size_t(i)], order[std::size_t(j)]);
  }
  return order;
}

double finite_loss_value(const Tensor& loss, const char* stage) {
  const double v = double(loss.item());
  if (!std::isfinite(v))
    throw TrainError(std::string(stage) + " loss diverged (non-finite); lower the learning rate");
  return v;
}

}  // namespace

std::uint64_t stage0_pretrain(ModelParams& p, std::span<const EvalSample> train,
                              const LabelSpace& ls, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (train.empty()) throw ValueError("stage-0: empty training set");

  p.set_adapters_trainable(false);
  if (cfg.stage0_epochs > 0) {
    AdamState opt;
    Rng rng(mix_seed(cfg.seed, 0x57a6e000ULL));
    const int n = int(train.size());
    for (int epoch = 0; epoch < cfg.stage0_epochs; ++epoch) {
      const std::vector<int> order = shuffled_indices(n, rng);
      double loss_sum = 0;
      for (int start = 0; start < n; start += cfg.batch) {
        const int len = std::min(cfg.batch, n - start);
        std::vector<EvalSample> chunk;
        chunk.reserve(std::size_t(len));
        for (int k = 0; k < len; ++k) chunk.push_back(train[std::size_t(order[std::size_t(start + k)])]);
        p.zero_all_grads();
        Tape tape;
        Tensor loss = backbone_loss(chunk, p, ls, cfg);
        loss_sum += finite_loss_value(loss, "stage-0") * len;
        tape.backward(loss);
        adam_step(p, opt, cfg);
      }
      if (log) *log << "stage0 epoch " << epoch << ": loss " << loss_sum / n << "\n";
    }
  }
  p.set_backbone_trainable(false);
  p.set_adapters_trainable(true);
  return p.backbone_hash();
}

LoadedData load_dataset(const std::string& dir) {
  LoadedData out{load_labelspace(dir + "/labelspace.tsv"), {}, {}, {}, {}, {}};
  out.labels.validate();
  const std::vector<ManifestRow> rows = load_manifest(dir);
  validate_manifest(rows, out.labels);
  for (const ManifestRow& r : rows) {
    EvalSample s{load_ppm(dir + "/" + r.path),
                 {out.labels.vocab.attr_id(r.attr), out.labels.vocab.obj_id(r.obj)}};
    switch (r.split) {
      case Split::Train: out.train.push_back(std::move(s)); break;
      case Split::ValSeen: out.val_seen.push_back(std::move(s)); break;
      case Split::ValUnseen: out.val_unseen.push_back(std::move(s)); break;
      case Split::TestSeen: out.test_seen.push_back(std::move(s)); break;
      case Split::TestUnseen: out.test_unseen.push_back(std::move(s)); break;
    }
  }
  return out;
}

TrainResult train(const LoadedData& data, const EncoderConfig& enc, const TrainConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  enc.validate();
  data.labels.validate();
  if (data.train.empty()) throw ValueError("train: empty training split");
  if (data.val_seen.empty() || data.val_unseen.empty())
    throw ValueError("train: validation needs both seen and unseen samples");

  ModelParams model(enc, data.labels.vocab, cfg.seed);
  const std::uint64_t bb_hash = stage0_pretrain(model, data.train, data.labels, cfg, log);

  std::vector<EvalSample> val = data.val_seen;
  val.insert(val.end(), data.val_unseen.begin(), data.val_unseen.end());

  const bool can_shift = enc.vision_adapters && enc.vision_moa;
  if (!can_shift && cfg.shift_ratio > 0 && log)
    *log << "concept shift disabled: the fused vision pipeline is ablated\n";

  AdamState opt;
  Rng rng(mix_seed(cfg.seed, 0x0dde5ULL));
  ModelParams best = model.clone();
  int best_epoch = -1;
  double best_auc = -1;
  std::vector<EpochMetrics> metrics;
  int total_shifted = 0, total_skipped = 0;
  const int n = int(data.train.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(n, rng);
    double loss_sum = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int len = std::min(cfg.batch, n - start);
      std::vector<EvalSample> chunk;
      chunk.reserve(std::size_t(len));
      for (int k = 0; k < len; ++k)
        chunk.push_back(data.train[std::size_t(order[std::size_t(start + k)])]);
      model.zero_all_grads();
      Tape tape;
      ShiftStats st;
      Tensor loss = caila_loss(chunk, model, data.labels, cfg,
                               mix_seed(cfg.seed, 0x5b1f7, std::uint64_t(epoch), std::uint64_t(start)),
                               &st);
      loss_sum += finite_loss_value(loss, "training") * len;
      tape.backward(loss);
      adam_step(model, opt, cfg);
      total_shifted += st.shifted;
      total_skipped += st.skipped;
    }

    const ScoreMatrix vm = score_all(model, val, data.labels, World::Closed);
    const EvalReport rep = evaluate(vm);
    EpochMetrics em{epoch, loss_sum / n, rep.best_seen, rep.best_unseen, rep.auc};
    metrics.push_back(em);
    if (log)
      *log << "epoch " << epoch << ": loss " << em.loss << ", val seen "
           << format_percent(em.val_seen) << "%, unseen " << format_percent(em.val_unseen)
           << "%, auc " << em.val_auc << "\n";
    if (rep.auc > best_auc) {
      best_auc = rep.auc;
      best = model.clone();
      best_epoch = epoch;
    }
  }

  return TrainResult{std::move(best),  std::move(metrics), best_epoch,
                     bb_hash,          total_shifted,      total_skipped};
}

void save_metrics(std::span<const EpochMetrics> log, const std::string& path) {
  std::ostringstream os;
  os << "epoch,loss,val_seen,val_unseen,val_auc\n";
  char buf[160];
  for (const EpochMetrics& m : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.loss, m.val_seen,
                  m.val_unseen, m.val_auc);
    os << buf;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << os.str();
  if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace caila
