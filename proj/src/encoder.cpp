#include "caila/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

namespace caila {

const char* activation_name(Activation a) {
  return a == Activation::Gelu ? "gelu" : "relu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "' (expected gelu or relu)");
}

Tensor activate(const Tensor& x, Activation a) {
  return a == Activation::Gelu ? gelu(x) : relu(x);
}

void EncoderConfig::validate() const {
  if (d < 2) throw ConfigError("embedding width d must be at least 2, got " + std::to_string(d));
  if (heads < 1) throw ConfigError("heads must be positive, got " + std::to_string(heads));
  if (d % heads != 0)
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide d (" + std::to_string(d) + ")");
  if (reduction < 1)
    throw ConfigError("reduction must be positive, got " + std::to_string(reduction));
  if (d % reduction != 0)
    throw ConfigError("reduction (" + std::to_string(reduction) + ") must divide d (" +
                      std::to_string(d) + ")");
  if (ffn_mult < 1)
    throw ConfigError("ffn_mult must be positive, got " + std::to_string(ffn_mult));
  if (n_vision < 2)
    throw ConfigError("n_vision must be at least 2, got " + std::to_string(n_vision));
  if (n_language < 1)
    throw ConfigError("n_language must be positive, got " + std::to_string(n_language));
  if (moa_layers < 1 || moa_layers >= n_vision)
    throw ConfigError("moa_layers must satisfy 1 <= moa_layers < n_vision, got " +
                      std::to_string(moa_layers) + " with n_vision " + std::to_string(n_vision));
  if (patch < 1) throw ConfigError("patch must be positive, got " + std::to_string(patch));
  if (image_hw < patch || image_hw % patch != 0)
    throw ConfigError("patch (" + std::to_string(patch) + ") must divide image_hw (" +
                      std::to_string(image_hw) + ")");
  if (max_text_len < 6)
    throw ConfigError("max_text_len must be at least 6 ([CLS] + longest template), got " +
                      std::to_string(max_text_len));
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace {

Tensor rand_uniform(Shape shape, double bound, Rng& rng) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = float(rng.uniform(-bound, bound));
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor rand_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = float(rng.normal() * stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor param_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0f, true); }

Tensor param_zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

constexpr double kEmbedStd = 0.02;  // embedding-table init scale

}  // namespace

AdapterParams AdapterParams::init(int d, int r, Rng& rng) {
  const int hidden = d / r;
  AdapterParams p;
  p.w_down = rand_uniform({d, hidden}, 1.0 / std::sqrt(double(d)), rng);
  p.b_down = param_zeros({hidden});
  // Zero up-projection and biases make a fresh adapter an exact identity.
  p.w_up = param_zeros({hidden, d});
  p.b_up = param_zeros({d});
  return p;
}

BlockWeights BlockWeights::init(int d, int ffn, Rng& rng) {
  const double bd = 1.0 / std::sqrt(double(d));
  const double bf = 1.0 / std::sqrt(double(ffn));
  BlockWeights w;
  w.ln1_g = param_ones({d});
  w.ln1_b = param_zeros({d});
  w.wq = rand_uniform({d, d}, bd, rng);
  w.bq = param_zeros({d});
  w.wk = rand_uniform({d, d}, bd, rng);
  w.bk = param_zeros({d});
  w.wv = rand_uniform({d, d}, bd, rng);
  w.bv = param_zeros({d});
  w.wo = rand_uniform({d, d}, bd, rng);
  w.bo = param_zeros({d});
  w.ln2_g = param_ones({d});
  w.ln2_b = param_zeros({d});
  w.w1 = rand_uniform({d, ffn}, bd, rng);
  w.b1 = param_zeros({ffn});
  w.w2 = rand_uniform({ffn, d}, bf, rng);
  w.b2 = param_zeros({d});
  return w;
}

const AdapterPair& ConceptBlock::adapters_for(ConceptKind k) const {
  auto it = adapters.find(k);
  if (it == adapters.end())
    throw ValueError(std::string("block has no adapters for concept '") + concept_name(k) + "'");
  return it->second;
}

ModelParams::ModelParams(EncoderConfig cfg, VocabSpec vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), tokenizer_(vocab_) {
  cfg_.validate();
  vocab_.validate();
  Rng rng(mix_seed(seed, 0xCA11AEC5ULL));
  const int d = cfg_.d;
  const int patch_dim = cfg_.patch * cfg_.patch * 3;

  auto reg = [&](std::string name, const Tensor& t) { named_.emplace_back(std::move(name), t); };
  auto reg_block = [&](const std::string& prefix, const BlockWeights& b) {
    reg(prefix + ".ln1.g", b.ln1_g);
    reg(prefix + ".ln1.b", b.ln1_b);
    reg(prefix + ".attn.wq", b.wq);
    reg(prefix + ".attn.bq", b.bq);
    reg(prefix + ".attn.wk", b.wk);
    reg(prefix + ".attn.bk", b.bk);
    reg(prefix + ".attn.wv", b.wv);
    reg(prefix + ".attn.bv", b.bv);
    reg(prefix + ".attn.wo", b.wo);
    reg(prefix + ".attn.bo", b.bo);
    reg(prefix + ".ln2.g", b.ln2_g);
    reg(prefix + ".ln2.b", b.ln2_b);
    reg(prefix + ".ffn.w1", b.w1);
    reg(prefix + ".ffn.b1", b.b1);
    reg(prefix + ".ffn.w2", b.w2);
    reg(prefix + ".ffn.b2", b.b2);
  };

  // Vision backbone.
  patch_w = rand_uniform({patch_dim, d}, 1.0 / std::sqrt(double(patch_dim)), rng);
  patch_b = param_zeros({d});
  reg("vision.patch_proj.w", patch_w);
  reg("vision.patch_proj.b", patch_b);
  vis_cls = rand_normal({d}, kEmbedStd, rng);
  vis_pos = rand_normal({cfg_.n_vision_tokens(), d}, kEmbedStd, rng);
  reg("vision.cls", vis_cls);
  reg("vision.pos", vis_pos);
  vision_blocks.resize(std::size_t(cfg_.n_vision));
  for (int l = 0; l < cfg_.n_vision; ++l) {
    vision_blocks[std::size_t(l)].frozen =
        std::make_shared<BlockWeights>(BlockWeights::init(d, cfg_.ffn_width(), rng));
    reg_block("vision.block" + std::to_string(l), *vision_blocks[std::size_t(l)].frozen);
  }
  vis_lnout_g = param_ones({d});
  vis_lnout_b = param_zeros({d});
  reg("vision.ln_out.g", vis_lnout_g);
  reg("vision.ln_out.b", vis_lnout_b);

  // Language backbone.
  tok_table = rand_normal({tokenizer_.vocab_size(), d}, kEmbedStd, rng);
  txt_pos = rand_normal({cfg_.max_text_len, d}, kEmbedStd, rng);
  reg("text.tok", tok_table);
  reg("text.pos", txt_pos);
  text_blocks.resize(std::size_t(cfg_.n_language));
  for (int l = 0; l < cfg_.n_language; ++l) {
    text_blocks[std::size_t(l)].frozen =
        std::make_shared<BlockWeights>(BlockWeights::init(d, cfg_.ffn_width(), rng));
    reg_block("text.block" + std::to_string(l), *text_blocks[std::size_t(l)].frozen);
  }
  txt_lnout_g = param_ones({d});
  txt_lnout_b = param_zeros({d});
  reg("text.ln_out.g", txt_lnout_g);
  reg("text.ln_out.b", txt_lnout_b);

  // Class prompts start as copies of the primitive word embeddings and then
  // train freely.
  auto copy_rows = [&](const std::vector<std::string>& names) {
    std::vector<float> v;
    v.reserve(names.size() * std::size_t(d));
    for (const auto& n : names) {
      const int id = tokenizer_.id_of(n);
      auto row = tok_table.data().subspan(std::size_t(id) * std::size_t(d), std::size_t(d));
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor::from_data({int(names.size()), d}, std::move(v), true);
  };
  prompt_attr = copy_rows(vocab_.attributes);
  prompt_obj = copy_rows(vocab_.objects);
  reg("prompt.attr", prompt_attr);
  reg("prompt.obj", prompt_obj);

  // Adapters. Stage-1 vision depths carry the two primitive concepts; the
  // mixing depths (or every depth when mixing is off) carry all three.
  auto reg_adapter = [&](const std::string& base, const AdapterParams& a) {
    reg(base + ".down.w", a.w_down);
    reg(base + ".down.b", a.b_down);
    reg(base + ".up.w", a.w_up);
    reg(base + ".up.b", a.b_up);
  };
  auto add_adapters = [&](std::vector<ConceptBlock>& blocks, const char* side, int l,
                          std::initializer_list<ConceptKind> kinds) {
    for (ConceptKind k : kinds) {
      AdapterPair pair{AdapterParams::init(d, cfg_.reduction, rng),
                       AdapterParams::init(d, cfg_.reduction, rng)};
      const std::string base = std::string("adapter.") + side + ".block" + std::to_string(l) +
                               "." + concept_name(k);
      reg_adapter(base + ".attn", pair.attn);
      reg_adapter(base + ".ffn", pair.ffn);
      blocks[std::size_t(l)].adapters.emplace(k, std::move(pair));
    }
  };
  if (cfg_.vision_adapters) {
    for (int l = 0; l < cfg_.n_vision; ++l) {
      if (cfg_.vision_moa && l < cfg_.moa_split())
        add_adapters(vision_blocks, "vision", l, {ConceptKind::Attribute, ConceptKind::Object});
      else
        add_adapters(vision_blocks, "vision", l,
                     {ConceptKind::Attribute, ConceptKind::Object, ConceptKind::Composition});
    }
  }
  if (cfg_.language_adapters) {
    for (int l = 0; l < cfg_.n_language; ++l)
      add_adapters(text_blocks, "text", l,
                   {ConceptKind::Attribute, ConceptKind::Object, ConceptKind::Composition});
  }
}

Tensor ModelParams::find(const std::string& name) const {
  for (const auto& [n, t] : named_)
    if (n == name) return t;
  throw ValueError("no tensor named '" + name + "'");
}

bool ModelParams::is_backbone_name(const std::string& name) {
  return name.rfind("adapter.", 0) != 0 && name.rfind("prompt.", 0) != 0;
}

void ModelParams::set_backbone_trainable(bool on) {
  for (auto& [name, t] : named_)
    if (is_backbone_name(name)) t.set_requires_grad(on);
}

void ModelParams::set_adapters_trainable(bool on) {
  for (auto& [name, t] : named_)
    if (name.rfind("adapter.", 0) == 0) t.set_requires_grad(on);
}

void ModelParams::set_prompts_trainable(bool on) {
  for (auto& [name, t] : named_)
    if (name.rfind("prompt.", 0) == 0) t.set_requires_grad(on);
}

std::uint64_t ModelParams::backbone_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_) {
    if (!is_backbone_name(name)) continue;
    h = fnv1a64(name.data(), name.size(), h);
    const std::int32_t rank = t.rank();
    h = fnv1a64(&rank, sizeof rank, h);
    for (int dim : t.shape()) {
      const std::int32_t v = dim;
      h = fnv1a64(&v, sizeof v, h);
    }
    auto d = t.data();
    h = fnv1a64(d.data(), d.size() * sizeof(float), h);
  }
  return h;
}

void ModelParams::zero_all_grads() {
  for (auto& [name, t] : named_)
    if (t.requires_grad()) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams c(cfg_, vocab_, 0);
  c.tau_comp = tau_comp;
  c.tau_attr = tau_attr;
  c.tau_obj = tau_obj;
  for (std::size_t i = 0; i < named_.size(); ++i)
    c.named_[i].second.set_requires_grad(named_[i].second.requires_grad());
  c.copy_values_from(*this);
  return c;
}

void ModelParams::copy_values_from(const ModelParams& other) {
  if (named_.size() != other.named_.size())
    throw ShapeError("model structures differ: " + std::to_string(named_.size()) + " vs " +
                     std::to_string(other.named_.size()) + " tensors");
  for (std::size_t i = 0; i < named_.size(); ++i) {
    auto& [name, t] = named_[i];
    const auto& [oname, ot] = other.named_[i];
    if (name != oname) throw ShapeError("model structures differ at '" + name + "' vs '" + oname + "'");
    if (t.shape() != ot.shape())
      throw ShapeError("shape mismatch for '" + name + "': " + shape_str(t.shape()) + " vs " +
                       shape_str(ot.shape()));
    auto src = ot.data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

namespace {

Tensor sublayer_attn(const Tensor& h, const BlockWeights& w, const EncoderConfig& cfg) {
  Tensor x = layer_norm(h, w.ln1_g, w.ln1_b);
  Tensor q = add_rowvec(matmul(x, w.wq), w.bq);
  Tensor k = add_rowvec(matmul(x, w.wk), w.bk);
  Tensor v = add_rowvec(matmul(x, w.wv), w.bv);
  const int dh = cfg.head_dim();
  // Softmax temperature sqrt(dh) is exactly the scaled dot product.
  const float temp = float(std::sqrt(double(dh)));
  std::vector<Tensor> heads;
  heads.reserve(std::size_t(cfg.heads));
  for (int i = 0; i < cfg.heads; ++i) {
    Tensor qi = slice_cols(q, i * dh, dh);
    Tensor ki = slice_cols(k, i * dh, dh);
    Tensor vi = slice_cols(v, i * dh, dh);
    heads.push_back(matmul(softmax(matmul(qi, transpose(ki)), temp), vi));
  }
  Tensor o = concat_cols(heads);
  return add_rowvec(matmul(o, w.wo), w.bo);
}

Tensor sublayer_ffn(const Tensor& h, const BlockWeights& w, const EncoderConfig& cfg) {
  Tensor x = layer_norm(h, w.ln2_g, w.ln2_b);
  Tensor u = activate(add_rowvec(matmul(x, w.w1), w.b1), cfg.activation);
  return add_rowvec(matmul(u, w.w2), w.b2);
}

/// Pre-norm block; `ap` nullptr runs the plain backbone.
Tensor block_core(Tensor h, const BlockWeights& w, const EncoderConfig& cfg,
                  const AdapterPair* ap) {
  Tensor s = sublayer_attn(h, w, cfg);
  if (ap) s = adapter_forward(s, ap->attn, cfg.activation);
  h = add(h, s);
  Tensor s2 = sublayer_ffn(h, w, cfg);
  if (ap) s2 = adapter_forward(s2, ap->ffn, cfg.activation);
  return add(h, s2);
}

Tensor run_blocks(Tensor h, const std::vector<ConceptBlock>& blocks, int from, int to,
                  ConceptKind k, const EncoderConfig& cfg) {
  for (int l = from; l < to; ++l) h = block_forward(h, blocks[std::size_t(l)], k, cfg);
  return h;
}

Tensor run_blocks_plain(Tensor h, const std::vector<ConceptBlock>& blocks, int from, int to,
                        const EncoderConfig& cfg) {
  for (int l = from; l < to; ++l) h = block_core(h, *blocks[std::size_t(l)].frozen, cfg, nullptr);
  return h;
}

Tensor readout(const Tensor& h, const Tensor& gain, const Tensor& bias) {
  return l2_normalize(layer_norm(take_row(h, 0), gain, bias));
}

}  // namespace

Tensor adapter_forward(const Tensor& h, const AdapterParams& p, Activation act) {
  Tensor z = activate(add_rowvec(matmul(h, p.w_down), p.b_down), act);
  return add(add_rowvec(matmul(z, p.w_up), p.b_up), h);
}

Tensor block_forward(const Tensor& h, const ConceptBlock& block, ConceptKind kind,
                     const EncoderConfig& cfg) {
  if (block.adapters.empty()) return block_core(h, *block.frozen, cfg, nullptr);
  return block_core(h, *block.frozen, cfg, &block.adapters_for(kind));
}

Tensor moa_adapter_site(const Tensor& s, const ConceptBlock& block, int site,
                        const EncoderConfig& cfg) {
  if (site != 0 && site != 1)
    throw ValueError("adapter site must be 0 (attention) or 1 (feed-forward), got " +
                     std::to_string(site));
  const AdapterPair& a = block.adapters_for(ConceptKind::Attribute);
  const AdapterPair& o = block.adapters_for(ConceptKind::Object);
  const AdapterPair& c = block.adapters_for(ConceptKind::Composition);
  const AdapterParams& pa = site == 0 ? a.attn : a.ffn;
  const AdapterParams& po = site == 0 ? o.attn : o.ffn;
  const AdapterParams& pc = site == 0 ? c.attn : c.ffn;
  Tensor za = activate(add_rowvec(matmul(s, pa.w_down), pa.b_down), cfg.activation);
  Tensor zo = activate(add_rowvec(matmul(s, po.w_down), po.b_down), cfg.activation);
  Tensor zc = activate(add_rowvec(matmul(s, pc.w_down), pc.b_down), cfg.activation);
  // The composition stream sees the averaged bottleneck; the primitive
  // streams contribute skip-free up projections; one shared skip of s.
  Tensor zmix = average({za, zo, zc});
  Tensor ua = add_rowvec(matmul(za, pa.w_up), pa.b_up);
  Tensor uo = add_rowvec(matmul(zo, po.w_up), po.b_up);
  Tensor uc = add_rowvec(matmul(zmix, pc.w_up), pc.b_up);
  return add(average({ua, uo, uc}), s);
}

Tensor vision_moa_block_forward(const Tensor& h, const ConceptBlock& block,
                                const EncoderConfig& cfg) {
  Tensor s = sublayer_attn(h, *block.frozen, cfg);
  Tensor h1 = add(h, moa_adapter_site(s, block, 0, cfg));
  Tensor s2 = sublayer_ffn(h1, *block.frozen, cfg);
  return add(h1, moa_adapter_site(s2, block, 1, cfg));
}

// ---------------------------------------------------------------------------
// Vision pipeline
// ---------------------------------------------------------------------------

Tensor patch_matrix(const Image& img, const EncoderConfig& cfg) {
  if (img.hw != cfg.image_hw)
    throw ShapeError("image resolution " + std::to_string(img.hw) + " does not match configured " +
                     std::to_string(cfg.image_hw));
  if (img.rgb.size() != std::size_t(img.hw) * std::size_t(img.hw) * 3)
    throw ShapeError("image buffer size does not match its resolution");
  const int ps = cfg.patches_per_side();
  const int n = ps * ps;
  const int k = cfg.patch * cfg.patch * 3;
  std::vector<float> v;
  v.reserve(std::size_t(n) * std::size_t(k));
  for (int gy = 0; gy < ps; ++gy)
    for (int gx = 0; gx < ps; ++gx)
      for (int py = 0; py < cfg.patch; ++py)
        for (int px = 0; px < cfg.patch; ++px)
          for (int ch = 0; ch < 3; ++ch)
            v.push_back(img.at(gy * cfg.patch + py, gx * cfg.patch + px, ch));
  return Tensor::from_data({n, k}, std::move(v));
}

Tensor vision_tokens(const Image& img, const ModelParams& p) {
  Tensor x = add_rowvec(matmul(patch_matrix(img, p.config()), p.patch_w), p.patch_b);
  std::vector<Tensor> cls_row{p.vis_cls};
  std::vector<Tensor> parts{stack_rows(cls_row), x};
  return add(concat_rows(parts), p.vis_pos);
}

Tensor vision_stage1(const Image& img, const ModelParams& p, ConceptKind kind) {
  const auto& cfg = p.config();
  return run_blocks(vision_tokens(img, p), p.vision_blocks, 0, cfg.moa_split(), kind, cfg);
}

Tensor vision_primitive_tail(const Tensor& h, const ModelParams& p, ConceptKind kind) {
  const auto& cfg = p.config();
  Tensor out = run_blocks(h, p.vision_blocks, cfg.moa_split(), cfg.n_vision, kind, cfg);
  return readout(out, p.vis_lnout_g, p.vis_lnout_b);
}

Tensor vision_moa_tail(const Tensor& h, const ModelParams& p) {
  const auto& cfg = p.config();
  if (!cfg.vision_moa) throw ValueError("mixture tail called with vision_moa disabled");
  Tensor out = h;
  for (int l = cfg.moa_split(); l < cfg.n_vision; ++l)
    out = vision_moa_block_forward(out, p.vision_blocks[std::size_t(l)], cfg);
  return readout(out, p.vis_lnout_g, p.vis_lnout_b);
}

Tensor encode_vision_primitive(const Image& img, ConceptKind kind, const ModelParams& p) {
  if (kind == ConceptKind::Composition)
    throw ValueError("primitive encoder expects the attribute or object concept");
  if (!p.config().vision_adapters) return encode_vision_backbone(img, p);
  return vision_primitive_tail(vision_stage1(img, p, kind), p, kind);
}

Tensor encode_vision_composition(const Image& img, const ModelParams& p) {
  const auto& cfg = p.config();
  if (!cfg.vision_adapters) return encode_vision_backbone(img, p);
  if (!cfg.vision_moa) {
    Tensor h = run_blocks(vision_tokens(img, p), p.vision_blocks, 0, cfg.n_vision,
                          ConceptKind::Composition, cfg);
    return readout(h, p.vis_lnout_g, p.vis_lnout_b);
  }
  Tensor fused =
      average({vision_stage1(img, p, ConceptKind::Attribute), vision_stage1(img, p, ConceptKind::Object)});
  return vision_moa_tail(fused, p);
}

Tensor encode_vision_backbone(const Image& img, const ModelParams& p) {
  const auto& cfg = p.config();
  Tensor h = run_blocks_plain(vision_tokens(img, p), p.vision_blocks, 0, cfg.n_vision, cfg);
  return readout(h, p.vis_lnout_g, p.vis_lnout_b);
}

// ---------------------------------------------------------------------------
// Language pipeline
// ---------------------------------------------------------------------------

namespace {

struct SlotRef {
  int word_idx;         // pre-[CLS] word position
  const Tensor* table;  // prompt table the slot reads
  int row;
};

/// Input state: [CLS] + word embeddings + padding, class slots reading the
/// trainable prompt tables, plus the positional table.
Tensor text_state(const Tokenizer::Prompt& pr, std::span<const SlotRef> slots,
                  const ModelParams& p) {
  const int len = p.config().max_text_len;
  if (int(pr.ids.size()) != len)
    throw ShapeError("prompt length " + std::to_string(pr.ids.size()) +
                     " does not match max_text_len " + std::to_string(len));
  std::vector<Tensor> rows;
  rows.reserve(std::size_t(len));
  for (int pos = 0; pos < len; ++pos) {
    const SlotRef* hit = nullptr;
    for (const auto& s : slots)
      if (s.word_idx + 1 == pos) hit = &s;
    rows.push_back(hit ? take_row(*hit->table, hit->row) : take_row(p.tok_table, pr.ids[std::size_t(pos)]));
  }
  return add(stack_rows(rows), p.txt_pos);
}

void check_attr_id(int id, const VocabSpec& v) {
  if (id < 0 || id >= v.num_attrs())
    throw ValueError("attribute id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(v.num_attrs()) + ")");
}

void check_obj_id(int id, const VocabSpec& v) {
  if (id < 0 || id >= v.num_objs())
    throw ValueError("object id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(v.num_objs()) + ")");
}

struct TextInput {
  Tokenizer::Prompt prompt;
  std::vector<SlotRef> slots;
};

TextInput make_text_input(ConceptKind kind, PairLabel pair, const ModelParams& p) {
  const auto& v = p.vocab();
  const int len = p.config().max_text_len;
  TextInput in;
  switch (kind) {
    case ConceptKind::Attribute:
      check_attr_id(pair.attr, v);
      in.prompt = p.tokenizer().attribute_prompt(v.attributes[std::size_t(pair.attr)], len);
      in.slots = {{in.prompt.class_slots.at(0), &p.prompt_attr, pair.attr}};
      break;
    case ConceptKind::Object:
      check_obj_id(pair.obj, v);
      in.prompt = p.tokenizer().object_prompt(v.objects[std::size_t(pair.obj)], len);
      in.slots = {{in.prompt.class_slots.at(0), &p.prompt_obj, pair.obj}};
      break;
    case ConceptKind::Composition:
      check_attr_id(pair.attr, v);
      check_obj_id(pair.obj, v);
      in.prompt = p.tokenizer().composition_prompt(v.attributes[std::size_t(pair.attr)],
                                                   v.objects[std::size_t(pair.obj)], len);
      in.slots = {{in.prompt.class_slots.at(0), &p.prompt_attr, pair.attr},
                  {in.prompt.class_slots.at(1), &p.prompt_obj, pair.obj}};
      break;
  }
  return in;
}

Tensor encode_text_concept(ConceptKind kind, PairLabel pair, const ModelParams& p) {
  const auto& cfg = p.config();
  TextInput in = make_text_input(kind, pair, p);
  Tensor h = text_state(in.prompt, in.slots, p);
  h = run_blocks(h, p.text_blocks, 0, cfg.n_language, kind, cfg);
  return readout(h, p.txt_lnout_g, p.txt_lnout_b);
}

}  // namespace

Tensor encode_text_composition(PairLabel pair, const ModelParams& p) {
  return encode_text_concept(ConceptKind::Composition, pair, p);
}

Tensor encode_text_attribute(int attr_id, const ModelParams& p) {
  return encode_text_concept(ConceptKind::Attribute, PairLabel{attr_id, 0}, p);
}

Tensor encode_text_object(int obj_id, const ModelParams& p) {
  return encode_text_concept(ConceptKind::Object, PairLabel{0, obj_id}, p);
}

Tensor encode_text_backbone(ConceptKind kind, PairLabel pair, const ModelParams& p) {
  const auto& cfg = p.config();
  TextInput in = make_text_input(kind, pair, p);
  Tensor h = text_state(in.prompt, in.slots, p);
  h = run_blocks_plain(h, p.text_blocks, 0, cfg.n_language, cfg);
  return readout(h, p.txt_lnout_g, p.txt_lnout_b);
}

Tensor text_mixture(PairLabel pair, const ModelParams& p) {
  if (!p.config().language_moa) return encode_text_composition(pair, p);
  Tensor ga = encode_text_attribute(pair.attr, p);
  Tensor go = encode_text_object(pair.obj, p);
  Tensor gc = encode_text_composition(pair, p);
  return l2_normalize(average({ga, go, gc}));
}

Tensor compatibility(const Image& img, PairLabel pair, const ModelParams& p) {
  return dot(encode_vision_composition(img, p), text_mixture(pair, p));
}

Tensor primitive_compatibility(const Image& img, ConceptKind kind, int id, const ModelParams& p) {
  if (kind == ConceptKind::Composition)
    throw ValueError("primitive compatibility expects the attribute or object concept");
  Tensor f = encode_vision_primitive(img, kind, p);
  Tensor g = kind == ConceptKind::Attribute ? encode_text_attribute(id, p)
                                            : encode_text_object(id, p);
  return dot(f, g);
}

}  // namespace caila
