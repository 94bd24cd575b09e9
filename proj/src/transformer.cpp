#include "evplan/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evplan/error.hpp"
#include "evplan/rng.hpp"

namespace evplan {

void LmConfig::validate() const {
  if (layers == 0 || heads == 0 || width == 0 || ff_width == 0 || max_len == 0 || vocab == 0) {
    throw ConfigError("lm config: all counts must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("lm config: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lm config: dropout must be in [0, 1)");
}

LmConfig LmConfig::from_config(const Config& cfg, LmConfig base) {
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  base.layers = size("lm.layers", base.layers);
  base.heads = size("lm.heads", base.heads);
  base.width = size("lm.width", base.width);
  base.ff_width = size("lm.ff_width", base.ff_width);
  base.max_len = size("lm.max_len", base.max_len);
  base.vocab = size("lm.vocab", base.vocab);
  base.tie_embeddings = cfg.get_bool("lm.tie_embeddings", base.tie_embeddings);
  base.dropout = cfg.get_double("lm.dropout", base.dropout);
  base.init_std = cfg.get_double("lm.init_std", base.init_std);
  return base;
}

LmConfig LmConfig::from_config(const Config& cfg) { return from_config(cfg, LmConfig{}); }

TokenBatch TokenBatch::pack(const std::vector<std::vector<int>>& sequences, int pad_id) {
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.length = std::max(b.length, s.size());
  if (b.batch == 0 || b.length == 0) throw DimensionError("TokenBatch: empty batch");
  b.ids.assign(b.batch * b.length, pad_id);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
  }
  return b;
}

Tensor init_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(Shape{rows, cols}, true);
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor init_constant(std::size_t n, double value) {
  Tensor t(Shape{n}, true);
  for (double& v : t.values()) v = value;
  return t;
}

TransformerLM::TransformerLM(const LmConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, 0x4c4d);
  const std::size_t d = config_.width;
  const double s = config_.init_std;
  const double s_res = s / std::sqrt(2.0 * static_cast<double>(config_.layers));
  tok_emb_ = init_normal(config_.vocab, d, s, rng);
  pos_emb_ = init_normal(config_.max_len, d, s, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Layer L;
    L.ln1_gain = init_constant(d, 1.0);
    L.ln1_bias = init_constant(d, 0.0);
    L.wq = init_normal(d, d, s, rng);
    L.bq = init_constant(d, 0.0);
    L.wk = init_normal(d, d, s, rng);
    L.bk = init_constant(d, 0.0);
    L.wv = init_normal(d, d, s, rng);
    L.bv = init_constant(d, 0.0);
    L.wo = init_normal(d, d, s_res, rng);
    L.bo = init_constant(d, 0.0);
    L.ln2_gain = init_constant(d, 1.0);
    L.ln2_bias = init_constant(d, 0.0);
    L.w_fc = init_normal(d, config_.ff_width, s, rng);
    L.b_fc = init_constant(config_.ff_width, 0.0);
    L.w_proj = init_normal(config_.ff_width, d, s_res, rng);
    L.b_proj = init_constant(d, 0.0);
    layers_.push_back(std::move(L));
  }
  lnf_gain_ = init_constant(d, 1.0);
  lnf_bias_ = init_constant(d, 0.0);
  if (!config_.tie_embeddings) out_proj_ = init_normal(d, config_.vocab, s, rng);
}

namespace {
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }
}  // namespace

ForwardResult TransformerLM::forward(const TokenBatch& batch, const ForwardOptions& opts) const {
  const std::size_t B = batch.batch, T = batch.length;
  if (B == 0 || T == 0 || batch.ids.size() != B * T) throw DimensionError("forward: malformed token batch");
  if (T + opts.position_offset > config_.max_len) {
    throw LengthError("sequence of " + std::to_string(T) + " tokens at offset " +
                      std::to_string(opts.position_offset) + " exceeds max_len " + std::to_string(config_.max_len));
  }
  if (!opts.memory.empty() && opts.memory.size() != config_.layers) {
    throw DimensionError("forward: memory has " + std::to_string(opts.memory.size()) + " layers, model has " +
                         std::to_string(config_.layers));
  }
  for (int id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab) {
      throw DimensionError("forward: token id " + std::to_string(id) + " outside vocab " +
                           std::to_string(config_.vocab));
    }
  }
  std::vector<int> positions(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) positions[b * T + t] = static_cast<int>(opts.position_offset + t);
  }
  const bool drop = opts.training && config_.dropout > 0.0;
  std::uint64_t stream = 0;
  auto maybe_drop = [&](const Tensor& x) {
    return drop ? dropout(x, config_.dropout, opts.dropout_seed, stream++, true) : x;
  };

  Tensor x = maybe_drop(add(embedding_lookup(tok_emb_, batch.ids), embedding_lookup(pos_emb_, positions)));
  ForwardResult result;
  AttentionOptions attn_opts;
  attn_opts.batch = B;
  attn_opts.heads = config_.heads;
  attn_opts.causal = true;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor q = linear(h, L.wq, L.bq);
    Tensor k = linear(h, L.wk, L.bk);
    Tensor v = linear(h, L.wv, L.bv);
    Tensor a;
    if (!opts.memory.empty() && opts.memory[l].keys.defined()) {
      a = attention(q, k, v, attn_opts, opts.memory[l].keys, opts.memory[l].values);
    } else {
      a = attention(q, k, v, attn_opts);
    }
    Tensor attn_out = linear(a, L.wo, L.bo);
    if (opts.override_layer && *opts.override_layer == l && opts.attention_override) {
      attn_out = opts.attention_override(attn_out, x);
    }
    x = add(x, maybe_drop(attn_out));
    Tensor h2 = layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor f = linear(gelu(linear(h2, L.w_fc, L.b_fc)), L.w_proj, L.b_proj);
    x = add(x, maybe_drop(f));
    result.hidden.push_back(x);
  }
  Tensor hf = layer_norm(x, lnf_gain_, lnf_bias_);
  result.logits = config_.tie_embeddings ? matmul_transposed(hf, tok_emb_) : matmul(hf, out_proj_);
  return result;
}

std::vector<int> TransformerLM::shifted_targets(const TokenBatch& batch, int pad_id) {
  std::vector<int> targets(batch.ids.size(), pad_id);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t + 1 < batch.length; ++t) {
      if (batch.at(b, t) == pad_id) continue;
      targets[b * batch.length + t] = batch.at(b, t + 1);
    }
  }
  return targets;
}

Tensor TransformerLM::lm_loss(const TokenBatch& batch, int pad_id, const ForwardOptions& opts) const {
  auto targets = shifted_targets(batch, pad_id);
  const bool any = std::any_of(targets.begin(), targets.end(), [pad_id](int t) { return t != pad_id; });
  if (!any) throw EmptyBatchError("lm_loss: batch has no non-pad targets");
  auto out = forward(batch, opts);
  return cross_entropy(out.logits, targets, pad_id);
}

TensorMap TransformerLM::named_parameters() const {
  TensorMap m;
  m.emplace("tok_emb", tok_emb_);
  m.emplace("pos_emb", pos_emb_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    m.emplace(p + "ln1.gain", L.ln1_gain);
    m.emplace(p + "ln1.bias", L.ln1_bias);
    m.emplace(p + "attn.wq", L.wq);
    m.emplace(p + "attn.bq", L.bq);
    m.emplace(p + "attn.wk", L.wk);
    m.emplace(p + "attn.bk", L.bk);
    m.emplace(p + "attn.wv", L.wv);
    m.emplace(p + "attn.bv", L.bv);
    m.emplace(p + "attn.wo", L.wo);
    m.emplace(p + "attn.bo", L.bo);
    m.emplace(p + "ln2.gain", L.ln2_gain);
    m.emplace(p + "ln2.bias", L.ln2_bias);
    m.emplace(p + "mlp.w_fc", L.w_fc);
    m.emplace(p + "mlp.b_fc", L.b_fc);
    m.emplace(p + "mlp.w_proj", L.w_proj);
    m.emplace(p + "mlp.b_proj", L.b_proj);
  }
  m.emplace("ln_f.gain", lnf_gain_);
  m.emplace("ln_f.bias", lnf_bias_);
  if (out_proj_.defined()) m.emplace("out_proj", out_proj_);
  return m;
}

std::vector<Tensor> TransformerLM::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void TransformerLM::set_trainable(bool trainable) {
  for (auto& [name, t] : named_parameters()) {
    Tensor handle = t;
    handle.set_requires_grad(trainable);
  }
}

TensorMap TransformerLM::state() const {
  TensorMap m = named_parameters();
  m.emplace("config", Tensor(Shape{7}, {static_cast<double>(config_.layers), static_cast<double>(config_.heads),
                                        static_cast<double>(config_.width), static_cast<double>(config_.ff_width),
                                        static_cast<double>(config_.max_len), static_cast<double>(config_.vocab),
                                        config_.tie_embeddings ? 1.0 : 0.0}));
  return m;
}

TransformerLM TransformerLM::from_state(const TensorMap& state) {
  auto it = state.find("config");
  if (it == state.end() || it->second.size() != 7) throw DataError("model checkpoint has no config tensor");
  auto c = it->second.values();
  LmConfig cfg;
  cfg.layers = static_cast<std::size_t>(c[0]);
  cfg.heads = static_cast<std::size_t>(c[1]);
  cfg.width = static_cast<std::size_t>(c[2]);
  cfg.ff_width = static_cast<std::size_t>(c[3]);
  cfg.max_len = static_cast<std::size_t>(c[4]);
  cfg.vocab = static_cast<std::size_t>(c[5]);
  cfg.tie_embeddings = c[6] != 0.0;
  TransformerLM model(cfg, 0);
  model.load_parameters(state);
  return model;
}

void TransformerLM::load_parameters(const TensorMap& params) {
  TensorMap mine = named_parameters();
  restore_into(params, mine);
}

TransformerLM TransformerLM::clone() const {
  TransformerLM copy(config_, 0);
  copy.load_parameters(named_parameters());
  return copy;
}

}  // namespace evplan
