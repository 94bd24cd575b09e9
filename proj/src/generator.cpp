#include "evplan/generator.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "evplan/autodiff.hpp"
#include "evplan/event_graph.hpp"
#include "evplan/rng.hpp"

namespace evplan {

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

std::vector<int> positions(std::size_t batch, std::size_t length) {
  std::vector<int> p(batch * length);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<int>(i % length);
  return p;
}

}  // namespace

QueryLayerConfig QueryLayerConfig::from_config(const Config& cfg) {
  QueryLayerConfig q;
  q.heads = static_cast<std::size_t>(cfg.get_int("generator.heads", static_cast<long long>(q.heads)));
  q.ff_width = static_cast<std::size_t>(cfg.get_int("generator.ff_width", static_cast<long long>(q.ff_width)));
  q.max_path_len = static_cast<std::size_t>(cfg.get_int("generator.max_path_len", static_cast<long long>(q.max_path_len)));
  q.fusion_layers =
      static_cast<std::size_t>(cfg.get_int("generator.fusion_layers", static_cast<long long>(q.fusion_layers)));
  return q;
}

// ---------------------------------------------------------------------------
// EventQueryLayer

EventQueryLayer::EventQueryLayer(const LmConfig& lm, const QueryLayerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), width_(lm.width), heads_(cfg.heads ? cfg.heads : lm.heads) {
  const std::size_t d = width_;
  const std::size_t ff = cfg.ff_width ? cfg.ff_width : lm.ff_width;
  if (cfg.fusion_layers != 1 && cfg.fusion_layers != 2) throw ConfigError("generator.fusion_layers must be 1 or 2");
  if (cfg.max_path_len == 0) throw ConfigError("generator.max_path_len must be positive");
  if (heads_ == 0 || d % heads_ != 0) {
    throw ConfigError("query layer heads (" + std::to_string(heads_) + ") must divide width " + std::to_string(d));
  }
  Rng rng(seed, 0x9b1e);
  const double s = lm.init_std;
  pos_emb_ = init_normal(cfg.max_path_len, d, s, rng);
  ln1_g_ = init_constant(d, 1.0);
  ln1_b_ = init_constant(d, 0.0);
  wq_ = init_normal(d, d, s, rng);
  bq_ = init_constant(d, 0.0);
  wk_ = init_normal(d, d, s, rng);
  bk_ = init_constant(d, 0.0);
  wv_ = init_normal(d, d, s, rng);
  bv_ = init_constant(d, 0.0);
  wo_ = init_normal(d, d, s, rng);
  bo_ = init_constant(d, 0.0);
  ln2_g_ = init_constant(d, 1.0);
  ln2_b_ = init_constant(d, 0.0);
  w_fc_ = init_normal(d, ff, s, rng);
  b_fc_ = init_constant(ff, 0.0);
  w_proj_ = init_normal(ff, d, s, rng);
  b_proj_ = init_constant(d, 0.0);
  enc_ln_g_ = init_constant(d, 1.0);
  enc_ln_b_ = init_constant(d, 0.0);
  xq_ln_g_ = init_constant(d, 1.0);
  xq_ln_b_ = init_constant(d, 0.0);
  xq_ = init_normal(d, d, s, rng);
  xbq_ = init_constant(d, 0.0);
  xk_ = init_normal(d, d, s, rng);
  xbk_ = init_constant(d, 0.0);
  xv_ = init_normal(d, d, s, rng);
  xbv_ = init_constant(d, 0.0);
  xo_ = init_normal(d, d, s, rng);
  xbo_ = init_constant(d, 0.0);
  if (cfg.fusion_layers == 1) {
    set_identity_fusion();
    // small path contribution so the path channel starts live
    auto w = f_w1_.values();
    for (std::size_t r = d; r < 2 * d; ++r)
      for (std::size_t c = 0; c < d; ++c) w[r * d + c] = rng.normal() * s;
  } else {
    f_w1_ = init_normal(2 * d, d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng);
    f_b1_ = init_constant(d, 0.0);
    f_w2_ = init_normal(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    f_b2_ = init_constant(d, 0.0);
  }
}

void EventQueryLayer::set_identity_fusion() {
  if (cfg_.fusion_layers != 1) throw UsageError("identity fusion needs the single-affine fusion");
  const std::size_t d = width_;
  std::vector<double> w(2 * d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;
  if (f_w1_.defined()) {
    f_w1_.assign(w);
    f_b1_.assign(std::vector<double>(d, 0.0));
  } else {
    f_w1_ = Tensor(Shape{2 * d, d}, std::move(w));
    f_b1_ = init_constant(d, 0.0);
  }
}

Tensor EventQueryLayer::encode_path(const Tensor& token_table, const TokenBatch& path,
                                    const std::vector<std::size_t>& lengths) const {
  if (path.length > cfg_.max_path_len) {
    throw DimensionError("path of " + std::to_string(path.length) + " tokens exceeds max_path_len " +
                         std::to_string(cfg_.max_path_len));
  }
  auto pos = positions(path.batch, path.length);
  Tensor x = add(embedding_lookup(token_table, path.ids), embedding_lookup(pos_emb_, pos));
  AttentionOptions ao{path.batch, heads_, false, lengths};
  Tensor h = layer_norm(x, ln1_g_, ln1_b_);
  Tensor a = attention(linear(h, wq_, bq_), linear(h, wk_, bk_), linear(h, wv_, bv_), ao);
  x = add(x, linear(a, wo_, bo_));
  Tensor h2 = layer_norm(x, ln2_g_, ln2_b_);
  x = add(x, linear(gelu(linear(h2, w_fc_, b_fc_)), w_proj_, b_proj_));
  return layer_norm(x, enc_ln_g_, enc_ln_b_);
}

Tensor EventQueryLayer::path_attention(const Tensor& layer_input, const Tensor& encoded, std::size_t batch,
                                       const std::vector<std::size_t>& lengths) const {
  Tensor q = linear(layer_norm(layer_input, xq_ln_g_, xq_ln_b_), xq_, xbq_);
  AttentionOptions ao{batch, heads_, false, lengths};
  Tensor a = attention(q, linear(encoded, xk_, xbk_), linear(encoded, xv_, xbv_), ao);
  return linear(a, xo_, xbo_);
}

std::vector<double> EventQueryLayer::path_attention_weights(const Tensor& layer_input, const Tensor& encoded,
                                                            std::size_t batch,
                                                            const std::vector<std::size_t>& lengths) const {
  Tensor q = linear(layer_norm(layer_input, xq_ln_g_, xq_ln_b_), xq_, xbq_);
  AttentionOptions ao{batch, heads_, false, lengths};
  return attention_weights(q, linear(encoded, xk_, xbk_), ao);
}

Tensor EventQueryLayer::fuse(const Tensor& attention_out, const Tensor& path_out) const {
  const Tensor parts[] = {attention_out, path_out};
  Tensor joined = concat(parts, 1);
  if (cfg_.fusion_layers == 1) return linear(joined, f_w1_, f_b1_);
  return linear(gelu(linear(joined, f_w1_, f_b1_)), f_w2_, f_b2_);
}

TensorMap EventQueryLayer::parameters() const {
  TensorMap m{{"pos_emb", pos_emb_},   {"enc.ln1_gain", ln1_g_}, {"enc.ln1_bias", ln1_b_}, {"enc.wq", wq_},
              {"enc.bq", bq_},         {"enc.wk", wk_},          {"enc.bk", bk_},          {"enc.wv", wv_},
              {"enc.bv", bv_},         {"enc.wo", wo_},          {"enc.bo", bo_},          {"enc.ln2_gain", ln2_g_},
              {"enc.ln2_bias", ln2_b_}, {"enc.w_fc", w_fc_},     {"enc.b_fc", b_fc_},      {"enc.w_proj", w_proj_},
              {"enc.b_proj", b_proj_}, {"enc.lnf_gain", enc_ln_g_}, {"enc.lnf_bias", enc_ln_b_},
              {"cross.ln_gain", xq_ln_g_}, {"cross.ln_bias", xq_ln_b_}, {"cross.wq", xq_}, {"cross.bq", xbq_},
              {"cross.wk", xk_},       {"cross.bk", xbk_},       {"cross.wv", xv_},        {"cross.bv", xbv_},
              {"cross.wo", xo_},       {"cross.bo", xbo_},       {"fusion.w1", f_w1_},     {"fusion.b1", f_b1_}};
  if (cfg_.fusion_layers == 2) {
    m.emplace("fusion.w2", f_w2_);
    m.emplace("fusion.b2", f_b2_);
  }
  return m;
}

std::vector<Tensor> EventQueryLayer::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

void EventQueryLayer::set_trainable(bool on) {
  for (auto t : trainable()) t.set_requires_grad(on);
}

void EventQueryLayer::load_parameters(const TensorMap& params) {
  TensorMap mine = parameters();
  restore_into(params, mine);
}

// ---------------------------------------------------------------------------
// sequences

std::vector<int> encode_generator_prefix(const Tokenizer& tok, const std::string& context, std::size_t max_len) {
  auto body = tok.encode(context);
  // keep room for [BOS], [SEP] and at least one generated token
  const std::size_t room = max_len > 3 ? max_len - 3 : 0;
  if (body.size() > room) body.erase(body.begin(), body.end() - static_cast<std::ptrdiff_t>(room));
  std::vector<int> ids{tok.bos()};
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(tok.sep());
  return ids;
}

GeneratorSequence encode_generator_example(const Tokenizer& tok, const std::string& context,
                                           const std::string& target, std::size_t max_len) {
  auto x = tok.encode(context);
  auto y = tok.encode(target);
  if (y.size() + 3 > max_len) y.resize(max_len > 3 ? max_len - 3 : 0);
  const std::size_t room = max_len - 3 - y.size();
  if (x.size() > room) x.erase(x.begin(), x.end() - static_cast<std::ptrdiff_t>(room));
  GeneratorSequence s;
  s.ids.push_back(tok.bos());
  s.ids.insert(s.ids.end(), x.begin(), x.end());
  s.ids.push_back(tok.sep());
  s.target_begin = s.ids.size();
  s.ids.insert(s.ids.end(), y.begin(), y.end());
  s.ids.push_back(tok.eos());
  return s;
}

std::vector<int> encode_path_ids(const Tokenizer& tok, const TransitionPath& path, std::size_t max_len) {
  std::vector<int> ids;
  if (!normalize_event(path.start).empty() || !path.steps.empty()) ids = tok.encode(serialize_path(path));
  if (ids.empty()) {
    std::cerr << "warning: empty event path, conditioning on " << tokens::noevt << '\n';
    ids.push_back(tok.noevt());
  }
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

// ---------------------------------------------------------------------------
// PathAwareGenerator

PathAwareGenerator::PathAwareGenerator(TransformerLM backbone, Tokenizer tok, bool path_aware,
                                       const QueryLayerConfig& cfg, std::uint64_t seed)
    : backbone_(std::move(backbone)), tok_(std::move(tok)) {
  if (backbone_.config().vocab != tok_.size()) {
    throw DimensionError("generator backbone vocab " + std::to_string(backbone_.config().vocab) +
                         " != tokenizer size " + std::to_string(tok_.size()));
  }
  if (path_aware) query_ = EventQueryLayer(backbone_.config(), cfg, seed);
}

ForwardOptions PathAwareGenerator::query_options(const std::vector<TransitionPath>& paths, std::size_t batch,
                                                 bool zero_path) const {
  ForwardOptions opts;
  if (!query_) return opts;
  if (paths.size() != batch) {
    throw DimensionError("generator got " + std::to_string(paths.size()) + " paths for " + std::to_string(batch) +
                         " texts");
  }
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> lengths;
  for (const auto& p : paths) {
    seqs.push_back(encode_path_ids(tok_, p, query_->config().max_path_len));
    lengths.push_back(seqs.back().size());
  }
  auto pb = TokenBatch::pack(seqs, tok_.pad());
  const Tensor table = backbone_.named_parameters().at("tok_emb");
  Tensor encoded = query_->encode_path(table, pb, lengths);
  const EventQueryLayer* q = &*query_;
  opts.override_layer = backbone_.config().layers - 1;
  opts.attention_override = [q, encoded, batch, lengths, zero_path](const Tensor& attn_out, const Tensor& input) {
    Tensor path_out = zero_path ? Tensor(Shape{attn_out.dim(0), attn_out.dim(1)})
                                : q->path_attention(input, encoded, batch, lengths);
    return q->fuse(attn_out, path_out);
  };
  return opts;
}

ForwardResult PathAwareGenerator::forward(const TokenBatch& text, const std::vector<TransitionPath>& paths,
                                          bool zero_path) const {
  return backbone_.forward(text, query_options(paths, text.batch, zero_path));
}

void PathAwareGenerator::check_paths(const std::vector<GeneratorExample>& examples) const {
  if (!query_) return;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].path) {
      throw DataError("generator instance " + std::to_string(i) + " (target \"" + examples[i].target +
                      "\") has no gold path");
    }
  }
}

namespace {

struct PackedTargets {
  TokenBatch batch;
  std::vector<int> targets;
  std::size_t count = 0;
};

PackedTargets pack_targets(const Tokenizer& tok, const std::vector<GeneratorExample>& examples, std::size_t max_len) {
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> begins;
  for (const auto& e : examples) {
    auto s = encode_generator_example(tok, e.context, e.target, max_len);
    seqs.push_back(std::move(s.ids));
    begins.push_back(s.target_begin);
  }
  PackedTargets p;
  p.batch = TokenBatch::pack(seqs, tok.pad());
  p.targets.assign(p.batch.batch * p.batch.length, -1);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    for (std::size_t t = 0; t + 1 < seqs[b].size(); ++t) {
      if (t + 1 >= begins[b]) {
        p.targets[b * p.batch.length + t] = seqs[b][t + 1];
        ++p.count;
      }
    }
  }
  return p;
}

std::vector<TransitionPath> paths_of(const std::vector<GeneratorExample>& examples) {
  std::vector<TransitionPath> out;
  for (const auto& e : examples) out.push_back(e.path.value_or(TransitionPath{}));
  return out;
}

}  // namespace

Tensor PathAwareGenerator::loss(const std::vector<GeneratorExample>& batch) const {
  if (batch.empty()) throw DataError("generator loss needs at least one instance");
  check_paths(batch);
  auto p = pack_targets(tok_, batch, backbone_.config().max_len);
  auto res = forward(p.batch, paths_of(batch));
  return cross_entropy(res.logits, p.targets, -1);
}

double PathAwareGenerator::evaluate_loss(const std::vector<GeneratorExample>& examples) const {
  if (examples.empty()) throw DataError("generator evaluation needs at least one instance");
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < examples.size(); s += 32) {
    std::vector<GeneratorExample> chunk(examples.begin() + static_cast<std::ptrdiff_t>(s),
                                        examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), s + 32)));
    check_paths(chunk);
    auto p = pack_targets(tok_, chunk, backbone_.config().max_len);
    auto res = forward(p.batch, paths_of(chunk));
    total += cross_entropy(res.logits, p.targets, -1).item() * static_cast<double>(p.count);
    tokens += p.count;
  }
  return total / static_cast<double>(tokens);
}

double PathAwareGenerator::perplexity(const std::vector<GeneratorExample>& examples) const {
  return std::exp(evaluate_loss(examples));
}

std::vector<Tensor> PathAwareGenerator::parameters() const {
  auto out = backbone_.parameters();
  if (query_) {
    auto q = query_->trainable();
    out.insert(out.end(), q.begin(), q.end());
  }
  return out;
}

GeneratorTrainReport PathAwareGenerator::train(const std::vector<GeneratorExample>& train,
                                               const std::vector<GeneratorExample>& valid,
                                               const GeneratorTrainOptions& opts) {
  if (train.empty()) throw DataError("generator training needs at least one instance");
  if (opts.batch == 0 || opts.max_steps == 0) throw UsageError("generator training needs positive batch and max_steps");
  check_paths(train);
  check_paths(valid);
  auto params = parameters();
  backbone_.set_trainable(true);
  if (query_) query_->set_trainable(true);
  AdamWState state(opts.optim, params);

  GeneratorTrainReport report;
  std::vector<std::vector<double>> best;
  std::size_t bad = 0;
  auto validate = [&] {
    if (valid.empty()) return false;
    const double v = evaluate_loss(valid);
    if (!report.best_valid_loss || v < *report.best_valid_loss) {
      report.best_valid_loss = v;
      bad = 0;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.values().begin(), p.values().end());
      return false;
    }
    return ++bad >= opts.patience;
  };

  std::vector<std::size_t> order(train.size());
  const std::size_t per_epoch = (train.size() + opts.batch - 1) / opts.batch;
  const std::size_t eval_every = opts.eval_every ? opts.eval_every : per_epoch;
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 0; !stop && step < opts.max_steps; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opts.seed, 0x6e00 + epoch);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size() && step < opts.max_steps; s += opts.batch) {
      std::vector<GeneratorExample> mb;
      for (std::size_t i = s; i < std::min(order.size(), s + opts.batch); ++i) mb.push_back(train[order[i]]);
      zero_grads(params);
      double loss_value;
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor l = loss(mb);
        loss_value = l.item();
        if (!std::isfinite(loss_value)) throw NumericalError("generator loss is not finite at step " + std::to_string(step));
        tape.backward(l);
      }
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adamw_step(params, state);
      ++step;
      report.losses.push_back(loss_value);
      if (opts.on_step) opts.on_step(step, loss_value);
      if (step % eval_every == 0 && validate()) {
        report.stopped_early = true;
        stop = true;
        break;
      }
    }
  }
  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i].assign(best[i]);
  for (auto& p : params) p.clear_grad();
  backbone_.set_trainable(false);
  if (query_) query_->set_trainable(false);
  report.steps = step;
  return report;
}

std::vector<std::string> PathAwareGenerator::generate(const std::string& context, const TransitionPath& path,
                                                      const DecodeParams& params) const {
  const std::size_t max_len = backbone_.config().max_len;
  auto prefix = encode_generator_prefix(tok_, context, max_len);
  DecodeParams p = params;
  p.eos_id = tok_.eos();
  p.max_new = std::min(p.max_new, max_len - prefix.size());
  // the path is encoded once and shared by every prefix in a step
  std::vector<int> path_ids;
  std::vector<std::size_t> lengths;
  Tensor encoded;
  if (query_) {
    path_ids = encode_path_ids(tok_, path, query_->config().max_path_len);
    TokenBatch pb{path_ids, 1, path_ids.size()};
    Tape scratch;
    TapeScope scope(scratch);
    encoded = query_->encode_path(backbone_.named_parameters().at("tok_emb"), pb, {path_ids.size()}).detach();
  }
  NextLogitsFn next = [&](const std::vector<std::vector<int>>& prefixes) {
    Tape scratch;
    TapeScope scope(scratch);
    auto batch = TokenBatch::pack(prefixes, tok_.pad());
    ForwardOptions opts;
    if (query_) {
      const std::size_t n = prefixes.size();
      std::vector<double> rep;
      rep.reserve(n * encoded.size());
      for (std::size_t b = 0; b < n; ++b) rep.insert(rep.end(), encoded.values().begin(), encoded.values().end());
      Tensor enc(Shape{n * path_ids.size(), encoded.cols()}, std::move(rep));
      std::vector<std::size_t> lens(n, path_ids.size());
      const EventQueryLayer* q = &*query_;
      opts.override_layer = backbone_.config().layers - 1;
      opts.attention_override = [q, enc, n, lens](const Tensor& attn_out, const Tensor& input) {
        return q->fuse(attn_out, q->path_attention(input, enc, n, lens));
      };
    }
    auto out = backbone_.forward(batch, opts);
    const std::size_t V = out.logits.cols();
    auto lv = out.logits.values();
    std::vector<std::vector<double>> result;
    for (std::size_t b = 0; b < prefixes.size(); ++b) {
      const std::size_t row = b * batch.length + prefixes[b].size() - 1;
      result.emplace_back(lv.begin() + static_cast<std::ptrdiff_t>(row * V),
                          lv.begin() + static_cast<std::ptrdiff_t>((row + 1) * V));
    }
    return result;
  };
  std::vector<std::string> out;
  for (const auto& h : decode(prefix, p, next)) {
    std::vector<int> body = h.tokens;
    if (!body.empty() && body.back() == tok_.eos()) body.pop_back();
    out.push_back(tok_.decode(body));
  }
  return out;
}

TensorMap PathAwareGenerator::state() const {
  TensorMap m;
  merge_section(m, "backbone.", backbone_.state());
  std::vector<double> meta{0.0, 0.0, 0.0, 0.0, 0.0};
  if (query_) {
    const auto& c = query_->config();
    meta = {1.0, static_cast<double>(c.heads), static_cast<double>(c.ff_width), static_cast<double>(c.max_path_len),
            static_cast<double>(c.fusion_layers)};
    merge_section(m, "query.", query_->parameters());
  }
  m.emplace("generator.meta", Tensor(Shape{5}, std::move(meta)));
  return m;
}

PathAwareGenerator PathAwareGenerator::from_state(const TensorMap& state, Tokenizer tok) {
  auto it = state.find("generator.meta");
  if (it == state.end() || it->second.size() != 5) throw DataError("generator checkpoint has no generator.meta tensor");
  auto m = it->second.values();
  QueryLayerConfig cfg;
  const bool aware = m[0] != 0.0;
  if (aware) {
    cfg.heads = static_cast<std::size_t>(m[1]);
    cfg.ff_width = static_cast<std::size_t>(m[2]);
    cfg.max_path_len = static_cast<std::size_t>(m[3]);
    cfg.fusion_layers = static_cast<std::size_t>(m[4]);
  }
  PathAwareGenerator g(TransformerLM::from_state(section(state, "backbone.")), std::move(tok), aware, cfg, 0);
  if (g.query_) g.query_->load_parameters(section(state, "query."));
  return g;
}

}  // namespace evplan
