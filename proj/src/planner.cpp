#include "evplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "evplan/autodiff.hpp"
#include "evplan/event_graph.hpp"
#include "evplan/rng.hpp"

namespace evplan {

// ---------------------------------------------------------------------------
// PromptStage

PromptStage::PromptStage(const PromptShape& shape, std::size_t layers, std::size_t width, std::uint64_t seed)
    : shape_(shape), layers_(layers), width_(width) {
  if (shape.length == 0 || shape.small_dim == 0 || shape.hidden == 0 || layers == 0 || width == 0) {
    throw ConfigError("prompt stage needs positive length, small_dim, hidden, layers and width");
  }
  Rng rng(seed, 0x9e0f);
  u_small_ = init_normal(shape.length, shape.small_dim, 1.0, rng);
  w1_ = init_normal(shape.small_dim, shape.hidden, 1.0 / std::sqrt(static_cast<double>(shape.small_dim)), rng);
  b1_ = init_constant(shape.hidden, 0.0);
  w2_ = init_normal(shape.hidden, layers * 2 * width, 0.5 / std::sqrt(static_cast<double>(shape.hidden)), rng);
  b2_ = init_constant(layers * 2 * width, 0.0);
  refresh();
}

Tensor PromptStage::realize() const { return add(matmul(tanh(add(matmul(u_small_, w1_), b1_)), w2_), b2_); }

void PromptStage::refresh() {
  Tape scratch;
  TapeScope scope(scratch);
  realized_ = realize().detach();
}

double PromptStage::consistency_error() const {
  Tape scratch;
  TapeScope scope(scratch);
  Tensor fresh = realize();
  double worst = 0.0;
  auto a = fresh.values();
  auto b = realized_.values();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

TensorMap PromptStage::parameters() const {
  return {{"u_small", u_small_}, {"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
}

std::vector<Tensor> PromptStage::trainable() const { return {u_small_, w1_, b1_, w2_, b2_}; }

void PromptStage::set_trainable(bool on) {
  for (auto t : trainable()) t.set_requires_grad(on);
}

void PromptStage::load_parameters(const TensorMap& params) {
  TensorMap mine = parameters();
  restore_into(params, mine);
  refresh();
}

PromptStage PromptStage::clone() const {
  PromptStage copy(shape_, layers_, width_, 0);
  copy.load_parameters(parameters());
  return copy;
}

// ---------------------------------------------------------------------------
// names and config

PlannerMode parse_planner_mode(const std::string& name) {
  if (name == "prompted") return PlannerMode::prompted;
  if (name == "no_prompt") return PlannerMode::no_prompt;
  if (name == "no_atomic") return PlannerMode::no_atomic;
  throw UsageError("unknown planner mode '" + name + "' (expected prompted, no_prompt or no_atomic)");
}

std::string planner_mode_name(PlannerMode mode) {
  switch (mode) {
    case PlannerMode::prompted: return "prompted";
    case PlannerMode::no_prompt: return "no_prompt";
    case PlannerMode::no_atomic: return "no_atomic";
  }
  return "prompted";
}

PlannerStage parse_planner_stage(const std::string& name) {
  if (name == "atomic") return PlannerStage::atomic;
  if (name == "task") return PlannerStage::task;
  throw UsageError("unknown planner stage '" + name + "' (expected atomic or task)");
}

PlannerConfig PlannerConfig::from_config(const Config& cfg) {
  PlannerConfig p;
  p.mode = parse_planner_mode(cfg.get_string("planner.mode", planner_mode_name(p.mode)));
  p.atomic_length = static_cast<std::size_t>(cfg.get_int("planner.atomic_length", static_cast<long long>(p.atomic_length)));
  p.task_length = static_cast<std::size_t>(cfg.get_int("planner.task_length", static_cast<long long>(p.task_length)));
  p.small_dim = static_cast<std::size_t>(cfg.get_int("planner.small_dim", static_cast<long long>(p.small_dim)));
  p.ffn_hidden = static_cast<std::size_t>(cfg.get_int("planner.ffn_hidden", static_cast<long long>(p.ffn_hidden)));
  p.update_backbone_atomic = cfg.get_bool("planner.update_backbone_atomic", p.update_backbone_atomic);
  return p;
}

// ---------------------------------------------------------------------------
// sequences

std::vector<int> encode_planner_prefix(const Tokenizer& tok, const TransitionPath& observed) {
  std::vector<int> ids{tok.bos()};
  auto body = tok.encode(serialize_path(observed));
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(tok.sep());
  return ids;
}

PlannerSequence encode_planner_pair(const Tokenizer& tok, const TransitionPath& observed,
                                    const std::vector<PathStep>& continuation) {
  PlannerSequence s;
  s.ids = encode_planner_prefix(tok, observed);
  s.target_begin = s.ids.size();
  auto body = tok.encode(serialize_continuation(continuation));
  s.ids.insert(s.ids.end(), body.begin(), body.end());
  s.ids.push_back(tok.eos());
  return s;
}

// ---------------------------------------------------------------------------
// GenerativePlanner

GenerativePlanner::GenerativePlanner(TransformerLM backbone, Tokenizer tok, PlannerConfig cfg, std::uint64_t seed)
    : backbone_(std::move(backbone)), tok_(std::move(tok)), cfg_(cfg) {
  const auto& lm = backbone_.config();
  if (lm.vocab != tok_.size()) {
    throw DimensionError("planner backbone vocab " + std::to_string(lm.vocab) + " != tokenizer size " +
                         std::to_string(tok_.size()));
  }
  if (cfg_.mode == PlannerMode::prompted && cfg_.atomic_length > 0) {
    atomic_ = PromptStage({cfg_.atomic_length, cfg_.small_dim, cfg_.ffn_hidden}, lm.layers, lm.width, seed * 2 + 1);
  }
  if (cfg_.mode != PlannerMode::no_prompt && cfg_.task_length > 0) {
    task_ = PromptStage({cfg_.task_length, cfg_.small_dim, cfg_.ffn_hidden}, lm.layers, lm.width, seed * 2 + 2);
  }
  backbone_.set_trainable(false);
  if (atomic_) atomic_->set_trainable(false);
  if (task_) task_->set_trainable(false);
}

const PromptStage* GenerativePlanner::prompts(PlannerStage stage) const {
  const auto& s = stage == PlannerStage::atomic ? atomic_ : task_;
  return s ? &*s : nullptr;
}

PromptStage* GenerativePlanner::prompts(PlannerStage stage) {
  auto& s = stage == PlannerStage::atomic ? atomic_ : task_;
  return s ? &*s : nullptr;
}

bool GenerativePlanner::stage_trained(PlannerStage stage) const {
  return stage == PlannerStage::atomic ? atomic_trained_ : task_trained_;
}

std::size_t GenerativePlanner::prompt_length(PlannerStage stage) const {
  std::size_t n = atomic_ ? atomic_->length() : 0;
  if (stage == PlannerStage::task && task_) n += task_->length();
  return n;
}

ForwardOptions GenerativePlanner::prompt_options(PlannerStage stage, bool live) const {
  std::vector<Tensor> blocks;  // memory row order: task z' first, then atomic z
  if (stage == PlannerStage::task && task_) blocks.push_back(live ? task_->realize() : task_->realized());
  if (atomic_) {
    blocks.push_back(live && stage == PlannerStage::atomic ? atomic_->realize() : atomic_->realized());
  }
  ForwardOptions opts;
  if (blocks.empty()) return opts;
  const std::size_t L = backbone_.config().layers, d = backbone_.config().width;
  for (const auto& b : blocks) {
    if (b.dim(1) != L * 2 * d) {
      throw DimensionError("prompt width " + std::to_string(b.dim(1)) + " does not match backbone layers*2*width " +
                           std::to_string(L * 2 * d));
    }
  }
  Tensor u = blocks.size() == 1 ? blocks[0] : concat(blocks, 0);
  for (std::size_t l = 0; l < L; ++l) {
    opts.memory.push_back({slice(u, 1, 2 * l * d, (2 * l + 1) * d), slice(u, 1, (2 * l + 1) * d, (2 * l + 2) * d)});
  }
  opts.position_offset = u.dim(0);
  return opts;
}

Tensor GenerativePlanner::stage_loss(PlannerStage stage, const std::vector<PathPair>& batch, bool live) const {
  if (batch.empty()) throw EmptyBatchError("planner loss over an empty batch");
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> begins;
  for (const auto& p : batch) {
    auto s = encode_planner_pair(tok_, p.observed, p.continuation);
    seqs.push_back(std::move(s.ids));
    begins.push_back(s.target_begin);
  }
  auto tb = TokenBatch::pack(seqs, tok_.pad());
  std::vector<int> targets(tb.batch * tb.length, -1);
  for (std::size_t b = 0; b < tb.batch; ++b) {
    for (std::size_t t = 0; t + 1 < seqs[b].size(); ++t) {
      if (t + 1 >= begins[b]) targets[b * tb.length + t] = seqs[b][t + 1];
    }
  }
  auto res = backbone_.forward(tb, prompt_options(stage, live));
  return cross_entropy(res.logits, targets, -1);
}

double GenerativePlanner::evaluate_loss(PlannerStage stage, const std::vector<PathPair>& pairs) const {
  if (pairs.empty()) throw EmptyBatchError("planner evaluation over no pairs");
  double total = 0.0;
  std::size_t count = 0;
  const std::size_t chunk = 64;
  for (std::size_t s = 0; s < pairs.size(); s += chunk) {
    std::vector<PathPair> part(pairs.begin() + static_cast<std::ptrdiff_t>(s),
                               pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), s + chunk)));
    std::size_t n = 0;
    for (const auto& p : part) n += encode_planner_pair(tok_, p.observed, p.continuation).ids.size() -
                                     encode_planner_prefix(tok_, p.observed).size();
    total += stage_loss(stage, part, false).item() * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

std::vector<Tensor> GenerativePlanner::trainable_for(PlannerStage stage) {
  std::vector<Tensor> params;
  const bool backbone = cfg_.mode == PlannerMode::no_prompt ||
                        (stage == PlannerStage::atomic && cfg_.update_backbone_atomic);
  if (backbone) params = backbone_.parameters();
  if (auto* p = prompts(stage)) {
    auto t = p->trainable();
    params.insert(params.end(), t.begin(), t.end());
  }
  return params;
}

StageTrainReport GenerativePlanner::train_stage(PlannerStage stage, const std::vector<PathPair>& train,
                                                const std::vector<PathPair>& valid, const StageTrainOptions& opts) {
  if (train.empty()) throw DataError("planner training needs at least one path pair");
  if (cfg_.mode == PlannerMode::prompted && stage == PlannerStage::task && !atomic_trained_) {
    throw OrderingError("planner stage 'task' requires a trained 'atomic' stage (run train-planner --stage atomic first)");
  }
  if (cfg_.mode == PlannerMode::no_atomic && stage == PlannerStage::atomic) {
    throw UsageError("planner mode no_atomic has no atomic stage");
  }
  if (opts.batch == 0 || opts.max_steps == 0) throw UsageError("planner training needs positive batch and max_steps");

  PromptStage* active = prompts(stage);
  auto params = trainable_for(stage);
  if (params.empty()) throw UsageError("planner stage has no trainable parameters (prompt length 0)");
  const bool backbone = cfg_.mode == PlannerMode::no_prompt ||
                        (stage == PlannerStage::atomic && cfg_.update_backbone_atomic);
  backbone_.set_trainable(backbone);
  if (active) active->set_trainable(true);
  AdamWState state(opts.optim, params);

  StageTrainReport report;
  std::vector<std::vector<double>> best;
  std::size_t bad = 0;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.emplace_back(p.values().begin(), p.values().end());
  };
  auto validate = [&] {
    if (valid.empty()) return false;
    const double v = evaluate_loss(stage, valid);
    if (!report.best_valid_loss || v < *report.best_valid_loss) {
      report.best_valid_loss = v;
      bad = 0;
      snapshot();
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
    Rng rng(opts.seed, 0x7a00 + epoch);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size() && step < opts.max_steps; s += opts.batch) {
      std::vector<PathPair> mb;
      for (std::size_t i = s; i < std::min(order.size(), s + opts.batch); ++i) mb.push_back(train[order[i]]);
      zero_grads(params);
      double loss_value;
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = stage_loss(stage, mb, true);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) throw NumericalError("planner loss is not finite at step " + std::to_string(step));
        tape.backward(loss);
      }
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adamw_step(params, state);
      if (active) active->refresh();
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
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].assign(best[i]);
    if (active) active->refresh();
  }
  for (auto& p : params) p.clear_grad();
  backbone_.set_trainable(false);
  if (active) active->set_trainable(false);
  report.steps = step;
  (stage == PlannerStage::atomic ? atomic_trained_ : task_trained_) = true;
  return report;
}

std::vector<std::vector<PathStep>> GenerativePlanner::plan(const TransitionPath& observed, const DecodeParams& params,
                                                           std::size_t n_candidates, std::size_t max_hops) const {
  TransitionPath rx = observed;
  if (normalize_event(rx.start).empty()) {
    std::cerr << "warning: empty r_x, planning from " << tokens::noevt << '\n';
    rx = TransitionPath{std::string(tokens::noevt), {}, std::nullopt};
  }
  const PlannerStage stage = task_trained_ || cfg_.mode != PlannerMode::prompted ? PlannerStage::task : PlannerStage::atomic;
  DecodeParams p = params;
  p.eos_id = tok_.eos();
  p.num_return = std::max<std::size_t>(1, n_candidates);
  auto prefix = encode_planner_prefix(tok_, rx);
  auto hyps = decode(prefix, p, lm_next_logits(backbone_, tok_.pad(), prompt_options(stage, false)));
  std::vector<std::vector<PathStep>> out;
  for (const auto& h : hyps) {
    std::vector<int> body = h.tokens;
    if (!body.empty() && body.back() == tok_.eos()) body.pop_back();
    auto steps = repair_continuation(tok_.decode(body));
    if (max_hops && steps.size() > max_hops) steps.resize(max_hops);
    out.push_back(std::move(steps));
  }
  return out;
}

std::uint64_t GenerativePlanner::backbone_checksum() const { return checksum(backbone_.named_parameters()); }

std::uint64_t GenerativePlanner::stage_checksum(PlannerStage stage) const {
  const auto* p = prompts(stage);
  return p ? checksum(p->parameters()) : 0;
}

TensorMap GenerativePlanner::state() const {
  TensorMap m;
  merge_section(m, "backbone.", backbone_.state());
  if (atomic_) merge_section(m, "prompt.atomic.", atomic_->parameters());
  if (task_) merge_section(m, "prompt.task.", task_->parameters());
  m.emplace("planner.meta",
            Tensor(Shape{8}, std::vector<double>{static_cast<double>(cfg_.mode), static_cast<double>(cfg_.atomic_length),
                                                 static_cast<double>(cfg_.task_length), static_cast<double>(cfg_.small_dim),
                                                 static_cast<double>(cfg_.ffn_hidden), cfg_.update_backbone_atomic ? 1.0 : 0.0,
                                                 atomic_trained_ ? 1.0 : 0.0, task_trained_ ? 1.0 : 0.0}));
  return m;
}

GenerativePlanner GenerativePlanner::from_state(const TensorMap& state, Tokenizer tok) {
  auto it = state.find("planner.meta");
  if (it == state.end() || it->second.size() != 8) throw DataError("planner checkpoint has no planner.meta tensor");
  auto m = it->second.values();
  PlannerConfig cfg;
  cfg.mode = static_cast<PlannerMode>(static_cast<int>(m[0]));
  cfg.atomic_length = static_cast<std::size_t>(m[1]);
  cfg.task_length = static_cast<std::size_t>(m[2]);
  cfg.small_dim = static_cast<std::size_t>(m[3]);
  cfg.ffn_hidden = static_cast<std::size_t>(m[4]);
  cfg.update_backbone_atomic = m[5] != 0.0;
  GenerativePlanner planner(TransformerLM::from_state(section(state, "backbone.")), std::move(tok), cfg, 0);
  if (planner.atomic_) planner.atomic_->load_parameters(section(state, "prompt.atomic."));
  if (planner.task_) planner.task_->load_parameters(section(state, "prompt.task."));
  planner.atomic_trained_ = m[6] != 0.0;
  planner.task_trained_ = m[7] != 0.0;
  return planner;
}

}  // namespace evplan
