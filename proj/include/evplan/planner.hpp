#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evplan/checkpoint.hpp"
#include "evplan/config.hpp"
#include "evplan/decoding.hpp"
#include "evplan/error.hpp"
#include "evplan/optim.hpp"
#include "evplan/path.hpp"
#include "evplan/tokenizer.hpp"
#include "evplan/transformer.hpp"

namespace evplan {

class OrderingError : public UsageError {
 public:
  using UsageError::UsageError;
};

struct PromptShape {
  std::size_t length = 5;
  std::size_t small_dim = 512;
  std::size_t hidden = 512;
};

/// One stage of continuous prompts. The realized matrix U [length x layers*2*width]
/// is FFN(U') with FFN = affine, tanh, affine; layer l reads its keys from
/// columns [2*l*width, (2*l+1)*width) and its values from the next width columns.
class PromptStage {
 public:
  PromptStage() = default;
  PromptStage(const PromptShape& shape, std::size_t layers, std::size_t width, std::uint64_t seed);

  std::size_t length() const { return shape_.length; }
  std::size_t layers() const { return layers_; }
  std::size_t width() const { return width_; }
  const PromptShape& shape() const { return shape_; }

  /// FFN(U'), recorded on the active tape.
  Tensor realize() const;
  /// Stores a detached FFN(U') for inference and frozen use.
  void refresh();
  const Tensor& realized() const { return realized_; }
  /// max |stored U - FFN(U')|
  double consistency_error() const;

  TensorMap parameters() const;
  std::vector<Tensor> trainable() const;
  void set_trainable(bool on);
  void load_parameters(const TensorMap& params);
  PromptStage clone() const;

 private:
  PromptShape shape_;
  std::size_t layers_ = 0, width_ = 0;
  Tensor u_small_, w1_, b1_, w2_, b2_;
  Tensor realized_;
};

enum class PlannerMode {
  prompted,   // frozen backbone, atomic prompt z then task prompt z'
  no_prompt,  // plain fine-tuning of the backbone, no prompts
  no_atomic,  // task prompt only
};
enum class PlannerStage { atomic, task };

PlannerMode parse_planner_mode(const std::string& name);
std::string planner_mode_name(PlannerMode mode);
PlannerStage parse_planner_stage(const std::string& name);

struct PlannerConfig {
  PlannerMode mode = PlannerMode::prompted;
  std::size_t atomic_length = 5;
  std::size_t task_length = 5;
  std::size_t small_dim = 512;
  std::size_t ffn_hidden = 512;
  /// Lets the atomic stage update the backbone too.
  bool update_backbone_atomic = false;

  /// planner.* keys
  static PlannerConfig from_config(const Config& cfg);
};

struct StageTrainOptions {
  AdamWConfig optim{5e-5, 0.9, 0.999, 1e-8, 0.0};
  std::size_t batch = 128;
  std::size_t max_steps = 1000;
  /// Validation interval in steps; 0 means once per pass over the data.
  std::size_t eval_every = 0;
  std::size_t patience = 2;
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct StageTrainReport {
  std::size_t steps = 0;
  std::vector<double> losses;
  std::optional<double> best_valid_loss;
  bool stopped_early = false;
};

/// [BOS] r_x [SEP] r_y [EOS]; targets cover r_y and [EOS].
struct PlannerSequence {
  std::vector<int> ids;
  std::size_t target_begin = 0;
};

PlannerSequence encode_planner_pair(const Tokenizer& tok, const TransitionPath& observed,
                                    const std::vector<PathStep>& continuation);
std::vector<int> encode_planner_prefix(const Tokenizer& tok, const TransitionPath& observed);

/// Prefix-tuned generative planner over a decoder-only backbone. The
/// backbone is held by handle; clone it first if the caller keeps training it.
class GenerativePlanner {
 public:
  GenerativePlanner(TransformerLM backbone, Tokenizer tok, PlannerConfig cfg, std::uint64_t seed);

  StageTrainReport train_stage(PlannerStage stage, const std::vector<PathPair>& train,
                               const std::vector<PathPair>& valid, const StageTrainOptions& opts);

  /// Mean cross-entropy over r_y and [EOS] tokens. With live set, the stage's
  /// prompt is realized on the tape; other stages use their stored matrices.
  Tensor stage_loss(PlannerStage stage, const std::vector<PathPair>& batch, bool live) const;
  double evaluate_loss(PlannerStage stage, const std::vector<PathPair>& pairs) const;

  /// Per-layer memory [task z'; atomic z] for the prompts usable in `stage`.
  ForwardOptions prompt_options(PlannerStage stage, bool live) const;
  std::size_t prompt_length(PlannerStage stage) const;

  /// Decoded continuations, repaired to relation-led form. An r_x without
  /// events is replaced by [NOEVT]. max_hops of 0 keeps every step.
  std::vector<std::vector<PathStep>> plan(const TransitionPath& observed, const DecodeParams& params,
                                          std::size_t n_candidates, std::size_t max_hops = 0) const;

  bool stage_trained(PlannerStage stage) const;
  const PromptStage* prompts(PlannerStage stage) const;
  PromptStage* prompts(PlannerStage stage);
  const TransformerLM& backbone() const { return backbone_; }
  const Tokenizer& tokenizer() const { return tok_; }
  const PlannerConfig& config() const { return cfg_; }

  std::uint64_t backbone_checksum() const;
  std::uint64_t stage_checksum(PlannerStage stage) const;

  /// "backbone.*", "prompt.atomic.*", "prompt.task.*" and "planner.meta".
  TensorMap state() const;
  static GenerativePlanner from_state(const TensorMap& state, Tokenizer tok);

 private:
  std::vector<Tensor> trainable_for(PlannerStage stage);

  TransformerLM backbone_;
  Tokenizer tok_;
  PlannerConfig cfg_;
  std::optional<PromptStage> atomic_, task_;
  bool atomic_trained_ = false, task_trained_ = false;
};

}  // namespace evplan
