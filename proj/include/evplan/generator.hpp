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

struct QueryLayerConfig {
  /// 0 takes the backbone's head count / feed-forward width.
  std::size_t heads = 0;
  std::size_t ff_width = 0;
  std::size_t max_path_len = 64;
  /// 1: single affine 2d -> d. 2: affine, gelu, affine.
  std::size_t fusion_layers = 1;

  static QueryLayerConfig from_config(const Config& cfg);
};

/// Encodes a path with one bidirectional block and lets the text attend to it.
/// The fused vector m = MLP([MHA(x); MHA(r)]) replaces MHA(x) in the host layer.
class EventQueryLayer {
 public:
  EventQueryLayer() = default;
  EventQueryLayer(const LmConfig& lm, const QueryLayerConfig& cfg, std::uint64_t seed);

  const QueryLayerConfig& config() const { return cfg_; }
  std::size_t width() const { return width_; }
  std::size_t heads() const { return heads_; }

  /// [batch*path_len x width]; token embeddings come from the shared table.
  Tensor encode_path(const Tensor& token_table, const TokenBatch& path, const std::vector<std::size_t>& lengths) const;

  /// Cross-attention from LN(layer_input) over the encoded path.
  Tensor path_attention(const Tensor& layer_input, const Tensor& encoded, std::size_t batch,
                        const std::vector<std::size_t>& lengths) const;
  std::vector<double> path_attention_weights(const Tensor& layer_input, const Tensor& encoded, std::size_t batch,
                                             const std::vector<std::size_t>& lengths) const;

  /// MLP([attention_out; path_out]).
  Tensor fuse(const Tensor& attention_out, const Tensor& path_out) const;

  /// Fusion that copies the first width inputs and ignores the path half.
  void set_identity_fusion();

  TensorMap parameters() const;
  std::vector<Tensor> trainable() const;
  void set_trainable(bool on);
  void load_parameters(const TensorMap& params);

 private:
  QueryLayerConfig cfg_;
  std::size_t width_ = 0, heads_ = 0;
  // path encoder
  Tensor pos_emb_, ln1_g_, ln1_b_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_, ln2_g_, ln2_b_, w_fc_, b_fc_, w_proj_, b_proj_;
  Tensor enc_ln_g_, enc_ln_b_;
  // cross attention
  Tensor xq_ln_g_, xq_ln_b_, xq_, xbq_, xk_, xbk_, xv_, xbv_, xo_, xbo_;
  // fusion
  Tensor f_w1_, f_b1_, f_w2_, f_b2_;
};

/// One training or evaluation item; `path` is the full gold path r = [r_x; r_y].
struct GeneratorExample {
  std::string context;
  std::string target;
  std::optional<TransitionPath> path;
};

/// [BOS] x [SEP] y [EOS] with the target span starting after [SEP]. Context
/// tokens are dropped from the front when the sequence exceeds max_len.
struct GeneratorSequence {
  std::vector<int> ids;
  std::size_t target_begin = 0;
};
GeneratorSequence encode_generator_example(const Tokenizer& tok, const std::string& context,
                                           const std::string& target, std::size_t max_len);
std::vector<int> encode_generator_prefix(const Tokenizer& tok, const std::string& context, std::size_t max_len);

/// Model-style path ids cut to max_len; a path without events becomes [NOEVT].
std::vector<int> encode_path_ids(const Tokenizer& tok, const TransitionPath& path, std::size_t max_len);

struct GeneratorTrainOptions {
  AdamWConfig optim{1e-4, 0.9, 0.999, 1e-8, 0.0};
  std::size_t batch = 16;
  std::size_t max_steps = 1000;
  std::size_t eval_every = 0;
  std::size_t patience = 2;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct GeneratorTrainReport {
  std::size_t steps = 0;
  std::vector<double> losses;
  std::optional<double> best_valid_loss;
  bool stopped_early = false;
};

/// Decoder-only LM with an event query layer on its last layer. With
/// path_aware false it is the plain fine-tuned LM and paths are ignored.
class PathAwareGenerator {
 public:
  PathAwareGenerator(TransformerLM backbone, Tokenizer tok, bool path_aware, const QueryLayerConfig& cfg,
                     std::uint64_t seed);

  bool path_aware() const { return query_.has_value(); }
  const TransformerLM& backbone() const { return backbone_; }
  const Tokenizer& tokenizer() const { return tok_; }
  EventQueryLayer* query_layer() { return query_ ? &*query_ : nullptr; }
  const EventQueryLayer* query_layer() const { return query_ ? &*query_ : nullptr; }

  /// Logits for packed text, each row conditioned on its own path. zero_path
  /// feeds zeros in place of MHA(r).
  ForwardResult forward(const TokenBatch& text, const std::vector<TransitionPath>& paths, bool zero_path = false) const;

  /// Mean cross-entropy over y and [EOS] tokens.
  Tensor loss(const std::vector<GeneratorExample>& batch) const;
  double evaluate_loss(const std::vector<GeneratorExample>& examples) const;
  /// exp of the token-weighted loss over y and [EOS].
  double perplexity(const std::vector<GeneratorExample>& examples) const;

  GeneratorTrainReport train(const std::vector<GeneratorExample>& train, const std::vector<GeneratorExample>& valid,
                             const GeneratorTrainOptions& opts);

  /// Decoded y per hypothesis (greedy by default gives one).
  std::vector<std::string> generate(const std::string& context, const TransitionPath& path,
                                    const DecodeParams& params = {}) const;

  std::vector<Tensor> parameters() const;

  /// "backbone.*", "query.*" and "generator.meta".
  TensorMap state() const;
  static PathAwareGenerator from_state(const TensorMap& state, Tokenizer tok);

 private:
  ForwardOptions query_options(const std::vector<TransitionPath>& paths, std::size_t batch, bool zero_path) const;
  void check_paths(const std::vector<GeneratorExample>& examples) const;

  TransformerLM backbone_;
  Tokenizer tok_;
  std::optional<EventQueryLayer> query_;
};

}  // namespace evplan
