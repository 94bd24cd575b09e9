#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "evplan/autodiff.hpp"
#include "evplan/checkpoint.hpp"
#include "evplan/config.hpp"
#include "evplan/rng.hpp"
#include "evplan/tensor.hpp"

namespace evplan {

struct LmConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t width = 128;
  std::size_t ff_width = 512;
  std::size_t max_len = 128;
  std::size_t vocab = 0;
  bool tie_embeddings = true;
  double dropout = 0.0;
  double init_std = 0.02;

  void validate() const;
  /// Reads lm.* keys, falling back to the current values.
  static LmConfig from_config(const Config& cfg, LmConfig base);
  static LmConfig from_config(const Config& cfg);
};

/// Right-padded batch of token sequences, row-major [batch x length].
struct TokenBatch {
  std::vector<int> ids;
  std::size_t batch = 0;
  std::size_t length = 0;

  static TokenBatch pack(const std::vector<std::vector<int>>& sequences, int pad_id);
  int at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
};

/// Extra key/value rows [P x width] prepended to one layer's self-attention.
struct LayerMemory {
  Tensor keys;
  Tensor values;
};

/// Replaces a layer's self-attention output. Receives that output and the
/// residual stream entering the layer (before its first layer norm).
using AttentionOverride = std::function<Tensor(const Tensor& attention_out, const Tensor& layer_input)>;

struct ForwardOptions {
  /// Empty, or one entry per layer (entries may hold undefined tensors).
  std::vector<LayerMemory> memory;
  /// Index of the first text position; prompt rows occupy the slots before it.
  std::size_t position_offset = 0;
  std::optional<std::size_t> override_layer;
  AttentionOverride attention_override;
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
  Tensor logits;                // [batch*length x vocab]
  std::vector<Tensor> hidden;   // residual stream after each layer
};

/// Pre-norm decoder-only transformer with learned absolute positions.
class TransformerLM {
 public:
  TransformerLM() = default;
  TransformerLM(const LmConfig& config, std::uint64_t seed);

  const LmConfig& config() const { return config_; }

  ForwardResult forward(const TokenBatch& batch, const ForwardOptions& opts = {}) const;

  /// Next-token cross-entropy; targets equal to pad_id are ignored.
  Tensor lm_loss(const TokenBatch& batch, int pad_id, const ForwardOptions& opts = {}) const;

  /// Targets for lm_loss: position t predicts token t+1.
  static std::vector<int> shifted_targets(const TokenBatch& batch, int pad_id);

  TensorMap named_parameters() const;
  std::vector<Tensor> parameters() const;
  void set_trainable(bool trainable);

  /// Parameters plus a "config" tensor so the model can be rebuilt from a checkpoint.
  TensorMap state() const;
  static TransformerLM from_state(const TensorMap& state);
  void load_parameters(const TensorMap& params);
  /// Independent copy of every parameter.
  TransformerLM clone() const;

 private:
  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w_fc, b_fc, w_proj, b_proj;
  };

  LmConfig config_;
  Tensor tok_emb_;
  Tensor pos_emb_;
  std::vector<Layer> layers_;
  Tensor lnf_gain_, lnf_bias_;
  Tensor out_proj_;  // [width x vocab], only when untied
};

/// [rows x cols] parameter drawn from N(0, std^2).
Tensor init_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);
Tensor init_constant(std::size_t n, double value);

}  // namespace evplan
