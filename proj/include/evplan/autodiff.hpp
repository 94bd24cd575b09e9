#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "evplan/tensor.hpp"

namespace evplan {

enum class OpKind {
  matmul,
  matmul_transposed,
  add,
  mul,
  softmax,
  layer_norm,
  gelu,
  embedding_lookup,
  concat,
  slice,
  dropout,
  sub,
  scale,
  tanh,
  sum,
  attention,
  cross_entropy,
};

const char* op_name(OpKind kind);

struct TapeRecord {
  OpKind kind;
  std::vector<Tensor> inputs;
  Tensor output;
  // Reads output.grad() and accumulates into the inputs that require grad.
  std::function<void(TapeRecord&)> backward;
};

/// Gradients of the leaves reached by a backward pass, keyed by tensor id.
class GradientMap {
 public:
  void insert(const Tensor& leaf) { leaves_.emplace(leaf.id(), leaf); }
  bool contains(const Tensor& t) const { return leaves_.count(t.id()) != 0; }
  std::span<const double> at(const Tensor& t) const;
  std::size_t size() const { return leaves_.size(); }

 private:
  std::unordered_map<std::uint64_t, Tensor> leaves_;
};

/// Ordered log of primitive applications. Operations record onto the tape
/// made active by a TapeScope, but only when an input requires grad.
class Tape {
 public:
  void push(TapeRecord record) { records_.push_back(std::move(record)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<TapeRecord>& records() const { return records_; }
  bool produced(const Tensor& t) const;
  void clear() { records_.clear(); }

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate, so zero
  /// them between steps.
  GradientMap backward(const Tensor& loss);

 private:
  std::vector<TapeRecord> records_;
};

Tape* active_tape() noexcept;

class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

GradientMap backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// primitives

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[n x k] * b[m x k]^T
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
/// Elementwise; b may also be a row vector of size cols(a), broadcast over rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// tanh approximation
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Half-open range [begin, end) along axis 0 (rows) or the last axis (cols).
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Inverted dropout; the mask is a pure function of (seed, stream).
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, std::uint64_t stream, bool training = true);
Tensor sum(const Tensor& x);

struct AttentionOptions {
  std::size_t batch = 1;
  std::size_t heads = 1;
  bool causal = false;
  /// Valid key count per batch item; empty means every key is valid.
  std::vector<std::size_t> key_lengths;
};

/// Multi-head scaled dot-product attention over a batch stored as
/// [batch*len x width] rows. Optional memory keys/values [P x width] are
/// shared across the batch, sit before the regular keys and are always
/// visible. Causal masking lets query i see regular keys j <= i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts,
                 const Tensor& mem_k = Tensor(), const Tensor& mem_v = Tensor());

/// The attention probabilities the op above would use, laid out as
/// [batch][head][query][P + key].
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionOptions& opts,
                                      const Tensor& mem_k = Tensor());

/// Mean of -log softmax(logits)[target] over rows whose target is not ignore_index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index);

struct OpAttrs {
  std::vector<double> scalars;
  std::vector<int> ids;
};

/// Generic dispatcher over the named primitive set.
///   layer_norm:       scalars = {eps}; inputs {x} or {x, gain, bias}
///   embedding_lookup: ids = token ids; inputs {table}
///   concat:           scalars = {axis}
///   slice:            scalars = {axis, begin, end}
///   dropout:          scalars = {rate, seed, stream}
Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace evplan
