#include "evplan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

#include "evplan/error.hpp"
#include "evplan/rng.hpp"

namespace evplan {

namespace {

thread_local Tape* g_active_tape = nullptr;

Tensor finish(OpKind kind, std::vector<Tensor> inputs, Tensor out, std::function<void(TapeRecord&)> bw) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->push(TapeRecord{kind, std::move(inputs), out, std::move(bw)});
  return out;
}

void require_2d(const Tensor& t, const char* op, const char* name) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": " + name + " must be 2-D, got " + shape_string(t.shape()));
  }
}

// C[n x m] += A[n x k] * B[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[n x k] += dC[n x m] * B[k x m]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t n, std::size_t m, std::size_t k) {
  std::vector<double> bt(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  gemm_nn(dc, bt.data(), da, n, m, k);
}

// dB[k x m] += A[n x k]^T * dC[n x m]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * m;
      for (std::size_t j = 0; j < m; ++j) brow[j] += av * drow[j];
    }
  }
}

enum class Broadcast { none, row };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.ndim() == 1 && b.dim(0) == a.cols()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " disagree on the last axis");
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_transposed: return "matmul_transposed";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::dropout: return "dropout";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::sum: return "sum";
    case OpKind::attention: return "attention";
    case OpKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// tape

std::span<const double> GradientMap::at(const Tensor& t) const {
  auto it = leaves_.find(t.id());
  if (it == leaves_.end()) throw UsageError("no gradient recorded for tensor " + std::to_string(t.id()));
  return it->second.grad();
}

bool Tape::produced(const Tensor& t) const {
  return std::any_of(records_.begin(), records_.end(), [&](const TapeRecord& r) { return r.output.same(t); });
}

GradientMap Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar");
  }
  if (!produced(loss)) {
    throw DetachedGraphError("backward: loss was not produced on this tape");
  }
  std::unordered_set<std::uint64_t> produced_ids;
  for (auto& r : records_) {
    produced_ids.insert(r.output.id());
    r.output.clear_grad();
  }
  Tensor seed = loss;
  seed.ensure_grad()[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(*it);
  }
  GradientMap map;
  for (auto& r : records_) {
    for (auto& in : r.inputs) {
      if (in.requires_grad() && produced_ids.count(in.id()) == 0) {
        in.ensure_grad();
        map.insert(in);
      }
    }
  }
  return map;
}

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

GradientMap backward(const Tensor& loss, Tape& tape) { return tape.backward(loss); }

// ---------------------------------------------------------------------------
// primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul", "lhs");
  require_2d(b, "matmul", "rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: lhs axis 1 (" + std::to_string(k) + ") != rhs axis 0 (" +
                         std::to_string(b.dim(0)) + ")");
  }
  Tensor out(Shape{n, m});
  gemm_nn(a.values().data(), b.values().data(), out.values().data(), n, k, m);
  return finish(OpKind::matmul, {a, b}, out, [n, k, m](TapeRecord& r) {
    auto g = r.output.grad();
    auto& A = r.inputs[0];
    auto& B = r.inputs[1];
    if (A.requires_grad()) gemm_nt(g.data(), B.values().data(), A.ensure_grad().data(), n, m, k);
    if (B.requires_grad()) gemm_tn(A.values().data(), g.data(), B.ensure_grad().data(), n, k, m);
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_transposed", "lhs");
  require_2d(b, "matmul_transposed", "rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_transposed: lhs axis 1 (" + std::to_string(k) + ") != rhs axis 1 (" +
                         std::to_string(b.dim(1)) + ")");
  }
  Tensor out(Shape{n, m});
  gemm_nt(a.values().data(), b.values().data(), out.values().data(), n, k, m);
  return finish(OpKind::matmul_transposed, {a, b}, out, [n, k, m](TapeRecord& r) {
    auto g = r.output.grad();
    auto& A = r.inputs[0];
    auto& B = r.inputs[1];
    if (A.requires_grad()) gemm_nn(g.data(), B.values().data(), A.ensure_grad().data(), n, m, k);
    if (B.requires_grad()) gemm_tn(g.data(), A.values().data(), B.ensure_grad().data(), n, m, k);
  });
}

namespace {
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const Broadcast bc = check_binary(a, b, op_name(kind));
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  const std::size_t cols = a.cols();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double y = bc == Broadcast::row ? bv[i % cols] : bv[i];
    switch (kind) {
      case OpKind::add: o[i] = av[i] + y; break;
      case OpKind::sub: o[i] = av[i] - y; break;
      default: o[i] = av[i] * y; break;
    }
  }
  return finish(kind, {a, b}, out, [kind, bc, cols](TapeRecord& r) {
    auto g = r.output.grad();
    auto& A = r.inputs[0];
    auto& B = r.inputs[1];
    if (A.requires_grad()) {
      auto ga = A.ensure_grad();
      auto bv2 = B.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (kind == OpKind::mul) {
          ga[i] += g[i] * (bc == Broadcast::row ? bv2[i % cols] : bv2[i]);
        } else {
          ga[i] += g[i];
        }
      }
    }
    if (B.requires_grad()) {
      auto gb = B.ensure_grad();
      auto av2 = A.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = g[i];
        if (kind == OpKind::sub) d = -d;
        if (kind == OpKind::mul) d *= av2[i];
        gb[bc == Broadcast::row ? i % cols : i] += d;
      }
    }
  });
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  return finish(OpKind::scale, {a}, out, [factor](TapeRecord& r) {
    auto g = r.output.grad();
    auto ga = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor softmax(const Tensor& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = o.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  return finish(OpKind::softmax, {a}, out, [rows, cols](TapeRecord& r) {
    auto g = r.output.grad();
    auto y = r.output.values();
    auto ga = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t base = i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < cols; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

namespace {
Tensor layer_norm_impl(const Tensor& x, const Tensor* gain, const Tensor* bias, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain != nullptr) {
    if (gain->size() != cols || bias->size() != cols) {
      throw DimensionError("layer_norm: gain/bias size must equal last axis " + std::to_string(cols));
    }
  }
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xr[j] - mean) * is;
      (*xhat)[r * cols + j] = h;
      o[r * cols + j] = gain != nullptr ? h * gain->values()[j] + bias->values()[j] : h;
    }
  }
  std::vector<Tensor> inputs{x};
  if (gain != nullptr) {
    inputs.push_back(*gain);
    inputs.push_back(*bias);
  }
  const bool affine = gain != nullptr;
  return finish(OpKind::layer_norm, std::move(inputs), out, [rows, cols, affine, xhat, inv_std](TapeRecord& r) {
    auto g = r.output.grad();
    std::vector<double> dh(cols);
    const bool need_x = r.inputs[0].requires_grad();
    std::span<double> gx = need_x ? r.inputs[0].ensure_grad() : std::span<double>{};
    std::span<double> gg, gb;
    std::span<const double> gain_v;
    if (affine) {
      gain_v = r.inputs[1].values();
      if (r.inputs[1].requires_grad()) gg = r.inputs[1].ensure_grad();
      if (r.inputs[2].requires_grad()) gb = r.inputs[2].ensure_grad();
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t base = i * cols;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double gj = g[base + j];
        const double h = (*xhat)[base + j];
        if (!gg.empty()) gg[j] += gj * h;
        if (!gb.empty()) gb[j] += gj;
        dh[j] = affine ? gj * gain_v[j] : gj;
        mean_dh += dh[j];
        mean_dh_h += dh[j] * h;
      }
      if (!need_x) continue;
      mean_dh /= static_cast<double>(cols);
      mean_dh_h /= static_cast<double>(cols);
      const double is = (*inv_std)[i];
      for (std::size_t j = 0; j < cols; ++j) {
        gx[base + j] += is * (dh[j] - mean_dh - (*xhat)[base + j] * mean_dh_h);
      }
    }
  });
}
}  // namespace

Tensor layer_norm(const Tensor& x, double eps) { return layer_norm_impl(x, nullptr, nullptr, eps); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  return layer_norm_impl(x, &gain, &bias, eps);
}

Tensor gelu(const Tensor& a) {
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = av[i];
    o[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
  return finish(OpKind::gelu, {a}, out, [](TapeRecord& r) {
    auto g = r.output.grad();
    auto xv = r.inputs[0].values();
    auto ga = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = xv[i];
      const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      ga[i] += g[i] * d;
    }
  });
}

Tensor tanh(const Tensor& a) {
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(av[i]);
  return finish(OpKind::tanh, {a}, out, [](TapeRecord& r) {
    auto g = r.output.grad();
    auto y = r.output.values();
    auto ga = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup", "table");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  Tensor out(Shape{ids.size(), width});
  auto o = out.values();
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table axis 0 (" +
                           std::to_string(vocab) + ")");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                o.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return finish(OpKind::embedding_lookup, {table}, out, [saved = std::move(saved), width](TapeRecord& r) {
    auto g = r.output.grad();
    auto gt = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(saved[i]) * width;
      for (std::size_t j = 0; j < width; ++j) gt[base + j] += g[i * width + j];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis " + std::to_string(axis) + " unsupported for 2-D tensors");
  for (const auto& p : parts) require_2d(p, "concat", "input");
  const std::size_t other = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t o = axis == 0 ? parts[i].dim(1) : parts[i].dim(0);
    if (o != other) {
      throw DimensionError("concat: input " + std::to_string(i) + " axis " + std::to_string(1 - axis) + " is " +
                           std::to_string(o) + ", expected " + std::to_string(other));
    }
    total += parts[i].dim(axis);
  }
  Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  Tensor out(shape);
  auto o = out.values();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), o.begin() + static_cast<std::ptrdiff_t>(offset * other));
    } else {
      const std::size_t w = p.dim(1);
      for (std::size_t r = 0; r < other; ++r) {
        std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                    o.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
      }
    }
    offset += p.dim(axis);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish(OpKind::concat, std::move(inputs), out, [axis, other, total](TapeRecord& r) {
    auto g = r.output.grad();
    std::size_t off = 0;
    for (auto& p : r.inputs) {
      const std::size_t extent = p.dim(axis);
      if (p.requires_grad()) {
        auto gp = p.ensure_grad();
        if (axis == 0) {
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off * other + i];
        } else {
          for (std::size_t rr = 0; rr < other; ++rr) {
            for (std::size_t j = 0; j < extent; ++j) gp[rr * extent + j] += g[rr * total + off + j];
          }
        }
      }
      off += extent;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_2d(x, "slice", "input");
  if (axis > 1) throw DimensionError("slice: axis " + std::to_string(axis) + " unsupported for 2-D tensors");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of extent " + std::to_string(x.dim(axis)));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t extent = end - begin;
  Tensor out(axis == 0 ? Shape{extent, cols} : Shape{rows, extent});
  auto o = out.values();
  auto xv = x.values();
  if (axis == 0) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(begin * cols), extent * cols, o.begin());
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), extent,
                  o.begin() + static_cast<std::ptrdiff_t>(r * extent));
    }
  }
  return finish(OpKind::slice, {x}, out, [axis, begin, extent, rows, cols](TapeRecord& r) {
    auto g = r.output.grad();
    auto gx = r.inputs[0].ensure_grad();
    if (axis == 0) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
    } else {
      for (std::size_t rr = 0; rr < rows; ++rr) {
        for (std::size_t j = 0; j < extent; ++j) gx[rr * cols + begin + j] += g[rr * extent + j];
      }
    }
  });
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, std::uint64_t stream, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Rng rng(seed, stream);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : keep;
  Tensor out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * (*mask)[i];
  return finish(OpKind::dropout, {x}, out, [mask](TapeRecord& r) {
    auto g = r.output.grad();
    auto gx = r.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return finish(OpKind::sum, {x}, Tensor::scalar(s), [](TapeRecord& r) {
    const double g = r.output.grad()[0];
    for (auto& v : r.inputs[0].ensure_grad()) v += g;
  });
}

// ---------------------------------------------------------------------------
// attention

namespace {

struct AttentionLayout {
  std::size_t batch, heads, tq, tk, mem, width, head_dim;
  double scale;
};

AttentionLayout check_attention(const Tensor& q, const Tensor& k, const Tensor* v, const AttentionOptions& opts,
                                const Tensor& mem_k, const Tensor* mem_v) {
  require_2d(q, "attention", "query");
  require_2d(k, "attention", "key");
  if (opts.batch == 0 || opts.heads == 0) throw DimensionError("attention: batch and heads must be positive");
  const std::size_t width = q.dim(1);
  if (k.dim(1) != width) {
    throw DimensionError("attention: key axis 1 (" + std::to_string(k.dim(1)) + ") != query axis 1 (" +
                         std::to_string(width) + ")");
  }
  if (v != nullptr && v->shape() != k.shape()) {
    throw DimensionError("attention: value shape " + shape_string(v->shape()) + " != key shape " +
                         shape_string(k.shape()));
  }
  if (width % opts.heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by heads " +
                         std::to_string(opts.heads));
  }
  if (q.dim(0) % opts.batch != 0 || k.dim(0) % opts.batch != 0) {
    throw DimensionError("attention: axis 0 of query/key not divisible by batch " + std::to_string(opts.batch));
  }
  AttentionLayout L{};
  L.batch = opts.batch;
  L.heads = opts.heads;
  L.tq = q.dim(0) / opts.batch;
  L.tk = k.dim(0) / opts.batch;
  L.width = width;
  L.head_dim = width / opts.heads;
  L.scale = 1.0 / std::sqrt(static_cast<double>(L.head_dim));
  L.mem = 0;
  if (mem_k.defined()) {
    require_2d(mem_k, "attention", "memory key");
    if (mem_k.dim(1) != width) {
      throw DimensionError("attention: memory key axis 1 (" + std::to_string(mem_k.dim(1)) + ") != width " +
                           std::to_string(width));
    }
    if (mem_v != nullptr && (!mem_v->defined() || mem_v->shape() != mem_k.shape())) {
      throw DimensionError("attention: memory value shape must equal memory key shape");
    }
    L.mem = mem_k.dim(0);
  }
  if (opts.causal && L.tq != L.tk) {
    throw DimensionError("attention: causal masking needs equal query/key lengths, got " + std::to_string(L.tq) +
                         " and " + std::to_string(L.tk));
  }
  if (!opts.key_lengths.empty()) {
    if (opts.key_lengths.size() != L.batch) throw DimensionError("attention: key_lengths size != batch");
    for (std::size_t len : opts.key_lengths) {
      if (len > L.tk) throw DimensionError("attention: key length exceeds key axis");
      if (len == 0 && L.mem == 0) throw DimensionError("attention: batch item with no visible keys");
    }
  }
  return L;
}

std::vector<double> attention_probs(const Tensor& q, const Tensor& k, const AttentionOptions& opts,
                                    const Tensor& mem_k, const AttentionLayout& L) {
  const std::size_t span = L.mem + L.tk;
  std::vector<double> probs(L.batch * L.heads * L.tq * span, 0.0);
  auto qv = q.values();
  auto kv = k.values();
  std::span<const double> mk = mem_k.defined() ? mem_k.values() : std::span<const double>{};
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < L.batch; ++b) {
    const std::size_t len = opts.key_lengths.empty() ? L.tk : opts.key_lengths[b];
    for (std::size_t h = 0; h < L.heads; ++h) {
      const std::size_t c0 = h * L.head_dim;
      for (std::size_t i = 0; i < L.tq; ++i) {
        double* p = probs.data() + ((b * L.heads + h) * L.tq + i) * span;
        const double* qi = qv.data() + (b * L.tq + i) * L.width + c0;
        double mx = neg_inf;
        for (std::size_t j = 0; j < span; ++j) {
          const double* kj;
          if (j < L.mem) {
            kj = mk.data() + j * L.width + c0;
          } else {
            const std::size_t t = j - L.mem;
            if (t >= len || (opts.causal && t > i)) {
              p[j] = neg_inf;
              continue;
            }
            kj = kv.data() + (b * L.tk + t) * L.width + c0;
          }
          double s = 0.0;
          for (std::size_t d = 0; d < L.head_dim; ++d) s += qi[d] * kj[d];
          p[j] = s * L.scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < span; ++j) {
          p[j] = p[j] == neg_inf ? 0.0 : std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < span; ++j) p[j] /= z;
      }
    }
  }
  return probs;
}

}  // namespace

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionOptions& opts,
                                      const Tensor& mem_k) {
  const auto L = check_attention(q, k, nullptr, opts, mem_k, nullptr);
  return attention_probs(q, k, opts, mem_k, L);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts, const Tensor& mem_k,
                 const Tensor& mem_v) {
  if (mem_k.defined() != mem_v.defined()) throw DimensionError("attention: memory keys and values come in pairs");
  const auto L = check_attention(q, k, &v, opts, mem_k, mem_k.defined() ? &mem_v : nullptr);
  auto probs = std::make_shared<std::vector<double>>(attention_probs(q, k, opts, mem_k, L));
  const std::size_t span = L.mem + L.tk;
  Tensor out(Shape{L.batch * L.tq, L.width});
  auto o = out.values();
  auto vv = v.values();
  std::span<const double> mv = mem_v.defined() ? mem_v.values() : std::span<const double>{};
  for (std::size_t b = 0; b < L.batch; ++b) {
    for (std::size_t h = 0; h < L.heads; ++h) {
      const std::size_t c0 = h * L.head_dim;
      for (std::size_t i = 0; i < L.tq; ++i) {
        const double* p = probs->data() + ((b * L.heads + h) * L.tq + i) * span;
        double* oi = o.data() + (b * L.tq + i) * L.width + c0;
        for (std::size_t j = 0; j < span; ++j) {
          if (p[j] == 0.0) continue;
          const double* vj =
              j < L.mem ? mv.data() + j * L.width + c0 : vv.data() + (b * L.tk + (j - L.mem)) * L.width + c0;
          for (std::size_t d = 0; d < L.head_dim; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  }
  std::vector<Tensor> inputs{q, k, v};
  if (mem_k.defined()) {
    inputs.push_back(mem_k);
    inputs.push_back(mem_v);
  }
  return finish(OpKind::attention, std::move(inputs), out, [L, probs, span](TapeRecord& r) {
    auto g = r.output.grad();
    auto& Q = r.inputs[0];
    auto& K = r.inputs[1];
    auto& V = r.inputs[2];
    const bool has_mem = r.inputs.size() == 5;
    auto qv = Q.values();
    auto kv = K.values();
    auto vv = V.values();
    std::span<const double> mkv = has_mem ? r.inputs[3].values() : std::span<const double>{};
    std::span<const double> mvv = has_mem ? r.inputs[4].values() : std::span<const double>{};
    std::span<double> gq = Q.requires_grad() ? Q.ensure_grad() : std::span<double>{};
    std::span<double> gk = K.requires_grad() ? K.ensure_grad() : std::span<double>{};
    std::span<double> gv = V.requires_grad() ? V.ensure_grad() : std::span<double>{};
    std::span<double> gmk, gmv;
    if (has_mem) {
      if (r.inputs[3].requires_grad()) gmk = r.inputs[3].ensure_grad();
      if (r.inputs[4].requires_grad()) gmv = r.inputs[4].ensure_grad();
    }
    std::vector<double> ds(span);
    for (std::size_t b = 0; b < L.batch; ++b) {
      for (std::size_t h = 0; h < L.heads; ++h) {
        const std::size_t c0 = h * L.head_dim;
        for (std::size_t i = 0; i < L.tq; ++i) {
          const double* p = probs->data() + ((b * L.heads + h) * L.tq + i) * span;
          const std::size_t qrow = (b * L.tq + i) * L.width + c0;
          const double* gi = g.data() + qrow;
          double dot = 0.0;
          for (std::size_t j = 0; j < span; ++j) {
            ds[j] = 0.0;
            if (p[j] == 0.0) continue;
            const double* vj =
                j < L.mem ? mvv.data() + j * L.width + c0 : vv.data() + (b * L.tk + (j - L.mem)) * L.width + c0;
            double dp = 0.0;
            for (std::size_t d = 0; d < L.head_dim; ++d) dp += gi[d] * vj[d];
            ds[j] = dp;
            dot += p[j] * dp;
          }
          for (std::size_t j = 0; j < span; ++j) {
            if (p[j] == 0.0) continue;
            const bool mem = j < L.mem;
            const std::size_t krow = mem ? j * L.width + c0 : (b * L.tk + (j - L.mem)) * L.width + c0;
            const double s = p[j] * (ds[j] - dot) * L.scale;
            const double* kj = mem ? mkv.data() + krow : kv.data() + krow;
            if (!gq.empty()) {
              for (std::size_t d = 0; d < L.head_dim; ++d) gq[qrow + d] += s * kj[d];
            }
            std::span<double> gkt = mem ? gmk : gk;
            if (!gkt.empty()) {
              for (std::size_t d = 0; d < L.head_dim; ++d) gkt[krow + d] += s * qv[qrow + d];
            }
            std::span<double> gvt = mem ? gmv : gv;
            if (!gvt.empty()) {
              for (std::size_t d = 0; d < L.head_dim; ++d) gvt[krow + d] += p[j] * gi[d];
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// loss

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: logits axis 0 (" + std::to_string(rows) + ") != target count (" +
                         std::to_string(targets.size()) + ")");
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  auto lv = logits.values();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " outside logits axis 1 (" +
                           std::to_string(vocab) + ")");
    }
    const double* x = lv.data() + r * vocab;
    double* p = probs->data() + r * vocab;
    const double mx = *std::max_element(x, x + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += (p[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    total += -(x[t] - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw EmptyBatchError("cross_entropy: every target is ignored");
  std::vector<int> saved(targets.begin(), targets.end());
  return finish(OpKind::cross_entropy, {logits}, Tensor::scalar(total / static_cast<double>(count)),
                [probs, saved = std::move(saved), ignore_index, vocab, count](TapeRecord& r) {
                  const double g = r.output.grad()[0] / static_cast<double>(count);
                  auto gl = r.inputs[0].ensure_grad();
                  for (std::size_t row = 0; row < saved.size(); ++row) {
                    if (saved[row] == ignore_index) continue;
                    const double* p = probs->data() + row * vocab;
                    double* d = gl.data() + row * vocab;
                    for (std::size_t j = 0; j < vocab; ++j) d[j] += g * p[j];
                    d[saved[row]] -= g;
                  }
                });
}

// ---------------------------------------------------------------------------

Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw DimensionError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                           std::to_string(inputs.size()));
    }
  };
  auto scalar = [&](std::size_t i, double fallback) { return i < attrs.scalars.size() ? attrs.scalars[i] : fallback; };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::matmul_transposed: need(2); return matmul_transposed(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
    case OpKind::softmax: need(1); return softmax(inputs[0]);
    case OpKind::gelu: need(1); return gelu(inputs[0]);
    case OpKind::tanh: need(1); return tanh(inputs[0]);
    case OpKind::sum: need(1); return sum(inputs[0]);
    case OpKind::scale: need(1); return scale(inputs[0], scalar(0, 1.0));
    case OpKind::layer_norm:
      if (inputs.size() == 3) return layer_norm(inputs[0], inputs[1], inputs[2], scalar(0, 1e-5));
      need(1);
      return layer_norm(inputs[0], scalar(0, 1e-5));
    case OpKind::embedding_lookup: need(1); return embedding_lookup(inputs[0], attrs.ids);
    case OpKind::concat: return concat(inputs, static_cast<std::size_t>(scalar(0, 0)));
    case OpKind::slice:
      need(1);
      return slice(inputs[0], static_cast<std::size_t>(scalar(0, 0)), static_cast<std::size_t>(scalar(1, 0)),
                   static_cast<std::size_t>(scalar(2, 0)));
    case OpKind::dropout:
      need(1);
      return dropout(inputs[0], scalar(0, 0.0), static_cast<std::uint64_t>(scalar(1, 0)),
                     static_cast<std::uint64_t>(scalar(2, 0)));
    case OpKind::attention:
    case OpKind::cross_entropy:
      throw UnsupportedOpError(std::string(op_name(kind)) + " has a dedicated entry point");
  }
  throw UnsupportedOpError("unsupported primitive kind " + std::to_string(static_cast<int>(kind)));
}

}  // namespace evplan
