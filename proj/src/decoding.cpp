#include "evplan/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evplan/error.hpp"
#include "evplan/rng.hpp"

namespace evplan {

DecodeStrategy parse_strategy(const std::string& name) {
  if (name == "greedy") return DecodeStrategy::greedy;
  if (name == "beam_topk" || name == "beam") return DecodeStrategy::beam_topk;
  if (name == "topk_sample" || name == "sample") return DecodeStrategy::topk_sample;
  throw UsageError("unknown decode strategy '" + name + "' (greedy, beam_topk, topk_sample)");
}

std::string strategy_name(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::greedy: return "greedy";
    case DecodeStrategy::beam_topk: return "beam_topk";
    case DecodeStrategy::topk_sample: return "topk_sample";
  }
  return "greedy";
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

void finalize(Hypothesis& h) {
  h.score = h.tokens.empty() ? 0.0 : h.log_prob / static_cast<double>(h.tokens.size());
}

std::vector<int> concat_ids(std::span<const int> prefix, const std::vector<int>& tail) {
  std::vector<int> out(prefix.begin(), prefix.end());
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

std::vector<Hypothesis> greedy(std::span<const int> prefix, const DecodeParams& p, const NextLogitsFn& next) {
  Hypothesis h;
  for (std::size_t step = 0; step < p.max_new; ++step) {
    auto logits = next({concat_ids(prefix, h.tokens)}).at(0);
    auto lp = log_softmax(logits);
    const std::size_t tok = argmax(logits);
    h.tokens.push_back(static_cast<int>(tok));
    h.log_prob += lp[tok];
    if (static_cast<int>(tok) == p.eos_id) {
      h.finished = true;
      break;
    }
  }
  finalize(h);
  return {h};
}

// Indices of the k largest entries of logits/temperature + Gumbel noise.
std::vector<std::size_t> gumbel_top_k(std::span<const double> logits, std::size_t k, double temperature, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keyed(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keyed[i] = {logits[i] / temperature - std::log(-std::log(u)), i};
  }
  k = std::min(k, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keyed[i].second;
  return out;
}

std::vector<Hypothesis> beam_topk(std::span<const int> prefix, const DecodeParams& p, const NextLogitsFn& next) {
  Rng rng(p.seed, 0xbea3);
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;
  for (std::size_t step = 0; step < p.max_new && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) prefixes.push_back(concat_ids(prefix, h.tokens));
    auto logits = next(prefixes);
    std::vector<Hypothesis> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      auto lp = log_softmax(logits[b]);
      for (std::size_t tok : gumbel_top_k(logits[b], p.top_k, p.temperature, rng)) {
        Hypothesis c = live[b];
        c.tokens.push_back(static_cast<int>(tok));
        c.log_prob += lp[tok];
        c.finished = static_cast<int>(tok) == p.eos_id;
        finalize(c);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    live.clear();
    for (auto& c : candidates) {
      if (live.size() + done.size() >= p.beam_width && live.size() >= p.beam_width) break;
      if (c.finished) {
        done.push_back(std::move(c));
      } else if (live.size() < p.beam_width) {
        live.push_back(std::move(c));
      }
    }
    // stop once the finished pool holds beam_width hypotheses that beat every live one
    if (done.size() >= p.beam_width) {
      std::sort(done.begin(), done.end(), better);
      if (live.empty() || better(done[p.beam_width - 1], live.front())) break;
    }
  }
  for (auto& h : live) done.push_back(std::move(h));
  std::sort(done.begin(), done.end(), better);
  if (done.size() > p.beam_width) done.resize(p.beam_width);
  return done;
}

std::vector<Hypothesis> topk_sample(std::span<const int> prefix, const DecodeParams& p, const NextLogitsFn& next) {
  std::vector<Hypothesis> out;
  for (std::size_t n = 0; n < std::max<std::size_t>(1, p.num_return); ++n) {
    Rng rng(p.seed, 0x5a3b + n);
    Hypothesis h;
    for (std::size_t step = 0; step < p.max_new; ++step) {
      auto logits = next({concat_ids(prefix, h.tokens)}).at(0);
      auto lp = log_softmax(logits);
      const std::size_t k = std::min(p.top_k, logits.size());
      std::vector<std::size_t> order(logits.size());
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
      std::vector<double> w(k);
      const double top = logits[order[0]];
      double z = 0.0;
      for (std::size_t i = 0; i < k; ++i) z += (w[i] = std::exp((logits[order[i]] - top) / p.temperature));
      double u = rng.uniform() * z;
      std::size_t pick = k - 1;
      for (std::size_t i = 0; i < k; ++i) {
        if (u < w[i]) {
          pick = i;
          break;
        }
        u -= w[i];
      }
      const std::size_t tok = order[pick];
      h.tokens.push_back(static_cast<int>(tok));
      h.log_prob += lp[tok];
      if (static_cast<int>(tok) == p.eos_id) {
        h.finished = true;
        break;
      }
    }
    finalize(h);
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> decode(std::span<const int> prefix, const DecodeParams& params, const NextLogitsFn& next) {
  if (prefix.empty()) throw UsageError("decode: prefix must contain at least [BOS]");
  if (params.max_new == 0) throw UsageError("decode: max_new must be at least 1");
  if (params.temperature <= 0.0) throw UsageError("decode: temperature must be positive");
  if (params.top_k == 0 || params.beam_width == 0) throw UsageError("decode: top_k and beam_width must be positive");
  switch (params.strategy) {
    case DecodeStrategy::greedy: return greedy(prefix, params, next);
    case DecodeStrategy::beam_topk: {
      auto beams = beam_topk(prefix, params, next);
      if (beams.size() > params.num_return) beams.resize(params.num_return);
      return beams;
    }
    case DecodeStrategy::topk_sample: return topk_sample(prefix, params, next);
  }
  throw UsageError("decode: unknown strategy");
}

NextLogitsFn lm_next_logits(const TransformerLM& model, int pad_id, ForwardOptions base) {
  return [&model, pad_id, base = std::move(base)](const std::vector<std::vector<int>>& prefixes) {
    auto batch = TokenBatch::pack(prefixes, pad_id);
    auto out = model.forward(batch, base);
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
}

}  // namespace evplan
