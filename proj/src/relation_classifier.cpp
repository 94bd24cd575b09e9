#include "evplan/relation_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "evplan/autodiff.hpp"
#include "evplan/optim.hpp"
#include "evplan/rng.hpp"
#include "evplan/transformer.hpp"

namespace evplan {

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// [B x N] row-averaging matrix for concatenated id lists.
Tensor averaging_matrix(const std::vector<std::vector<int>>& lists, std::vector<int>& flat) {
  flat.clear();
  for (const auto& l : lists) flat.insert(flat.end(), l.begin(), l.end());
  Tensor a(Shape{lists.size(), flat.size()});
  std::size_t col = 0;
  for (std::size_t b = 0; b < lists.size(); ++b) {
    for (std::size_t k = 0; k < lists[b].size(); ++k) {
      a.values()[b * flat.size() + col++] = 1.0 / static_cast<double>(lists[b].size());
    }
  }
  return a;
}

}  // namespace

std::vector<int> RelationClassifier::word_ids(const std::string& event) const {
  std::vector<int> ids;
  for (const auto& w : split_words(normalize_event(event))) {
    auto it = word_index_.find(w);
    ids.push_back(it == word_index_.end() ? 0 : it->second);
  }
  if (ids.empty()) ids.push_back(0);
  return ids;
}

Tensor RelationClassifier::logits(const std::vector<Triple>& pairs) const {
  std::vector<std::vector<int>> heads, tails;
  for (const auto& p : pairs) {
    heads.push_back(word_ids(p.head));
    tails.push_back(word_ids(p.tail));
  }
  std::vector<int> hf, tf;
  Tensor ah = averaging_matrix(heads, hf), at = averaging_matrix(tails, tf);
  Tensor eh = matmul(ah, embedding_lookup(emb_, hf));
  Tensor et = matmul(at, embedding_lookup(emb_, tf));
  std::vector<Tensor> parts{eh, et};
  Tensor h = tanh(add(matmul(concat(parts, 1), w1_), b1_));
  return add(matmul(h, w2_), b2_);
}

RelationClassifier RelationClassifier::train(const std::vector<Triple>& triples, const RelClsConfig& cfg,
                                             RelClsReport* report) {
  std::vector<Triple> data;
  for (const auto& t : triples)
    if (!is_reverse_relation(t.relation)) data.push_back(t);
  std::set<std::string> label_set;
  for (const auto& t : data) label_set.insert(t.relation);
  if (label_set.size() < 2) {
    throw DegenerateTrainingError("relation classifier needs at least 2 relation labels, found " +
                                  std::to_string(label_set.size()));
  }
  if (data.size() < 20) {
    throw DataError("relation classifier needs at least 20 forward triples, got " + std::to_string(data.size()));
  }
  Rng rng(cfg.seed, 0x7e1c);
  rng.shuffle(std::span<Triple>(data));
  const SplitSizes sz = split_sizes(data.size());
  std::vector<Triple> train(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(sz.train));
  std::vector<Triple> valid(data.begin() + static_cast<std::ptrdiff_t>(sz.train),
                            data.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.valid));
  std::vector<Triple> test(data.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.valid), data.end());

  RelationClassifier c;
  c.labels_.assign(label_set.begin(), label_set.end());
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < c.labels_.size(); ++i) label_index[c.labels_[i]] = static_cast<int>(i);
  std::set<std::string> vocab;
  for (const auto& t : train) {
    for (const auto& w : split_words(normalize_event(t.head))) vocab.insert(w);
    for (const auto& w : split_words(normalize_event(t.tail))) vocab.insert(w);
  }
  c.words_.push_back("<unk>");
  for (const auto& w : vocab) {
    c.word_index_[w] = static_cast<int>(c.words_.size());
    c.words_.push_back(w);
  }
  c.dim_ = cfg.dim;
  c.hidden_ = cfg.hidden;
  Rng init(cfg.seed, 0x1e17);
  c.emb_ = init_normal(c.words_.size(), cfg.dim, 0.1, init);
  c.w1_ = init_normal(2 * cfg.dim, cfg.hidden, 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.dim)), init);
  c.b1_ = init_constant(cfg.hidden, 0.0);
  c.w2_ = init_normal(cfg.hidden, c.labels_.size(), 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), init);
  c.b2_ = init_constant(c.labels_.size(), 0.0);

  std::vector<Tensor> params{c.emb_, c.w1_, c.b1_, c.w2_, c.b2_};
  AdamWState opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay}, params);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_valid = -1.0;
  TensorMap best;
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(cfg.seed, 0xe000 + epoch);
    erng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size(); s += batch) {
      std::vector<Triple> mb;
      std::vector<int> targets;
      for (std::size_t i = s; i < std::min(order.size(), s + batch); ++i) {
        mb.push_back(train[order[i]]);
        targets.push_back(label_index.at(train[order[i]].relation));
      }
      zero_grads(params);
      Tape tape;
      TapeScope scope(tape);
      tape.backward(cross_entropy(c.logits(mb), targets, -1));
      adamw_step(params, opt);
    }
    const double v = c.accuracy(valid.empty() ? train : valid);
    if (v > best_valid) {
      best_valid = v;
      best.clear();
      for (auto& [name, t] : c.parameters()) best.emplace(name, t.detach());
    }
  }
  if (!best.empty()) {
    TensorMap mine = c.parameters();
    restore_into(best, mine);
  }
  if (report) {
    report->n_train = train.size();
    report->n_valid = valid.size();
    report->n_test = test.size();
    report->train_accuracy = c.accuracy(train);
    report->valid_accuracy = valid.empty() ? 0.0 : c.accuracy(valid);
    report->test_accuracy = test.empty() ? 0.0 : c.accuracy(test);
  }
  return c;
}

std::vector<std::vector<double>> RelationClassifier::probabilities(const std::vector<Triple>& pairs) const {
  if (!trained()) throw UsageError("relation classifier used before training or loading");
  Tensor p = softmax(logits(pairs));
  const std::size_t L = labels_.size();
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out.emplace_back(p.values().begin() + static_cast<std::ptrdiff_t>(i * L),
                     p.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * L));
  return out;
}

RelationClassifier::Prediction RelationClassifier::classify(const std::string& from, const std::string& to) const {
  auto p = probabilities({Triple{from, "", to}}).front();
  const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return {labels_[best], p[best]};
}

double RelationClassifier::accuracy(const std::vector<Triple>& triples) const {
  if (triples.empty()) throw DataError("accuracy over an empty triple set");
  std::size_t hit = 0;
  const std::size_t chunk = 256;
  for (std::size_t s = 0; s < triples.size(); s += chunk) {
    std::vector<Triple> part(triples.begin() + static_cast<std::ptrdiff_t>(s),
                             triples.begin() + static_cast<std::ptrdiff_t>(std::min(triples.size(), s + chunk)));
    auto probs = probabilities(part);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto best = static_cast<std::size_t>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
      hit += labels_[best] == part[i].relation;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(triples.size());
}

RelationFn RelationClassifier::as_function() const {
  return [this](const std::string& from, const std::string& to) { return classify(from, to).label; };
}

TensorMap RelationClassifier::parameters() const {
  return {{"emb", emb_}, {"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
}

void RelationClassifier::save(const std::filesystem::path& path) const {
  if (!trained()) throw UsageError("cannot save an untrained relation classifier");
  save_checkpoint(path, parameters());
  nlohmann::json meta{{"labels", labels_}, {"words", words_}, {"dim", dim_}, {"hidden", hidden_}};
  std::ofstream out(path.string() + ".meta.json");
  if (!out) throw DataError("cannot write " + path.string() + ".meta.json");
  out << meta.dump(1) << '\n';
}

RelationClassifier RelationClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".meta.json");
  if (!in) throw DataError("missing classifier metadata " + path.string() + ".meta.json (run train-relcls)");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad classifier metadata: " + std::string(e.what()));
  }
  RelationClassifier c;
  c.labels_ = meta.at("labels").get<std::vector<std::string>>();
  c.words_ = meta.at("words").get<std::vector<std::string>>();
  c.dim_ = meta.at("dim").get<std::size_t>();
  c.hidden_ = meta.at("hidden").get<std::size_t>();
  for (std::size_t i = 1; i < c.words_.size(); ++i) c.word_index_[c.words_[i]] = static_cast<int>(i);
  c.emb_ = Tensor(Shape{c.words_.size(), c.dim_});
  c.w1_ = Tensor(Shape{2 * c.dim_, c.hidden_});
  c.b1_ = Tensor(Shape{c.hidden_});
  c.w2_ = Tensor(Shape{c.hidden_, c.labels_.size()});
  c.b2_ = Tensor(Shape{c.labels_.size()});
  TensorMap mine = c.parameters();
  restore_into(load_checkpoint(path), mine);
  return c;
}

}  // namespace evplan
