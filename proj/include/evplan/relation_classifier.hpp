#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "evplan/checkpoint.hpp"
#include "evplan/event_graph.hpp"
#include "evplan/extraction.hpp"
#include "evplan/tensor.hpp"

namespace evplan {

class DegenerateTrainingError : public DataError {
 public:
  using DataError::DataError;
};

struct RelClsConfig {
  std::size_t dim = 32;
  std::size_t hidden = 64;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double learning_rate = 5e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct RelClsReport {
  std::size_t n_train = 0, n_valid = 0, n_test = 0;
  double train_accuracy = 0.0, valid_accuracy = 0.0, test_accuracy = 0.0;
};

/// Event-pair relation classifier: mean word embeddings of each event,
/// concatenated, one tanh hidden layer, softmax over forward relations.
class RelationClassifier {
 public:
  struct Prediction {
    std::string label;
    double probability = 0.0;
  };

  RelationClassifier() = default;

  /// Drops reverse-labelled triples, shuffles and splits 18:1:1, trains on
  /// the first part and keeps the epoch with the best validation accuracy.
  static RelationClassifier train(const std::vector<Triple>& triples, const RelClsConfig& cfg,
                                  RelClsReport* report = nullptr);

  bool trained() const { return !labels_.empty(); }
  Prediction classify(const std::string& from, const std::string& to) const;
  std::vector<std::vector<double>> probabilities(const std::vector<Triple>& pairs) const;
  double accuracy(const std::vector<Triple>& triples) const;
  const std::vector<std::string>& labels() const { return labels_; }
  RelationFn as_function() const;

  /// Writes `path` (tensors) and `path` + ".meta.json" (labels, words, sizes).
  void save(const std::filesystem::path& path) const;
  static RelationClassifier load(const std::filesystem::path& path);

 private:
  Tensor logits(const std::vector<Triple>& pairs) const;
  std::vector<int> word_ids(const std::string& event) const;
  TensorMap parameters() const;

  std::vector<std::string> labels_;
  std::vector<std::string> words_;  // id 0 is the unknown word
  std::unordered_map<std::string, int> word_index_;
  std::size_t dim_ = 0, hidden_ = 0;
  Tensor emb_, w1_, b1_, w2_, b2_;
};

}  // namespace evplan
