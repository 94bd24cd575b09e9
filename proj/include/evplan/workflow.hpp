#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "evplan/config.hpp"
#include "evplan/error.hpp"
#include "evplan/extraction.hpp"
#include "evplan/metrics.hpp"
#include "evplan/path.hpp"

namespace evplan {

/// Artifact names inside one working directory.
struct Workspace {
  std::filesystem::path dir;

  std::filesystem::path graph() const { return dir / "graph.tsv"; }
  std::filesystem::path graph_augmented() const { return dir / "graph_aug.tsv"; }
  std::filesystem::path paths() const { return dir / "paths.txt"; }
  std::filesystem::path paths_split(const std::string& split) const { return dir / ("paths_" + split + ".txt"); }
  std::filesystem::path corpus(const std::string& split) const { return dir / ("corpus_" + split + ".txt"); }
  std::filesystem::path instance_paths(const std::string& split) const {
    return dir / ("instance_paths_" + split + ".tsv");
  }
  std::filesystem::path relcls() const { return dir / "relcls.ckpt"; }
  std::filesystem::path tokenizer() const { return dir / "tokenizer.bpe"; }
  std::filesystem::path lm() const { return dir / "lm.ckpt"; }
  std::filesystem::path planner() const { return dir / "planner.ckpt"; }
  std::filesystem::path index() const { return dir / "index.tsv"; }
  std::filesystem::path generator(const std::string& variant) const { return dir / ("generator_" + variant + ".ckpt"); }
  std::filesystem::path plans(const std::string& backend) const { return dir / ("plans_" + backend + ".jsonl"); }
  std::filesystem::path records(const std::string& mode) const { return dir / ("records_" + mode + ".jsonl"); }
  std::filesystem::path report(const std::string& mode) const { return dir / ("report_" + mode + ".jsonl"); }
  std::filesystem::path grouped(const std::string& mode, const std::string& group_by) const {
    return dir / ("report_" + mode + "_" + group_by + ".jsonl");
  }
};

/// Throws DataError naming the missing file and the command producing it.
void require_artifact(const std::filesystem::path& file, const std::string& producer);

enum class PipelineMode { ep_pg, r_ep_pg, gpt2_ft, csft };
PipelineMode parse_pipeline_mode(const std::string& name);
std::string pipeline_mode_name(PipelineMode mode);
/// EP-PG, R-EP-PG, GPT-2, GPT-2-CS-FT
std::string pipeline_tag(PipelineMode mode);

enum class GeneratorVariant { path, plain, csft };
GeneratorVariant parse_generator_variant(const std::string& name);
std::string generator_variant_name(GeneratorVariant v);

/// One inference line: input, the path that conditioned the primary output,
/// the output, the reference and the planner backend tag.
struct InferenceRecord {
  std::size_t id = 0;
  std::string context;
  std::size_t context_sentences = 0;
  std::string path;
  std::string output;
  std::string reference;
  std::string planner;
  std::vector<std::string> diversity_paths;
  std::vector<std::string> diversity_outputs;

  std::string to_json() const;
  static InferenceRecord from_json(const std::string& line);
};
std::vector<InferenceRecord> read_records(const std::filesystem::path& file);
void write_records(const std::filesystem::path& file, const std::vector<InferenceRecord>& records);

/// Each command reads and writes artifacts of the workspace and returns a
/// short human-readable summary.
namespace workflow {

std::string make_toy(const Workspace& ws, const Config& cfg, std::uint64_t seed);
std::string graph_augment(const Workspace& ws);
std::string sample_paths(const Workspace& ws, const Config& cfg, std::uint64_t seed);
std::string split_paths(const Workspace& ws, std::uint64_t seed);
std::string train_relcls(const Workspace& ws, const Config& cfg, std::uint64_t seed);
std::string extract_paths(const Workspace& ws);
std::string train_tokenizer(const Workspace& ws, const Config& cfg);
std::string train_lm(const Workspace& ws, const Config& cfg, std::uint64_t seed);
std::string train_planner(const Workspace& ws, const Config& cfg, const std::string& stage, std::uint64_t seed);
std::string build_index(const Workspace& ws);
/// backend: generative or retrieval; plans for the test split.
std::string plan(const Workspace& ws, const Config& cfg, const std::string& backend, std::uint64_t seed);
std::string train_generator(const Workspace& ws, const Config& cfg, GeneratorVariant variant, std::uint64_t seed);
std::string generate(const Workspace& ws, const Config& cfg, PipelineMode mode, std::uint64_t seed);
EvalReport evaluate(const Workspace& ws, PipelineMode mode);
std::string pipeline(const Workspace& ws, const Config& cfg, PipelineMode mode, std::uint64_t seed);
std::vector<EvalReport> report(const Workspace& ws, PipelineMode mode, Grouping grouping);

/// Every step above in order, on the toy world, for the given modes. Each
/// step summary also goes to `progress` when given.
std::string run_all(const Workspace& ws, const Config& cfg, const std::vector<PipelineMode>& modes, std::uint64_t seed,
                    std::ostream* progress = nullptr);

}  // namespace workflow

}  // namespace evplan
