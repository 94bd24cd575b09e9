#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "evplan/workflow.hpp"

using namespace evplan;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::numerical: return 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evplan: event transition planning and path-aware text generation"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string config_file;
  std::string out_dir = "evplan_out";
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--config", config_file, "key = value configuration file");
  app.add_option("--out", out_dir, "Working directory for artifacts")->capture_default_str();

  std::string stage, mode = "ep_pg", backend = "generative", variant = "path", group_by = "len", modes_arg = "all";

  auto* make_toy = app.add_subcommand("make-toy", "Write a toy event graph and story corpus");
  auto* augment = app.add_subcommand("graph-augment", "Add reverse relations to graph.tsv");
  auto* sample = app.add_subcommand("sample-paths", "Random-walk event transition paths");
  auto* split = app.add_subcommand("split-paths", "Split sampled paths 18:1:1");
  auto* extract = app.add_subcommand("extract-paths", "Extract r_x / r_y paths from the corpus");
  auto* relcls = app.add_subcommand("train-relcls", "Train the event-pair relation classifier");
  auto* tok = app.add_subcommand("train-tokenizer", "Train the BPE tokenizer");
  auto* lm = app.add_subcommand("train-lm", "Pretrain the backbone language model");
  auto* planner = app.add_subcommand("train-planner", "Train one planner prompt stage");
  planner->add_option("--stage", stage, "atomic or task")->required()->check(CLI::IsMember({"atomic", "task"}));
  auto* index = app.add_subcommand("build-index", "Build the BM25 path index");
  auto* plan = app.add_subcommand("plan", "Plan continuations for the test split");
  plan->add_option("--planner", backend, "generative or retrieval")->capture_default_str();
  auto* train_gen = app.add_subcommand("train-generator", "Train a generator");
  train_gen->add_option("--variant", variant, "path, plain or csft")->capture_default_str();
  auto* generate = app.add_subcommand("generate", "Generate test outputs for a pipeline mode");
  generate->add_option("--mode", mode, "ep_pg, r_ep_pg, gpt2_ft or csft")->capture_default_str();
  auto* evaluate = app.add_subcommand("evaluate", "Score generated outputs");
  evaluate->add_option("--mode", mode, "ep_pg, r_ep_pg, gpt2_ft or csft")->capture_default_str();
  auto* pipeline = app.add_subcommand("pipeline", "Plan, generate and evaluate one mode");
  pipeline->add_option("--mode", mode, "ep_pg, r_ep_pg, gpt2_ft or csft")->capture_default_str();
  auto* report = app.add_subcommand("report", "Grouped BLEU-1 analysis");
  report->add_option("--mode", mode, "ep_pg, r_ep_pg, gpt2_ft or csft")->capture_default_str();
  report->add_option("--group-by", group_by, "len or sent")->capture_default_str();
  auto* run_all = app.add_subcommand("run-all", "Every step on the toy world");
  run_all->add_option("--modes", modes_arg, "Comma-separated modes or 'all'")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    Config cfg = config_file.empty() ? Config{} : Config::load(config_file);
    Workspace ws{out_dir};
    std::filesystem::create_directories(ws.dir);
    std::string msg;
    if (*make_toy) msg = workflow::make_toy(ws, cfg, seed);
    else if (*augment) msg = workflow::graph_augment(ws);
    else if (*sample) msg = workflow::sample_paths(ws, cfg, seed);
    else if (*split) msg = workflow::split_paths(ws, seed);
    else if (*extract) msg = workflow::extract_paths(ws);
    else if (*relcls) msg = workflow::train_relcls(ws, cfg, seed);
    else if (*tok) msg = workflow::train_tokenizer(ws, cfg);
    else if (*lm) msg = workflow::train_lm(ws, cfg, seed);
    else if (*planner) msg = workflow::train_planner(ws, cfg, stage, seed);
    else if (*index) msg = workflow::build_index(ws);
    else if (*plan) msg = workflow::plan(ws, cfg, backend, seed);
    else if (*train_gen) msg = workflow::train_generator(ws, cfg, parse_generator_variant(variant), seed);
    else if (*generate) msg = workflow::generate(ws, cfg, parse_pipeline_mode(mode), seed);
    else if (*evaluate) msg = format_table({workflow::evaluate(ws, parse_pipeline_mode(mode))});
    else if (*pipeline) msg = workflow::pipeline(ws, cfg, parse_pipeline_mode(mode), seed);
    else if (*report) msg = format_table(workflow::report(ws, parse_pipeline_mode(mode), parse_grouping(group_by)));
    else if (*run_all) {
      std::vector<PipelineMode> modes;
      if (modes_arg == "all") {
        modes = {PipelineMode::ep_pg, PipelineMode::r_ep_pg, PipelineMode::gpt2_ft, PipelineMode::csft};
      } else {
        std::stringstream ss(modes_arg);
        std::string m;
        while (std::getline(ss, m, ',')) modes.push_back(parse_pipeline_mode(m));
      }
      workflow::run_all(ws, cfg, modes, seed, &std::cerr);
      msg = "done; artifacts in " + ws.dir.string();
    }
    std::cout << msg << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
