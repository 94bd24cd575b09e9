#include "evplan/workflow.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "evplan/bm25.hpp"
#include "evplan/checkpoint.hpp"
#include "evplan/event_graph.hpp"
#include "evplan/generator.hpp"
#include "evplan/lm_training.hpp"
#include "evplan/planner.hpp"
#include "evplan/relation_classifier.hpp"
#include "evplan/toy.hpp"
#include "json.hpp"

namespace evplan {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void require_artifact(const fs::path& file, const std::string& producer) {
  if (!fs::exists(file)) {
    throw DataError("missing artifact " + file.string() + " (produce it with: evplan " + producer + ")");
  }
}

PipelineMode parse_pipeline_mode(const std::string& name) {
  if (name == "ep_pg") return PipelineMode::ep_pg;
  if (name == "r_ep_pg") return PipelineMode::r_ep_pg;
  if (name == "gpt2_ft") return PipelineMode::gpt2_ft;
  if (name == "csft") return PipelineMode::csft;
  throw UsageError("unknown pipeline mode '" + name + "' (expected ep_pg, r_ep_pg, gpt2_ft or csft)");
}

std::string pipeline_mode_name(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::ep_pg: return "ep_pg";
    case PipelineMode::r_ep_pg: return "r_ep_pg";
    case PipelineMode::gpt2_ft: return "gpt2_ft";
    case PipelineMode::csft: return "csft";
  }
  return "?";
}

std::string pipeline_tag(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::ep_pg: return "EP-PG";
    case PipelineMode::r_ep_pg: return "R-EP-PG";
    case PipelineMode::gpt2_ft: return "GPT-2";
    case PipelineMode::csft: return "GPT-2-CS-FT";
  }
  return "?";
}

GeneratorVariant parse_generator_variant(const std::string& name) {
  if (name == "path") return GeneratorVariant::path;
  if (name == "plain") return GeneratorVariant::plain;
  if (name == "csft") return GeneratorVariant::csft;
  throw UsageError("unknown generator variant '" + name + "' (expected path, plain or csft)");
}

std::string generator_variant_name(GeneratorVariant v) {
  switch (v) {
    case GeneratorVariant::path: return "path";
    case GeneratorVariant::plain: return "plain";
    case GeneratorVariant::csft: return "csft";
  }
  return "?";
}

std::string InferenceRecord::to_json() const {
  ordered_json j;
  j["id"] = id;
  j["planner"] = planner;
  j["context"] = context;
  j["context_sentences"] = context_sentences;
  j["path"] = path;
  j["output"] = output;
  j["reference"] = reference;
  j["diversity_paths"] = diversity_paths;
  j["diversity_outputs"] = diversity_outputs;
  return j.dump();
}

InferenceRecord InferenceRecord::from_json(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad inference record: ") + e.what());
  }
  InferenceRecord r;
  try {
    r.id = j.at("id").get<std::size_t>();
    r.planner = j.at("planner").get<std::string>();
    r.context = j.at("context").get<std::string>();
    r.context_sentences = j.at("context_sentences").get<std::size_t>();
    r.path = j.at("path").get<std::string>();
    r.output = j.at("output").get<std::string>();
    r.reference = j.at("reference").get<std::string>();
    r.diversity_paths = j.value("diversity_paths", std::vector<std::string>{});
    r.diversity_outputs = j.value("diversity_outputs", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad inference record: ") + e.what());
  }
  return r;
}

std::vector<InferenceRecord> read_records(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<InferenceRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(InferenceRecord::from_json(line));
  return out;
}

void write_records(const fs::path& file, const std::vector<InferenceRecord>& records) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& r : records) out << r.to_json() << '\n';
}

namespace workflow {

namespace {

const std::vector<std::string> kSplits{"train", "valid", "test"};

std::size_t cfg_size(const Config& cfg, const std::string& key, std::size_t fallback) {
  const long long v = cfg.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

LmConfig lm_config(const Config& cfg, std::size_t vocab) {
  LmConfig base;
  base.layers = 2;
  base.heads = 4;
  base.width = 32;
  base.ff_width = 64;
  base.max_len = 96;
  auto c = LmConfig::from_config(cfg, base);
  c.vocab = vocab;
  c.validate();
  return c;
}

Tokenizer load_tokenizer(const Workspace& ws) {
  require_artifact(ws.tokenizer(), "train-tokenizer");
  return Tokenizer::load(ws.tokenizer());
}

std::vector<CorpusInstance> load_corpus(const Workspace& ws, const std::string& split) {
  require_artifact(ws.corpus(split), "make-toy (or place corpus_" + split + ".txt in the output directory)");
  return read_corpus(ws.corpus(split));
}

std::vector<PathPair> load_instance_paths(const Workspace& ws, const std::string& split) {
  require_artifact(ws.instance_paths(split), "extract-paths");
  return read_path_pairs(ws.instance_paths(split));
}

std::vector<PathPair> planning_pairs(const std::vector<TransitionPath>& paths) {
  std::vector<PathPair> out;
  for (const auto& p : paths)
    if (p.hops() >= 1) out.push_back(split_for_planning(p));
  return out;
}

std::string planner_text(const PathPair& p) {
  return serialize_path(p.observed) + " " + std::string(tokens::sep) + " " + serialize_continuation(p.continuation);
}

std::vector<GeneratorExample> generator_examples(const std::vector<CorpusInstance>& corpus,
                                                 const std::vector<PathPair>& paths) {
  if (corpus.size() != paths.size()) {
    throw DataError("corpus has " + std::to_string(corpus.size()) + " instances but " + std::to_string(paths.size()) +
                    " extracted paths; rerun extract-paths");
  }
  std::vector<GeneratorExample> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    out.push_back({context_text(corpus[i]), corpus[i].target, TransitionPath::joined(paths[i].observed, paths[i].continuation)});
  return out;
}

StageTrainOptions stage_options(const Config& cfg, const std::string& stage, std::uint64_t seed) {
  StageTrainOptions o;
  o.optim.learning_rate = cfg.get_double("planner.lr", 3e-3);
  o.batch = cfg_size(cfg, "planner.batch", 16);
  o.max_steps = cfg_size(cfg, "planner." + stage + "_steps", stage == "atomic" ? 200 : 300);
  o.eval_every = cfg_size(cfg, "planner.eval_every", 50);
  o.patience = cfg_size(cfg, "planner.patience", 2);
  o.seed = seed;
  return o;
}

DecodeParams plan_params(const Config& cfg, std::uint64_t seed) {
  DecodeParams p;
  p.strategy = parse_strategy(cfg.get_string("plan.strategy", "beam_topk"));
  p.beam_width = cfg_size(cfg, "plan.beam", 3);
  p.top_k = cfg_size(cfg, "plan.top_k", 5);
  p.temperature = cfg.get_double("plan.temperature", 0.7);
  p.max_new = cfg_size(cfg, "plan.max_new", 32);
  p.seed = seed;
  return p;
}

struct PlannedPaths {
  std::vector<TransitionPath> observed;
  std::vector<std::vector<std::vector<PathStep>>> candidates;  // per instance, best first
};

PlannedPaths plan_test(const Workspace& ws, const Config& cfg, const std::string& backend, std::uint64_t seed) {
  auto pairs = load_instance_paths(ws, "test");
  const std::size_t n = std::max<std::size_t>(1, cfg_size(cfg, "plan.candidates", 3));
  const std::size_t max_hops = cfg_size(cfg, "plan.max_hops", 4);
  PlannedPaths out;
  if (backend == "generative") {
    require_artifact(ws.planner(), "train-planner --stage atomic, then train-planner --stage task");
    auto planner = GenerativePlanner::from_state(load_checkpoint(ws.planner()), load_tokenizer(ws));
    auto params = plan_params(cfg, seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      params.seed = seed + i;
      out.observed.push_back(pairs[i].observed);
      out.candidates.push_back(planner.plan(pairs[i].observed, params, n, max_hops));
    }
  } else if (backend == "retrieval") {
    require_artifact(ws.index(), "build-index");
    auto index = RetrievalPlanner::load(ws.index());
    for (const auto& p : pairs) {
      out.observed.push_back(p.observed);
      auto c = index.plan(RetrievalPlanner::document_text(p.observed), n);
      for (auto& steps : c)
        if (max_hops && steps.size() > max_hops) steps.resize(max_hops);
      out.candidates.push_back(std::move(c));
    }
  } else {
    throw UsageError("unknown planner backend '" + backend + "' (expected generative or retrieval)");
  }
  return out;
}

GeneratorTrainOptions generator_options(const Config& cfg, std::uint64_t seed) {
  GeneratorTrainOptions o;
  o.optim.learning_rate = cfg.get_double("generator.lr", 3e-3);
  o.batch = cfg_size(cfg, "generator.batch", 16);
  o.max_steps = cfg_size(cfg, "generator.steps", 400);
  o.eval_every = cfg_size(cfg, "generator.eval_every", 50);
  o.patience = cfg_size(cfg, "generator.patience", 2);
  o.clip_norm = cfg.get_double("generator.clip_norm", 1.0);
  o.seed = seed;
  return o;
}

GeneratorVariant variant_for(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::ep_pg:
    case PipelineMode::r_ep_pg: return GeneratorVariant::path;
    case PipelineMode::gpt2_ft: return GeneratorVariant::plain;
    case PipelineMode::csft: return GeneratorVariant::csft;
  }
  return GeneratorVariant::path;
}

PathAwareGenerator load_generator(const Workspace& ws, GeneratorVariant v) {
  const auto file = ws.generator(generator_variant_name(v));
  require_artifact(file, "train-generator --variant " + generator_variant_name(v));
  return PathAwareGenerator::from_state(load_checkpoint(file), load_tokenizer(ws));
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

std::string make_toy(const Workspace& ws, const Config& cfg, std::uint64_t seed) {
  fs::create_directories(ws.dir);
  auto graph = toy::world_graph(cfg_size(cfg, "toy.events", 120), cfg_size(cfg, "toy.out_degree", 3), seed);
  graph.save(ws.graph());
  auto stories = toy::story_corpus(graph, cfg_size(cfg, "toy.stories", 300), seed + 1);
  if (stories.size() < 20) throw DataError("toy corpus needs at least 20 stories");
  const auto sz = split_sizes(stories.size());
  std::size_t at = 0;
  for (const auto& [name, count] : {std::pair{kSplits[0], sz.train}, {kSplits[1], sz.valid}, {kSplits[2], sz.test}}) {
    write_corpus(ws.corpus(name), std::vector<CorpusInstance>(stories.begin() + static_cast<std::ptrdiff_t>(at),
                                                              stories.begin() + static_cast<std::ptrdiff_t>(at + count)));
    at += count;
  }
  return "toy world: " + std::to_string(graph.event_count()) + " events, " + std::to_string(graph.edge_count()) +
         " edges; stories " + std::to_string(sz.train) + "/" + std::to_string(sz.valid) + "/" + std::to_string(sz.test);
}

std::string graph_augment(const Workspace& ws) {
  require_artifact(ws.graph(), "make-toy (or place an ATOMIC-style graph.tsv in the output directory)");
  auto g = EventGraph::load(ws.graph());
  auto aug = g.augment_reverse();
  aug.save(ws.graph_augmented());
  return "edges " + std::to_string(g.edge_count()) + " -> " + std::to_string(aug.edge_count()) + ", relations " +
         std::to_string(g.relations().size()) + " -> " + std::to_string(aug.relations().size());
}

std::string sample_paths(const Workspace& ws, const Config& cfg, std::uint64_t seed) {
  require_artifact(ws.graph_augmented(), "graph-augment");
  auto g = EventGraph::load(ws.graph_augmented());
  SampleOptions o;
  o.n_paths = cfg_size(cfg, "sample.n_paths", 2000);
  o.hop_min = cfg_size(cfg, "sample.hop_min", 1);
  o.hop_max = cfg_size(cfg, "sample.hop_max", 5);
  o.seed = seed;
  auto paths = evplan::sample_paths(g, o);
  write_paths(ws.paths(), paths);
  return "sampled " + std::to_string(paths.size()) + " paths";
}

std::string split_paths(const Workspace& ws, std::uint64_t seed) {
  require_artifact(ws.paths(), "sample-paths");
  auto s = evplan::split_paths(read_paths(ws.paths()), seed);
  write_paths(ws.paths_split("train"), s.train);
  write_paths(ws.paths_split("valid"), s.valid);
  write_paths(ws.paths_split("test"), s.test);
  return "paths split " + std::to_string(s.train.size()) + "/" + std::to_string(s.valid.size()) + "/" +
         std::to_string(s.test.size());
}

std::string train_relcls(const Workspace& ws, const Config& cfg, std::uint64_t seed) {
  require_artifact(ws.graph(), "make-toy");
  RelClsConfig rc;
  rc.dim = cfg_size(cfg, "relcls.dim", rc.dim);
  rc.hidden = cfg_size(cfg, "relcls.hidden", rc.hidden);
  rc.epochs = cfg_size(cfg, "relcls.epochs", rc.epochs);
  rc.batch = cfg_size(cfg, "relcls.batch", rc.batch);
  rc.learning_rate = cfg.get_double("relcls.lr", rc.learning_rate);
  rc.seed = seed;
  RelClsReport rep;
  auto cls = RelationClassifier::train(EventGraph::load(ws.graph()).triples(), rc, &rep);
  cls.save(ws.relcls());
  return "relation classifier: train " + fmt(rep.train_accuracy) + ", valid " + fmt(rep.valid_accuracy) + ", test " +
         fmt(rep.test_accuracy);
}

std::string extract_paths(const Workspace& ws) {
  require_artifact(ws.relcls(), "train-relcls");
  auto cls = RelationClassifier::load(ws.relcls());
  auto rel = cls.as_function();
  std::size_t total = 0;
  for (const auto& split : kSplits) {
    std::vector<PathPair> pairs;
    for (const auto& inst : load_corpus(ws, split)) pairs.push_back(build_instance_path(inst, rel));
    write_path_pairs(ws.instance_paths(split), pairs);
    total += pairs.size();
  }
  return "extracted " + std::to_string(total) + " instance paths";
}

std::string train_tokenizer(const Workspace& ws, const Config& cfg) {
  require_artifact(ws.graph(), "make-toy");
  std::vector<std::string> texts;
  for (const auto& inst : load_corpus(ws, "train")) texts.push_back(context_text(inst) + " " + inst.target);
  if (fs::exists(ws.paths_split("train")))
    for (const auto& p : read_paths(ws.paths_split("train"))) texts.push_back(serialize_path(p));
  for (const auto& p : load_instance_paths(ws, "train")) texts.push_back(planner_text(p));
  for (const auto& t : EventGraph::load(ws.graph()).triples()) texts.push_back(t.head + " " + t.tail);
  auto tok = Tokenizer::train(texts, cfg_size(cfg, "tokenizer.vocab", 700),
                              path_specials(EventGraph::load(ws.graph()).forward_relations()));
  tok.save(ws.tokenizer());
  return "tokenizer: " + std::to_string(tok.size()) + " entries";
}

std::string train_lm(const Workspace& ws, const Config& cfg, std::uint64_t seed) {
  auto tok = load_tokenizer(ws);
  std::vector<std::string> texts;
  for (const auto& inst : load_corpus(ws, "train")) texts.push_back(context_text(inst) + " " + inst.target);
  require_artifact(ws.paths_split("train"), "split-paths");
  for (const auto& p : planning_pairs(read_paths(ws.paths_split("train")))) texts.push_back(planner_text(p));
  for (const auto& p : load_instance_paths(ws, "train")) texts.push_back(planner_text(p));
  TransformerLM lm(lm_config(cfg, tok.size()), seed);
  LmTrainOptions o;
  o.steps = cfg_size(cfg, "lm.steps", 600);
  o.batch = cfg_size(cfg, "lm.batch", 16);
  o.optim.learning_rate = cfg.get_double("lm.lr", 3e-3);
  o.seed = seed;
  auto losses = evplan::train_lm(lm, tok, texts, o);
  save_checkpoint(ws.lm(), lm.state());
  return "language model: " + std::to_string(losses.size()) + " steps, final loss " + fmt(losses.back());
}

std::string train_planner(const Workspace& ws, const Config& cfg, const std::string& stage_name, std::uint64_t seed) {
  const auto stage = parse_planner_stage(stage_name);
  auto pcfg = PlannerConfig::from_config(cfg);
  auto tok = load_tokenizer(ws);
  std::vector<PathPair> train, valid;
  if (stage == PlannerStage::atomic) {
    require_artifact(ws.paths_split("train"), "split-paths");
    train = planning_pairs(read_paths(ws.paths_split("train")));
    valid = planning_pairs(read_paths(ws.paths_split("valid")));
  } else {
    train = load_instance_paths(ws, "train");
    valid = load_instance_paths(ws, "valid");
  }
  auto make_fresh = [&] {
    require_artifact(ws.lm(), "train-lm");
    return GenerativePlanner(TransformerLM::from_state(load_checkpoint(ws.lm())), tok, pcfg, seed);
  };
  const bool resume = stage == PlannerStage::task && pcfg.mode == PlannerMode::prompted;
  if (resume && !fs::exists(ws.planner())) {
    throw OrderingError("planner stage 'task' requires a trained 'atomic' stage (run train-planner --stage atomic first)");
  }
  GenerativePlanner planner = resume ? GenerativePlanner::from_state(load_checkpoint(ws.planner()), tok) : make_fresh();
  auto rep = planner.train_stage(stage, train, valid, stage_options(cfg, stage_name, seed));
  save_checkpoint(ws.planner(), planner.state());
  return "planner stage " + stage_name + " (" + planner_mode_name(planner.config().mode) + "): " +
         std::to_string(rep.steps) + " steps, last loss " + fmt(rep.losses.back()) +
         (rep.best_valid_loss ? ", best valid " + fmt(*rep.best_valid_loss) : std::string());
}

std::string build_index(const Workspace& ws) {
  RetrievalPlanner index(load_instance_paths(ws, "train"));
  index.save(ws.index());
  return "indexed " + std::to_string(index.pairs().size()) + " training paths";
}

std::string plan(const Workspace& ws, const Config& cfg, const std::string& backend, std::uint64_t seed) {
  auto planned = plan_test(ws, cfg, backend, seed);
  std::ofstream out(ws.plans(backend));
  for (std::size_t i = 0; i < planned.observed.size(); ++i) {
    ordered_json j;
    j["id"] = i;
    j["backend"] = backend;
    j["r_x"] = serialize_path(planned.observed[i]);
    j["candidates"] = ordered_json::array();
    for (const auto& c : planned.candidates[i]) j["candidates"].push_back(serialize_continuation(c));
    out << j.dump() << '\n';
  }
  return "planned " + std::to_string(planned.observed.size()) + " test instances with the " + backend + " planner";
}

std::string train_generator(const Workspace& ws, const Config& cfg, GeneratorVariant variant, std::uint64_t seed) {
  require_artifact(ws.lm(), "train-lm");
  auto tok = load_tokenizer(ws);
  auto train = generator_examples(load_corpus(ws, "train"), load_instance_paths(ws, "train"));
  auto valid = generator_examples(load_corpus(ws, "valid"), load_instance_paths(ws, "valid"));
  TransformerLM lm = TransformerLM::from_state(load_checkpoint(ws.lm()));
  std::string extra;
  if (variant == GeneratorVariant::csft) {
    require_artifact(ws.graph(), "make-toy");
    std::vector<std::string> triples;
    for (const auto& t : EventGraph::load(ws.graph()).triples())
      triples.push_back(t.head + " " + relation_token(t.relation) + " " + t.tail);
    LmTrainOptions o;
    o.steps = cfg_size(cfg, "generator.csft_steps", 200);
    o.batch = cfg_size(cfg, "lm.batch", 16);
    o.optim.learning_rate = cfg.get_double("lm.lr", 3e-3);
    o.seed = seed ^ 0xc5f7;
    auto l = evplan::train_lm(lm, tok, triples, o);
    extra = ", triple post-training loss " + fmt(l.back());
  }
  PathAwareGenerator gen(std::move(lm), tok, variant == GeneratorVariant::path, QueryLayerConfig::from_config(cfg), seed);
  auto rep = gen.train(train, valid, generator_options(cfg, seed));
  save_checkpoint(ws.generator(generator_variant_name(variant)), gen.state());
  return "generator " + generator_variant_name(variant) + ": " + std::to_string(rep.steps) + " steps, last loss " +
         fmt(rep.losses.back()) + (rep.best_valid_loss ? ", best valid " + fmt(*rep.best_valid_loss) : std::string()) +
         extra;
}

std::string generate(const Workspace& ws, const Config& cfg, PipelineMode mode, std::uint64_t seed) {
  auto corpus = load_corpus(ws, "test");
  auto gen = load_generator(ws, variant_for(mode));
  DecodeParams dp;
  dp.max_new = cfg_size(cfg, "generate.max_new", 24);
  std::vector<InferenceRecord> records;
  if (mode == PipelineMode::ep_pg || mode == PipelineMode::r_ep_pg) {
    auto planned = plan_test(ws, cfg, mode == PipelineMode::ep_pg ? "generative" : "retrieval", seed);
    if (planned.observed.size() != corpus.size()) throw DataError("test corpus and extracted paths differ in size");
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      InferenceRecord r;
      r.id = i;
      r.planner = pipeline_tag(mode);
      r.context = context_text(corpus[i]);
      r.context_sentences = corpus[i].context.size();
      r.reference = corpus[i].target;
      auto cands = planned.candidates[i];
      if (cands.empty()) cands.emplace_back();
      for (std::size_t c = 0; c < cands.size(); ++c) {
        auto path = TransitionPath::joined(planned.observed[i], cands[c]);
        auto out = gen.generate(r.context, path, dp).front();
        if (c == 0) {
          r.path = serialize_path(path);
          r.output = out;
        }
        r.diversity_paths.push_back(serialize_path(path));
        r.diversity_outputs.push_back(std::move(out));
      }
      records.push_back(std::move(r));
    }
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      InferenceRecord r;
      r.id = i;
      r.planner = pipeline_tag(mode);
      r.context = context_text(corpus[i]);
      r.context_sentences = corpus[i].context.size();
      r.reference = corpus[i].target;
      r.output = gen.generate(r.context, TransitionPath{}, dp).front();
      records.push_back(std::move(r));
    }
  }
  write_records(ws.records(pipeline_mode_name(mode)), records);
  return "generated " + std::to_string(records.size()) + " outputs (" + pipeline_tag(mode) + ")";
}

EvalReport evaluate(const Workspace& ws, PipelineMode mode) {
  const auto name = pipeline_mode_name(mode);
  require_artifact(ws.records(name), "generate --mode " + name);
  auto records = read_records(ws.records(name));
  if (records.empty()) throw DataError("no inference records in " + ws.records(name).string());
  std::vector<std::string> out, ref;
  for (const auto& r : records) {
    out.push_back(r.output);
    ref.push_back(r.reference);
  }
  auto gen = load_generator(ws, variant_for(mode));
  auto test = generator_examples(load_corpus(ws, "test"), load_instance_paths(ws, "test"));
  auto report = evaluate_texts(out, ref, gen.perplexity(test));
  auto j = ordered_json::parse(report.to_json());
  ordered_json line;
  line["mode"] = name;
  line["planner"] = pipeline_tag(mode);
  for (auto it = j.begin(); it != j.end(); ++it) line[it.key()] = it.value();
  std::ofstream(ws.report(name)) << line.dump() << '\n';
  return report;
}

std::string pipeline(const Workspace& ws, const Config& cfg, PipelineMode mode, std::uint64_t seed) {
  auto g = generate(ws, cfg, mode, seed);
  auto rep = evaluate(ws, mode);
  return g + "\n" + format_table({rep});
}

std::vector<EvalReport> report(const Workspace& ws, PipelineMode mode, Grouping grouping) {
  const auto name = pipeline_mode_name(mode);
  require_artifact(ws.records(name), "generate --mode " + name);
  auto records = read_records(ws.records(name));
  std::vector<std::string> out, ref;
  std::vector<std::size_t> sents;
  for (const auto& r : records) {
    out.push_back(r.output);
    ref.push_back(r.reference);
    sents.push_back(r.context_sentences);
  }
  auto reps = grouped_report(out, ref, sents, grouping);
  const std::string key = grouping == Grouping::target_length ? "len" : "sent";
  std::ofstream file(ws.grouped(name, key));
  for (const auto& r : reps) {
    auto j = ordered_json::parse(r.to_json());
    ordered_json line;
    line["mode"] = name;
    for (auto it = j.begin(); it != j.end(); ++it) line[it.key()] = it.value();
    file << line.dump() << '\n';
  }
  return reps;
}

std::string run_all(const Workspace& ws, const Config& cfg, const std::vector<PipelineMode>& modes, std::uint64_t seed,
                    std::ostream* progress) {
  std::ostringstream log;
  auto step = [&](const std::string& s) {
    log << s << '\n';
    if (progress) *progress << s << std::endl;
  };
  step(make_toy(ws, cfg, seed));
  step(graph_augment(ws));
  step(sample_paths(ws, cfg, seed));
  step(split_paths(ws, seed));
  step(train_relcls(ws, cfg, seed));
  step(extract_paths(ws));
  step(train_tokenizer(ws, cfg));
  step(train_lm(ws, cfg, seed));
  bool need_path = false, need_plain = false, need_csft = false;
  for (auto m : modes) {
    need_path |= m == PipelineMode::ep_pg || m == PipelineMode::r_ep_pg;
    need_plain |= m == PipelineMode::gpt2_ft;
    need_csft |= m == PipelineMode::csft;
  }
  for (auto m : modes) {
    if (m == PipelineMode::ep_pg && !fs::exists(ws.planner())) {
      const auto mode = PlannerConfig::from_config(cfg).mode;
      if (mode == PlannerMode::prompted) step(train_planner(ws, cfg, "atomic", seed));
      step(train_planner(ws, cfg, "task", seed));
    }
    if (m == PipelineMode::r_ep_pg && !fs::exists(ws.index())) step(build_index(ws));
  }
  if (need_path) step(train_generator(ws, cfg, GeneratorVariant::path, seed));
  if (need_plain) step(train_generator(ws, cfg, GeneratorVariant::plain, seed));
  if (need_csft) step(train_generator(ws, cfg, GeneratorVariant::csft, seed));
  for (auto m : modes) {
    step(pipeline(ws, cfg, m, seed));
    for (auto g : {Grouping::target_length, Grouping::input_sentences}) {
      auto reps = report(ws, m, g);
      step(format_table(reps));
    }
  }
  return log.str();
}

}  // namespace workflow

}  // namespace evplan
