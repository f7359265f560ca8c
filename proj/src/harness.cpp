// Copyright 2026 The Hoplab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hoplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hoplab/error.hpp"
#include "hoplab/parallel.hpp"
#include "hoplab/records.hpp"

namespace hoplab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw Error(ErrorKind::kInvalidArgument, "config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kInvalidArgument,
                  "config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw Error(ErrorKind::kInvalidArgument,
                    "config: unknown key '" + (name_.empty() ? "" : name_ + ".") + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& what) { return Error(ErrorKind::kInvalidArgument, "config: " + what); };
  if (out_dir.empty()) throw bad("out_dir must not be empty");
  if (data.train_queries < 1) throw bad("data.train_queries must be >= 1");
  if (data.rl_queries < 1) throw bad("data.rl_queries must be >= 1");
  if (data.rft_queries < 0 || data.eval_queries < 0) {
    throw bad("data.rft_queries and data.eval_queries must be >= 0");
  }
  const std::pair<const char*, const std::vector<int>*> hop_lists[] = {
      {"train_hops", &data.train_hops},
      {"rft_hops", &data.rft_hops},
      {"rl_hops", &data.rl_hops},
      {"eval_hops", &data.eval_hops}};
  for (const auto& [name, hops] : hop_lists) {
    if (hops->empty()) throw bad(std::string("data.") + name + " must not be empty");
    for (int h : *hops) {
      if (h < 1 || h > world.max_hops) {
        throw bad(std::string("data.") + name + " outside [1, world.max_hops]");
      }
    }
  }
  search.mcts.validate();
  if (search.queries < 1) throw bad("search.queries must be >= 1");
  if (!(prm.holdout_fraction >= 0.0 && prm.holdout_fraction < 1.0)) {
    throw bad("prm.holdout_fraction must be in [0, 1)");
  }
  if (rft.num_candidates < 1) throw bad("rft.num_candidates must be >= 1");
  rl.rl.validate();
  if (rl.init != "rft" && rl.init != "sft") throw bad("rl.init must be 'rft' or 'sft'");
  if (ablation.seeds < 1) throw bad("ablation.seeds must be >= 1");
  if (ablation.beta_grid.empty()) throw bad("ablation.beta_grid must not be empty");
  for (int k : k_grid) {
    if (k < 1) throw bad("sweep.k_grid entries must be >= 1");
  }
  if (eval.k_docs < 1 || eval.max_steps < 1) throw bad("eval.k_docs and eval.max_steps must be >= 1");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  top.get("out_dir", c.out_dir);
  top.get("num_threads", c.num_threads);
  top.get("masking", c.masking);
  if (const json* w = top.child("world")) {
    Section s(*w, "world");
    s.get("num_entities", c.world.num_entities);
    s.get("num_relations", c.world.num_relations);
    s.get("num_distractors", c.world.num_distractors);
    s.get("max_hops", c.world.max_hops);
    s.get("planted_chains", c.world.planted_chains);
    s.get("fact_density", c.world.fact_density);
    s.finish();
  }
  if (const json* d = top.child("data")) {
    Section s(*d, "data");
    s.get("train_queries", c.data.train_queries);
    s.get("rft_queries", c.data.rft_queries);
    s.get("rl_queries", c.data.rl_queries);
    s.get("eval_queries", c.data.eval_queries);
    s.get("train_hops", c.data.train_hops);
    s.get("rft_hops", c.data.rft_hops);
    s.get("rl_hops", c.data.rl_hops);
    s.get("eval_hops", c.data.eval_hops);
    s.finish();
  }
  if (const json* d = top.child("sft")) {
    Section s(*d, "sft");
    s.get("lambda", c.sft.lambda);
    s.get("learning_rate", c.sft.learning_rate);
    s.get("epochs", c.sft.epochs);
    s.get("batch_size", c.sft.batch_size);
    s.finish();
  }
  if (const json* d = top.child("search")) {
    Section s(*d, "search");
    auto& m = c.search.mcts;
    s.get("c_puct", m.c_puct);
    s.get("expansion_width", m.expansion_width);
    s.get("max_depth", m.max_depth);
    s.get("n_simulations", m.n_simulations);
    s.get("gamma", m.gamma);
    s.get("expansion_temperature", m.expansion_temperature);
    s.get("k_docs", m.k_docs);
    s.get("queries", c.search.queries);
    s.get("hops", c.search.hops);
    s.finish();
  }
  if (const json* d = top.child("prm")) {
    Section s(*d, "prm");
    s.get("learning_rate", c.prm.train.learning_rate);
    s.get("epochs", c.prm.train.epochs);
    s.get("batch_size", c.prm.train.batch_size);
    s.get("l2", c.prm.train.l2);
    s.get("holdout_fraction", c.prm.holdout_fraction);
    s.finish();
  }
  if (const json* d = top.child("rft")) {
    Section s(*d, "rft");
    s.get("num_candidates", c.rft.num_candidates);
    s.get("threshold", c.rft.threshold);
    s.get("temperature", c.rft.temperature);
    s.get("max_steps", c.rft.max_steps);
    s.get("k_docs", c.rft.k_docs);
    s.get("learning_rate", c.rft.learning_rate);
    s.get("epochs", c.rft.epochs);
    s.get("batch_size", c.rft.batch_size);
    s.finish();
  }
  if (const json* d = top.child("rl")) {
    Section s(*d, "rl");
    auto& r = c.rl.rl;
    s.get("group_size", r.group_size);
    s.get("beta", r.beta);
    s.get("epsilon", r.epsilon);
    s.get("nu1", r.nu1);
    s.get("nu2", r.nu2);
    s.get("sigma_floor", r.sigma_floor);
    s.get("learning_rate", r.learning_rate);
    s.get("iterations", r.iterations);
    s.get("queries_per_iteration", r.queries_per_iteration);
    s.get("epochs_per_round", r.epochs_per_round);
    s.get("include_env_tokens", r.include_env_tokens);
    std::string stats = rl::step_stats_name(r.step_stats);
    s.get("step_stats", stats);
    r.step_stats = rl::parse_step_stats(stats);
    s.get("temperature", r.temperature);
    s.get("max_steps", r.max_steps);
    s.get("k_docs", r.k_docs);
    s.get("eval_every", r.eval_every);
    s.get("record_wall_time", r.record_wall_time);
    s.get("init", c.rl.init);
    s.finish();
  }
  if (const json* d = top.child("eval")) {
    Section s(*d, "eval");
    s.get("k_docs", c.eval.k_docs);
    s.get("max_steps", c.eval.max_steps);
    s.finish();
  }
  if (const json* d = top.child("ablation")) {
    Section s(*d, "ablation");
    s.get("seeds", c.ablation.seeds);
    s.get("beta_grid", c.ablation.beta_grid);
    s.finish();
  }
  if (const json* d = top.child("sweep")) {
    Section s(*d, "sweep");
    s.get("k_grid", c.k_grid);
    s.finish();
  }
  if (const json* d = top.child("stages")) {
    Section s(*d, "stages");
    s.get("world", c.stages.world);
    s.get("sft", c.stages.sft);
    s.get("search", c.stages.search);
    s.get("prm", c.stages.prm);
    s.get("rft", c.stages.rft);
    s.get("rl", c.stages.rl);
    s.get("eval", c.stages.eval);
    s.finish();
  }
  if (const json* d = top.child("outputs")) {
    Section s(*d, "outputs");
    s.get("epoch_checkpoints", c.outputs.epoch_checkpoints);
    s.get("group_dumps", c.outputs.group_dumps);
    s.get("trees", c.outputs.trees);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, "config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
  const auto& m = c.search.mcts;
  const auto& r = c.rl.rl;
  return json{
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"num_threads", c.num_threads},
      {"masking", c.masking},
      {"world",
       {{"num_entities", c.world.num_entities},
        {"num_relations", c.world.num_relations},
        {"num_distractors", c.world.num_distractors},
        {"max_hops", c.world.max_hops},
        {"planted_chains", c.world.planted_chains},
        {"fact_density", c.world.fact_density}}},
      {"data",
       {{"train_queries", c.data.train_queries},
        {"rft_queries", c.data.rft_queries},
        {"rl_queries", c.data.rl_queries},
        {"eval_queries", c.data.eval_queries},
        {"train_hops", c.data.train_hops},
        {"rft_hops", c.data.rft_hops},
        {"rl_hops", c.data.rl_hops},
        {"eval_hops", c.data.eval_hops}}},
      {"sft",
       {{"lambda", c.sft.lambda},
        {"learning_rate", c.sft.learning_rate},
        {"epochs", c.sft.epochs},
        {"batch_size", c.sft.batch_size}}},
      {"search",
       {{"c_puct", m.c_puct},
        {"expansion_width", m.expansion_width},
        {"max_depth", m.max_depth},
        {"n_simulations", m.n_simulations},
        {"gamma", m.gamma},
        {"expansion_temperature", m.expansion_temperature},
        {"k_docs", m.k_docs},
        {"queries", c.search.queries},
        {"hops", c.search.hops}}},
      {"prm",
       {{"learning_rate", c.prm.train.learning_rate},
        {"epochs", c.prm.train.epochs},
        {"batch_size", c.prm.train.batch_size},
        {"l2", c.prm.train.l2},
        {"holdout_fraction", c.prm.holdout_fraction}}},
      {"rft",
       {{"num_candidates", c.rft.num_candidates},
        {"threshold", c.rft.threshold},
        {"temperature", c.rft.temperature},
        {"max_steps", c.rft.max_steps},
        {"k_docs", c.rft.k_docs},
        {"learning_rate", c.rft.learning_rate},
        {"epochs", c.rft.epochs},
        {"batch_size", c.rft.batch_size}}},
      {"rl",
       {{"group_size", r.group_size},
        {"beta", r.beta},
        {"epsilon", r.epsilon},
        {"nu1", r.nu1},
        {"nu2", r.nu2},
        {"sigma_floor", r.sigma_floor},
        {"learning_rate", r.learning_rate},
        {"iterations", r.iterations},
        {"queries_per_iteration", r.queries_per_iteration},
        {"epochs_per_round", r.epochs_per_round},
        {"include_env_tokens", r.include_env_tokens},
        {"step_stats", rl::step_stats_name(r.step_stats)},
        {"temperature", r.temperature},
        {"max_steps", r.max_steps},
        {"k_docs", r.k_docs},
        {"eval_every", r.eval_every},
        {"record_wall_time", r.record_wall_time},
        {"init", c.rl.init}}},
      {"eval", {{"k_docs", c.eval.k_docs}, {"max_steps", c.eval.max_steps}}},
      {"ablation", {{"seeds", c.ablation.seeds}, {"beta_grid", c.ablation.beta_grid}}},
      {"sweep", {{"k_grid", c.k_grid}}},
      {"stages",
       {{"world", c.stages.world},
        {"sft", c.stages.sft},
        {"search", c.stages.search},
        {"prm", c.stages.prm},
        {"rft", c.stages.rft},
        {"rl", c.stages.rl},
        {"eval", c.stages.eval}}},
      {"outputs",
       {{"epoch_checkpoints", c.outputs.epoch_checkpoints},
        {"group_dumps", c.outputs.group_dumps},
        {"trees", c.outputs.trees}}},
  };
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kWorld: return "world";
    case Stage::kSft: return "sft";
    case Stage::kSearch: return "search";
    case Stage::kPrm: return "prm";
    case Stage::kRft: return "rft";
    case Stage::kRl: return "rl";
    case Stage::kEval: return "eval";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::kWorld, Stage::kSft, Stage::kSearch, Stage::kPrm, Stage::kRft, Stage::kRl,
                  Stage::kEval}) {
    if (stage_name(s) == name) return s;
  }
  throw InvalidArgument("unknown stage '" + name + "'");
}

// ---------------------------------------------------------------------------
// In-memory stages

namespace {

// Appends count distinct queries, never repeating a token sequence in seen.
void draw_queries(const ExperimentConfig& c, const env::World& world, const char* tag, int count,
                  const std::vector<int>& hops, int id_base, std::set<std::vector<Token>>& seen,
                  std::vector<env::QueryInstance>& out) {
  std::uint64_t attempt = 0;
  while (static_cast<int>(out.size()) < count) {
    if (attempt > static_cast<std::uint64_t>(count) * 50 + 1000) {
      throw Infeasible(std::string("data: cannot draw enough distinct ") + tag +
                       " queries; enlarge the world or request fewer queries");
    }
    Rng rng(derive_seed(c.seed, tag, attempt));
    const int h = hops[out.size() % hops.size()];
    ++attempt;
    env::QueryInstance q = env::gen_query(world, h, rng, id_base + static_cast<int>(out.size()));
    if (!seen.insert(q.query_tokens).second) continue;
    out.push_back(std::move(q));
  }
}

}  // namespace

Data make_data(const ExperimentConfig& c) {
  Data d{env::gen_world(c.world, derive_seed(c.seed, "world")), {}, {}, {}, {}};
  std::set<std::vector<Token>> seen;
  draw_queries(c, d.world, "eval-query", c.data.eval_queries, c.data.eval_hops, 3000000, seen, d.eval);
  draw_queries(c, d.world, "train-query", c.data.train_queries, c.data.train_hops, 0, seen, d.train);
  draw_queries(c, d.world, "rft-query", c.data.rft_queries, c.data.rft_hops, 1000000, seen, d.rft);
  draw_queries(c, d.world, "rl-query", c.data.rl_queries, c.data.rl_hops, 2000000, seen, d.rl);
  return d;
}

std::vector<env::QueryInstance> Data::rft_pool() const {
  std::vector<env::QueryInstance> out = train;
  out.insert(out.end(), rft.begin(), rft.end());
  return out;
}

policy::PolicyParams run_sft(const ExperimentConfig& c, const Data& d,
                             const sft::EpochCallback& on_epoch) {
  const auto dataset = sft::build_sft_dataset(d.world, d.train, c.eval.k_docs);
  sft::SftConfig sc = c.sft;
  sc.seed = derive_seed(c.seed, "sft");
  sc.num_threads = c.num_threads;
  return sft::train_sft(policy::Policy(d.world.vocab(), c.masking), dataset, sc, on_epoch);
}

std::vector<mcts::PreferencePair> run_search(const ExperimentConfig& c, const Data& d,
                                             const policy::Policy& sft_policy,
                                             std::vector<mcts::SearchTree>* trees) {
  std::vector<const env::QueryInstance*> picked;
  for (const auto& q : d.train) {
    if (static_cast<int>(picked.size()) >= c.search.queries) break;
    if (std::find(c.search.hops.begin(), c.search.hops.end(), q.hop_count) != c.search.hops.end()) {
      picked.push_back(&q);
    }
  }
  std::vector<mcts::SearchTree> all(picked.size());
  std::vector<std::vector<mcts::PreferencePair>> pairs(picked.size());
  parallel_for(picked.size(), c.num_threads, [&](std::size_t i) {
    Rng rng(derive_seed(c.seed, "search", i));
    all[i] = mcts::run_search(*picked[i], sft_policy, d.world, c.search.mcts, rng);
    pairs[i] = mcts::extract_sibling_pairs(all[i], env::Judge(d.world, *picked[i]),
                                           static_cast<int>(i));
  });
  std::vector<mcts::PreferencePair> out;
  for (auto& p : pairs) out.insert(out.end(), p.begin(), p.end());
  if (trees) *trees = std::move(all);
  return out;
}

prm::PrmParams run_prm(const ExperimentConfig& c, const Vocab& vocab,
                       const std::vector<mcts::PreferencePair>& pairs, PrmReport* report,
                       const prm::PrmEpochCallback& on_epoch) {
  if (pairs.empty()) {
    throw Error(ErrorKind::kInfeasible,
                "no sibling pairs to train on; increase search.queries or n_simulations");
  }
  // Held-out pairs come from whole trees the scorer never saw.
  std::set<int> tree_ids;
  for (const auto& p : pairs) tree_ids.insert(p.tree_id);
  std::vector<int> ids(tree_ids.begin(), tree_ids.end());
  Rng rng(derive_seed(c.seed, "prm-split"));
  rng.shuffle(ids.begin(), ids.end());
  const auto n_hold = static_cast<std::size_t>(std::floor(c.prm.holdout_fraction * ids.size()));
  const std::set<int> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<mcts::PreferencePair> train, heldout;
  for (const auto& p : pairs) (held.count(p.tree_id) ? heldout : train).push_back(p);
  if (train.empty()) train = pairs;

  prm::PrmConfig pc = c.prm.train;
  pc.seed = derive_seed(c.seed, "prm");
  prm::PrmModel model(vocab);
  model.params = prm::train_prm(model, train, pc, on_epoch);
  if (report) {
    report->train_pairs = train.size();
    report->heldout_pairs = heldout.size();
    report->train_accuracy = prm::pair_accuracy(model, train);
    report->heldout_accuracy = heldout.empty() ? 0.0 : prm::pair_accuracy(model, heldout);
  }
  return model.params;
}

rl::RlResult run_rl(const ExperimentConfig& c, const Data& d, const policy::Policy& init,
                    const prm::PrmModel& prm, double beta, const rl::RlHooks& hooks) {
  rl::RlConfig rc = c.rl.rl;
  rc.beta = beta;
  rc.seed = derive_seed(c.seed, "rl");
  rc.num_threads = c.num_threads;
  return rl::train_rl(init, prm, d.world, d.rl, d.eval, rc, hooks);
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

Error stage_error(Stage s, const Error& e) {
  return Error(e.kind(), "[" + stage_name(s) + "] " + e.what());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string eval_line(const std::string& name, const EvalResult& r) {
  std::ostringstream s;
  s << name << ": em=" << csv_number(r.em) << " f1=" << csv_number(r.f1)
    << " format_rate=" << csv_number(r.format_rate) << " n=" << r.count;
  return s.str();
}

}  // namespace

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) { config_.validate(); }

std::string Experiment::path(const std::string& name) const {
  return (fs::path(config_.out_dir) / name).string();
}

const Data& Experiment::data() {
  if (!data_) data_ = make_data(config_);
  return *data_;
}

policy::Policy Experiment::load_policy(const std::string& name, Stage needed_by) const {
  const std::string p = path("policy_" + name + ".ckpt");
  if (!fs::exists(p)) {
    throw Error(ErrorKind::kDependency, "[" + stage_name(needed_by) + "] missing " + name +
                                            " policy checkpoint '" + p + "'; run the " + name +
                                            " stage first");
  }
  const Vocab vocab(config_.world.num_relations, config_.world.num_entities);
  return policy::Policy(policy::Featurizer(vocab), policy::load_checkpoint(p), config_.masking);
}

prm::PrmModel Experiment::load_prm(Stage needed_by) const {
  const std::string p = path("prm.ckpt");
  if (!fs::exists(p)) {
    throw Error(ErrorKind::kDependency, "[" + stage_name(needed_by) +
                                            "] missing PRM checkpoint '" + p +
                                            "'; run the prm stage first");
  }
  const Vocab vocab(config_.world.num_relations, config_.world.num_entities);
  return prm::PrmModel(prm::PrmFeaturizer(vocab), prm::load_checkpoint(p));
}

void Experiment::run_stage(Stage stage) {
  fs::create_directories(config_.out_dir);
  try {
    switch (stage) {
      case Stage::kWorld: stage_world(); break;
      case Stage::kSft: stage_sft(); break;
      case Stage::kSearch: stage_search(); break;
      case Stage::kPrm: stage_prm(); break;
      case Stage::kRft: stage_rft(); break;
      case Stage::kRl: stage_rl(); break;
      case Stage::kEval: stage_eval(); break;
    }
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.rfind("[", 0) == 0) throw;
    throw stage_error(stage, e);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kInternal, "[" + stage_name(stage) + "] " + e.what());
  }
}

void Experiment::stage_world() {
  const Data& d = data();
  env::save_world(path("world.jsonl"), d.world);
  env::save_queries(path("queries_train.jsonl"), d.world, d.train);
  env::save_queries(path("queries_rft.jsonl"), d.world, d.rft);
  env::save_queries(path("queries_rl.jsonl"), d.world, d.rl);
  env::save_queries(path("queries_eval.jsonl"), d.world, d.eval);
  summary_lines_.push_back("world: facts=" + std::to_string(d.world.facts().size()) +
                           " distractors=" + std::to_string(d.world.distractors().size()) +
                           " queries train=" + std::to_string(d.train.size()) +
                           " rft=" + std::to_string(d.rft.size()) +
                           " rl=" + std::to_string(d.rl.size()) +
                           " eval=" + std::to_string(d.eval.size()));
}

void Experiment::stage_sft() {
  const Data& d = data();
  const Vocab& vocab = d.world.vocab();
  const auto dataset = sft::build_sft_dataset(d.world, d.train, config_.eval.k_docs);
  std::vector<json> rows;
  for (const auto& ex : dataset) rows.push_back(sft::example_to_json(ex, vocab));
  records::write_jsonl(path("sft_dataset.jsonl"), rows);

  MetricsLog log;
  if (config_.outputs.epoch_checkpoints) fs::create_directories(path("checkpoints"));
  const auto params = run_sft(config_, d, [&](const sft::EpochRecord& r, const policy::PolicyParams& p) {
    log.add(r.epoch, {{"loss", r.loss.loss},
                      {"control_nll", r.loss.control_nll},
                      {"normal_nll", r.loss.normal_nll}});
    if (config_.outputs.epoch_checkpoints && r.epoch > 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoints/sft_epoch_%03d.ckpt", r.epoch);
      policy::save_checkpoint(path(name), p);
    }
  });
  std::string csv = log.to_csv({"loss", "control_nll", "normal_nll"});
  csv.replace(0, std::string("iteration").size(), "epoch");
  write_text(path("sft_loss.csv"), csv);
  policy::save_checkpoint(path("policy_sft.ckpt"), params);
  summary_lines_.push_back("sft: examples=" + std::to_string(dataset.size()) + " final_loss=" +
                           csv_number(log.records().back().values.at("loss")));
}

void Experiment::stage_search() {
  const Data& d = data();
  const policy::Policy pol = load_policy("sft", Stage::kSearch);
  std::vector<mcts::SearchTree> trees;
  const auto pairs = run_search(config_, d, pol, &trees);
  const Vocab& vocab = d.world.vocab();
  if (config_.outputs.trees) {
    std::vector<json> rows;
    for (std::size_t i = 0; i < trees.size(); ++i) {
      rows.push_back(mcts::tree_to_json(trees[i], vocab, static_cast<int>(i)));
    }
    records::write_jsonl(path("trees.jsonl"), rows);
  }
  std::vector<json> rows;
  for (const auto& p : pairs) rows.push_back(mcts::pair_to_json(p, vocab));
  records::write_jsonl(path("pairs.jsonl"), rows);
  summary_lines_.push_back("search: trees=" + std::to_string(trees.size()) +
                           " pairs=" + std::to_string(pairs.size()));
}

void Experiment::stage_prm() {
  const Data& d = data();
  const Vocab& vocab = d.world.vocab();
  const std::string pp = path("pairs.jsonl");
  if (!fs::exists(pp)) {
    throw Error(ErrorKind::kDependency,
                "[prm] missing pair dataset '" + pp + "'; run the search stage first");
  }
  std::vector<mcts::PreferencePair> pairs;
  for (const auto& j : records::read_jsonl(pp)) pairs.push_back(mcts::pair_from_json(j, vocab));
  MetricsLog log;
  PrmReport report;
  const auto params = run_prm(config_, vocab, pairs, &report, [&](const prm::PrmEpoch& e) {
    log.add(e.epoch, {{"loss", e.loss}, {"train_accuracy", e.accuracy}});
  });
  std::string csv = log.to_csv({"loss", "train_accuracy"});
  csv.replace(0, std::string("iteration").size(), "epoch");
  write_text(path("prm_metrics.csv"), csv);
  prm::save_checkpoint(path("prm.ckpt"), params);
  summary_lines_.push_back("prm: train_pairs=" + std::to_string(report.train_pairs) +
                           " heldout_pairs=" + std::to_string(report.heldout_pairs) +
                           " train_accuracy=" + csv_number(report.train_accuracy) +
                           " heldout_accuracy=" + csv_number(report.heldout_accuracy));
}

void Experiment::stage_rft() {
  const Data& d = data();
  const Vocab& vocab = d.world.vocab();
  const policy::Policy pol = load_policy("sft", Stage::kRft);
  const prm::PrmModel prm = load_prm(Stage::kRft);
  rft::RftConfig rc = config_.rft;
  rc.seed = derive_seed(config_.seed, "rft");
  rc.num_threads = config_.num_threads;
  const auto kept = rft::collect(pol, prm, d.world, d.rft_pool(), rc);
  std::vector<json> rows;
  for (const auto& r : kept) rows.push_back(rft::retained_to_json(r, vocab));
  records::write_jsonl(path("rft_pairs.jsonl"), rows);
  MetricsLog log;
  const auto params = rft::train_rft(pol, kept, rc, [&](const sft::EpochRecord& r, const policy::PolicyParams&) {
    log.add(r.epoch, {{"loss", r.loss.loss}});
  });
  std::string csv = log.to_csv({"loss"});
  csv.replace(0, std::string("iteration").size(), "epoch");
  write_text(path("rft_loss.csv"), csv);
  policy::save_checkpoint(path("policy_rft.ckpt"), params);
  summary_lines_.push_back("rft: retained_steps=" + std::to_string(kept.size()));
}

void Experiment::stage_rl() {
  const Data& d = data();
  const Vocab& vocab = d.world.vocab();
  const policy::Policy init = load_policy(config_.rl.init, Stage::kRl);
  const prm::PrmModel prm = load_prm(Stage::kRl);
  std::ofstream dumps;
  rl::RlHooks hooks;
  if (config_.outputs.group_dumps) {
    dumps.open(path("rl_groups.jsonl"), std::ios::binary);
    if (!dumps) throw IoError("cannot open '" + path("rl_groups.jsonl") + "' for writing");
    hooks.on_group = [&](const json& j) { dumps << j.dump() << '\n'; };
  }
  (void)vocab;
  rl::RlResult result;
  try {
    result = run_rl(config_, d, init, prm, config_.rl.rl.beta, hooks);
  } catch (const rl::DivergenceError& e) {
    const std::string p = path("policy_rl.last_good.ckpt");
    policy::save_checkpoint(p, e.last_good());
    throw Error(ErrorKind::kDivergence,
                std::string("[rl] ") + e.what() + "; last good parameters saved to '" + p + "'");
  }
  result.log.write_csv(path("rl_metrics.csv"), rl::kMetricColumns);
  policy::save_checkpoint(path("policy_rl.ckpt"), result.params);
  const auto& last = result.log.records().back().values;
  summary_lines_.push_back("rl: iterations=" + std::to_string(config_.rl.rl.iterations) +
                           " final_mean_r_out=" + csv_number(last.at("mean_r_out")) +
                           " final_format_rate=" + csv_number(last.at("format_rate")));
}

std::map<std::string, EvalResult> Experiment::evaluate_checkpoints() {
  fs::create_directories(config_.out_dir);
  const Data& d = data();
  std::map<std::string, EvalResult> out;
  EvalOptions eo = config_.eval;
  eo.num_threads = config_.num_threads;
  std::ostringstream csv;
  csv << "policy,count,em,f1,format_rate,coverage_le1,coverage_le2,coverage_all,cum_f1_le1,"
         "cum_f1_le2,cum_f1_all\n";
  for (const char* name : {"sft", "rft", "rl"}) {
    if (!fs::exists(path(std::string("policy_") + name + ".ckpt"))) continue;
    const policy::Policy pol = load_policy(name, Stage::kEval);
    const EvalResult r = evaluate(pol, d.world, d.eval, eo);
    out[name] = r;
    csv << name << ',' << r.count << ',' << csv_number(r.em) << ',' << csv_number(r.f1) << ','
        << csv_number(r.format_rate);
    for (double v : r.coverage) csv << ',' << csv_number(v);
    for (double v : r.cumulative_f1) csv << ',' << csv_number(v);
    csv << '\n';
  }
  if (out.empty()) {
    throw Error(ErrorKind::kDependency, "[eval] no policy checkpoint found in '" + config_.out_dir + "'");
  }
  write_text(path("eval.csv"), csv.str());
  std::ostringstream hop;
  hop << "policy,hops,count,em,f1\n";
  for (const auto& [name, r] : out) {
    for (const auto& [h, b] : r.per_hop) {
      hop << name << ',' << h << ',' << b.count << ',' << csv_number(b.em) << ','
          << csv_number(b.f1) << '\n';
    }
  }
  write_text(path("eval_per_hop.csv"), hop.str());
  return out;
}

void Experiment::stage_eval() {
  for (const auto& [name, r] : evaluate_checkpoints()) summary_lines_.push_back(eval_line("eval " + name, r));
}

std::string Experiment::summary() const {
  std::ostringstream out;
  out << "seed: " << config_.seed << '\n';
  for (const auto& line : summary_lines_) out << line << '\n';
  return out.str();
}

std::string Experiment::run_pipeline() {
  summary_lines_.clear();
  const Stages& s = config_.stages;
  if (s.world) run_stage(Stage::kWorld);
  if (s.sft) run_stage(Stage::kSft);
  if (s.search) run_stage(Stage::kSearch);
  if (s.prm) run_stage(Stage::kPrm);
  if (s.rft) run_stage(Stage::kRft);
  if (s.rl) run_stage(Stage::kRl);
  if (s.eval) run_stage(Stage::kEval);
  const std::string text = summary();
  write_text(path("summary.txt"), text);
  return text;
}

// ---------------------------------------------------------------------------
// Ablations and sweeps

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

int first_reaching(const std::vector<double>& curve, double threshold) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i] >= threshold) return static_cast<int>(i);
  }
  return static_cast<int>(curve.size());
}

const VariantScore& AblationReport::variant(const std::string& name) const {
  for (const auto& v : variants) {
    if (v.variant == name) return v;
  }
  throw InvalidArgument("ablation: no variant named '" + name + "'");
}

namespace {

std::vector<double> reward_curve(const MetricsLog& log) {
  std::vector<double> out;
  for (const auto& [it, v] : log.series("mean_r_out")) out.push_back(v);
  return out;
}

std::string beta_label(double b) { return "beta=" + csv_number(b); }

}  // namespace

AblationReport run_ablations(const ExperimentConfig& config) {
  config.validate();
  const std::string dir = (fs::path(config.out_dir) / "ablation").string();
  fs::create_directories(dir);
  AblationReport rep;
  const std::vector<std::string> names = {"Full", "w/o Refinement", "w/o RL", "SFT Policy",
                                          "GRPO Baseline"};
  for (const auto& n : names) rep.variants.push_back({n, {}, {}});
  rep.betas = config.ablation.beta_grid;
  for (double b : rep.betas) rep.beta_sweep.push_back({beta_label(b), {}, {}});
  const double beta = config.rl.rl.beta;

  std::ostringstream per_seed;
  per_seed << "seed,variant,em,f1\n";
  std::ostringstream curves;
  curves << "seed,run,iteration,mean_r_out,format_rate\n";

  for (int i = 0; i < config.ablation.seeds; ++i) {
    ExperimentConfig c = config;
    c.seed = derive_seed(config.seed, "ablation", static_cast<std::uint64_t>(i));
    rep.seeds.push_back(c.seed);
    const Data d = make_data(c);
    EvalOptions eo = c.eval;
    eo.num_threads = c.num_threads;

    const policy::Policy sft_pol(policy::Featurizer(d.world.vocab()), run_sft(c, d), c.masking);
    const auto pairs = run_search(c, d, sft_pol);
    const prm::PrmModel prm(prm::PrmFeaturizer(d.world.vocab()),
                            run_prm(c, d.world.vocab(), pairs, nullptr));
    rft::RftConfig rc = c.rft;
    rc.seed = derive_seed(c.seed, "rft");
    rc.num_threads = c.num_threads;
    const auto kept = rft::collect(sft_pol, prm, d.world, d.rft_pool(), rc);
    const policy::Policy rft_pol(sft_pol.featurizer, rft::train_rft(sft_pol, kept, rc), c.masking);

    auto score = [&](const policy::Policy& p) { return evaluate(p, d.world, d.eval, eo); };
    auto record = [&](const std::string& name, const EvalResult& r) {
      for (auto& v : rep.variants) {
        if (v.variant == name) {
          v.f1.push_back(r.f1);
          v.em.push_back(r.em);
        }
      }
      per_seed << c.seed << ',' << name << ',' << csv_number(r.em) << ',' << csv_number(r.f1) << '\n';
    };
    auto log_curve = [&](const std::string& run, const MetricsLog& log) {
      for (const auto& r : log.records()) {
        curves << c.seed << ',' << run << ',' << r.iteration << ','
               << csv_number(r.values.at("mean_r_out")) << ','
               << csv_number(r.values.at("format_rate")) << '\n';
      }
    };

    std::map<double, EvalResult> by_beta;
    for (double b : rep.betas) {
      const auto res = run_rl(c, d, rft_pol, prm, b);
      log_curve("rft " + beta_label(b), res.log);
      by_beta[b] = score(policy::Policy(sft_pol.featurizer, res.params, c.masking));
    }
    EvalResult full;
    if (by_beta.count(beta)) {
      full = by_beta.at(beta);
    } else {
      const auto res = run_rl(c, d, rft_pol, prm, beta);
      log_curve("rft " + beta_label(beta), res.log);
      full = score(policy::Policy(sft_pol.featurizer, res.params, c.masking));
    }
    const auto no_ref = run_rl(c, d, sft_pol, prm, beta);
    const auto grpo = run_rl(c, d, sft_pol, prm, 0.0);
    log_curve("sft " + beta_label(beta), no_ref.log);
    log_curve("sft " + beta_label(0.0), grpo.log);
    rep.curve_beta.push_back(reward_curve(no_ref.log));
    rep.curve_grpo.push_back(reward_curve(grpo.log));

    record("Full", full);
    record("w/o Refinement", score(policy::Policy(sft_pol.featurizer, no_ref.params, c.masking)));
    record("w/o RL", score(rft_pol));
    record("SFT Policy", score(sft_pol));
    record("GRPO Baseline", score(policy::Policy(sft_pol.featurizer, grpo.params, c.masking)));
    for (std::size_t k = 0; k < rep.betas.size(); ++k) {
      const EvalResult& r = by_beta.at(rep.betas[k]);
      rep.beta_sweep[k].f1.push_back(r.f1);
      rep.beta_sweep[k].em.push_back(r.em);
      per_seed << c.seed << ',' << beta_label(rep.betas[k]) << ',' << csv_number(r.em) << ','
               << csv_number(r.f1) << '\n';
    }
  }

  std::ostringstream table, sweep, text;
  table << "variant,seeds,mean_f1,sd_f1,mean_em,sd_em\n";
  text << "variant            mean F1 (sd)        mean EM (sd)\n";
  for (const auto& v : rep.variants) {
    table << v.variant << ',' << v.f1.size() << ',' << csv_number(mean(v.f1)) << ','
          << csv_number(stddev(v.f1)) << ',' << csv_number(mean(v.em)) << ','
          << csv_number(stddev(v.em)) << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "%-18s %.4f (%.4f)     %.4f (%.4f)\n", v.variant.c_str(),
                  mean(v.f1), stddev(v.f1), mean(v.em), stddev(v.em));
    text << line;
  }
  sweep << "beta,seeds,mean_f1,sd_f1,mean_em,sd_em\n";
  text << "\nbeta sweep (RL from the refined policy)\n";
  for (std::size_t k = 0; k < rep.betas.size(); ++k) {
    const auto& v = rep.beta_sweep[k];
    sweep << csv_number(rep.betas[k]) << ',' << v.f1.size() << ',' << csv_number(mean(v.f1)) << ','
          << csv_number(stddev(v.f1)) << ',' << csv_number(mean(v.em)) << ','
          << csv_number(stddev(v.em)) << '\n';
    char line[160];
    std::snprintf(line, sizeof(line), "beta=%-6g F1 %.4f (%.4f)  EM %.4f (%.4f)\n", rep.betas[k],
                  mean(v.f1), stddev(v.f1), mean(v.em), stddev(v.em));
    text << line;
  }
  write_text((fs::path(dir) / "ablation.csv").string(), table.str());
  write_text((fs::path(dir) / "ablation_per_seed.csv").string(), per_seed.str());
  write_text((fs::path(dir) / "beta_sweep.csv").string(), sweep.str());
  write_text((fs::path(dir) / "learning_curves.csv").string(), curves.str());
  write_text((fs::path(dir) / "ablation.txt").string(), text.str());
  return rep;
}

std::vector<SweepRow> sweep_retrieval(const policy::Policy& policy, const env::World& world,
                                      const std::vector<env::QueryInstance>& queries,
                                      const std::vector<int>& k_grid, const EvalOptions& options) {
  std::vector<SweepRow> rows;
  for (int k : k_grid) {
    if (k < 1) throw InvalidArgument("sweep_retrieval: k must be >= 1");
    EvalOptions eo = options;
    eo.k_docs = k;
    const EvalResult r = evaluate(policy, world, queries, eo);
    for (const auto& [h, b] : r.per_hop) rows.push_back({k, h, b.count, b.em, b.f1});
  }
  return rows;
}

std::vector<SweepRow> sweep_retrieval(Experiment& experiment) {
  const auto& c = experiment.config();
  std::string name;
  for (const char* n : {"rl", "rft", "sft"}) {
    if (fs::exists(experiment.path(std::string("policy_") + n + ".ckpt"))) {
      name = n;
      break;
    }
  }
  if (name.empty()) {
    throw Error(ErrorKind::kDependency,
                "[sweep-k] no policy checkpoint found in '" + c.out_dir + "'; run the sft stage first");
  }
  const Data d = make_data(c);
  const Vocab& vocab = d.world.vocab();
  const policy::Policy pol(policy::Featurizer(vocab),
                           policy::load_checkpoint(experiment.path("policy_" + name + ".ckpt")),
                           c.masking);
  // Every hop depth the world supports, disjoint from all four pools.
  std::set<std::vector<Token>> seen;
  for (const auto* pool : {&d.train, &d.rft, &d.rl, &d.eval}) {
    for (const auto& q : *pool) seen.insert(q.query_tokens);
  }
  std::vector<int> hops;
  for (int h = 1; h <= c.world.max_hops; ++h) hops.push_back(h);
  std::vector<env::QueryInstance> queries;
  draw_queries(c, d.world, "sweep-query", std::max(c.data.eval_queries, c.world.max_hops), hops,
               4000000, seen, queries);
  EvalOptions eo = c.eval;
  eo.num_threads = c.num_threads;
  auto rows = sweep_retrieval(pol, d.world, queries, c.k_grid, eo);
  std::ostringstream csv;
  csv << "policy,k,hops,count,em,f1\n";
  for (const auto& r : rows) {
    csv << name << ',' << r.k << ',' << r.hops << ',' << r.count << ',' << csv_number(r.em) << ','
        << csv_number(r.f1) << '\n';
  }
  fs::create_directories(c.out_dir);
  write_text(experiment.path("sweep_k.csv"), csv.str());
  return rows;
}

}  // namespace hoplab::harness
