// Command-line experiment driver: tube building, gated training runs,
// threshold sweeps, policy evaluation, containment checks, and SVG plots.
//
// Exit codes: 0 success, 1 runtime failure (integration blowup, coverage not
// reached, I/O write failure), 2 usage or configuration error.

#include <CLI11.hpp>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tubedagger/dagger.hpp"
#include "tubedagger/envs.hpp"
#include "tubedagger/errors.hpp"
#include "tubedagger/gating.hpp"
#include "tubedagger/json_util.hpp"
#include "tubedagger/policies.hpp"
#include "tubedagger/reachtube.hpp"
#include "tubedagger/rng.hpp"
#include "tubedagger/safety.hpp"
#include "tubedagger/svg.hpp"

namespace td = tubedagger;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

// ---------------------------------------------------------------------------
// File and seed plumbing
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw td::ConfigError("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write file: " + path);
}

std::optional<std::uint64_t> env_master_seed() {
  const char* raw = std::getenv("TUBEDAGGER_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (end == raw || *end != '\0') {
    throw td::ConfigError("TUBEDAGGER_SEED must be an unsigned integer");
  }
  return static_cast<std::uint64_t>(v);
}

// Priority: explicit flag > TUBEDAGGER_SEED > 0.
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value) {
  if (flag_given) return flag_value;
  if (const auto env = env_master_seed()) return *env;
  return 0;
}

std::vector<std::uint64_t> resolve_seeds(const std::vector<std::uint64_t>& listed) {
  if (!listed.empty()) return listed;
  if (const auto env = env_master_seed()) return {*env};
  return {0};
}

// ---------------------------------------------------------------------------
// Run configuration (config JSON + flags; flags win)
// ---------------------------------------------------------------------------

struct RunFlags {
  std::string env;
  std::string algorithm = "tubedagger";
  int episodes = 40;
  int horizon = 0;
  double sigma2 = 0.01;
  double beta_minus = 0.2;
  double beta_plus = 0.7;
  double tau_low = -1.0;   // -1 = per-algorithm default
  double tau_high = -1.0;  // -1 = per-algorithm default
  double tau_m = 0.0;
  double lr = 1e-3;
  double momentum = 0.9;
  int epochs = 50;
  int minibatch = 64;
  int eval_episodes = 5;
  double solved_threshold = std::nan("");
  int init_demos = 0;
  int n_demos = 5;
  int ensemble_size = 5;
  std::vector<int> hidden = {32};
  std::string tube_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "runs";
  std::vector<std::pair<double, double>> pairs;  // sweep grid
  int workers = 0;  // 0 = hardware concurrency
};

void check_pair(double lo, double hi) {
  if (!(lo < hi)) {
    throw td::ConfigError("threshold pair (" + td::fmt17(lo) + ", " + td::fmt17(hi) +
                          ") rejected: the lower threshold must be strictly below the upper");
  }
}

std::vector<std::pair<double, double>> parse_pairs(const std::string& text) {
  std::vector<std::pair<double, double>> pairs;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const std::size_t sep = token.find(':');
    if (sep == std::string::npos) {
      throw td::ConfigError("threshold pair must be written low:high, got: " + token);
    }
    const auto to_double = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0') {
        throw td::ConfigError("malformed threshold value: " + s);
      }
      return v;
    };
    const double lo = to_double(token.substr(0, sep));
    const double hi = to_double(token.substr(sep + 1));
    check_pair(lo, hi);
    pairs.emplace_back(lo, hi);
  }
  if (pairs.empty()) throw td::ConfigError("threshold grid is empty");
  return pairs;
}

// Load a config JSON document into the flag defaults.  Unknown keys are
// rejected so typos fail loudly instead of silently using defaults.
void load_config(const std::string& path, RunFlags& rf) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw td::ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw td::ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "env") rf.env = value.get<std::string>();
    else if (key == "algorithm") rf.algorithm = value.get<std::string>();
    else if (key == "episodes") rf.episodes = value.get<int>();
    else if (key == "horizon") rf.horizon = value.get<int>();
    else if (key == "sigma2") rf.sigma2 = value.get<double>();
    else if (key == "beta_minus") rf.beta_minus = value.get<double>();
    else if (key == "beta_plus") rf.beta_plus = value.get<double>();
    else if (key == "tau_low") rf.tau_low = value.get<double>();
    else if (key == "tau_high") rf.tau_high = value.get<double>();
    else if (key == "tau_m") rf.tau_m = value.get<double>();
    else if (key == "lr") rf.lr = value.get<double>();
    else if (key == "momentum") rf.momentum = value.get<double>();
    else if (key == "epochs") rf.epochs = value.get<int>();
    else if (key == "minibatch") rf.minibatch = value.get<int>();
    else if (key == "eval_episodes") rf.eval_episodes = value.get<int>();
    else if (key == "solved_threshold") rf.solved_threshold = value.get<double>();
    else if (key == "init_demo_episodes") rf.init_demos = value.get<int>();
    else if (key == "n_demos") rf.n_demos = value.get<int>();
    else if (key == "ensemble_size") rf.ensemble_size = value.get<int>();
    else if (key == "hidden") rf.hidden = value.get<std::vector<int>>();
    else if (key == "tube") rf.tube_path = value.get<std::string>();
    else if (key == "seeds") rf.seeds = value.get<std::vector<std::uint64_t>>();
    else if (key == "out_dir") rf.out_dir = value.get<std::string>();
    else if (key == "workers") rf.workers = value.get<int>();
    else if (key == "pairs") {
      rf.pairs.clear();
      for (const auto& entry : value) {
        if (!entry.is_array() || entry.size() != 2) {
          throw td::ConfigError("config pairs entries must be [low, high] arrays");
        }
        const double lo = entry[0].get<double>();
        const double hi = entry[1].get<double>();
        check_pair(lo, hi);
        rf.pairs.emplace_back(lo, hi);
      }
    } else {
      throw td::ConfigError("unknown config key: " + key);
    }
  }
}

td::TrainConfig make_train_config(const RunFlags& rf) {
  td::TrainConfig cfg;
  cfg.episodes = rf.episodes;
  cfg.horizon = rf.horizon;
  cfg.sigma2 = rf.sigma2;
  cfg.tube_gate = {rf.beta_minus, rf.beta_plus};
  cfg.doubt_gate = {rf.tau_low < 0.0 ? 0.1 : rf.tau_low,
                    rf.tau_high < 0.0 ? 0.5 : rf.tau_high, rf.tau_m};
  cfg.variance_gate = {rf.tau_low < 0.0 ? 0.001 : rf.tau_low,
                       rf.tau_high < 0.0 ? 0.01 : rf.tau_high};
  cfg.optimizer = {rf.lr, rf.momentum, rf.epochs, rf.minibatch};
  cfg.eval_episodes = rf.eval_episodes;
  cfg.solved_threshold = rf.solved_threshold;
  cfg.init_demo_episodes = rf.init_demos;
  return cfg;
}

// ---------------------------------------------------------------------------
// Algorithm dispatch
// ---------------------------------------------------------------------------

struct RunResult {
  std::vector<td::MetricsRecord> metrics;
  // (file stem, serialized JSON) for each checkpoint the run produces.
  std::vector<std::pair<std::string, std::string>> checkpoints;
};

std::vector<int> policy_layers(const td::SystemSpec& spec, const std::vector<int>& hidden,
                               int output_dim) {
  std::vector<int> layers;
  layers.push_back(static_cast<int>(spec.state_dim));
  layers.insert(layers.end(), hidden.begin(), hidden.end());
  layers.push_back(output_dim);
  return layers;
}

RunResult run_algorithm(const RunFlags& rf, td::TrainConfig cfg,
                        const std::optional<td::ReachTube>& tube, std::uint64_t seed) {
  cfg.seed = seed;
  const td::EnvId id = td::env_from_string(rf.env);
  const td::AnyEnv env = td::make_env(id);
  const td::AnyExpert expert = td::make_expert(id);
  return std::visit(
      [&](const auto& sys) {
        return std::visit(
            [&](const auto& ex) -> RunResult {
              const td::SystemSpec& spec = sys.spec();
              td::SplitRng init_rng = td::SplitRng(seed).split("init");
              td::MlpPolicy novice = td::make_mlp(
                  policy_layers(spec, rf.hidden, static_cast<int>(spec.action_dim)),
                  td::Activation::tanh, td::OutputHead::linear, init_rng);
              if (rf.algorithm == "tubedagger") {
                if (!tube) throw td::ConfigError("algorithm tubedagger requires --tube");
                td::TrainOutput out = td::tubedagger_train(sys, ex, std::move(novice), *tube, cfg);
                return {std::move(out.metrics),
                        {{"checkpoint", td::serialize_policy(out.novice)}}};
              }
              if (rf.algorithm == "lazydagger") {
                td::SplitRng doubt_rng = td::SplitRng(seed).split("doubt_init");
                td::MlpPolicy doubt =
                    td::make_mlp(policy_layers(spec, rf.hidden, 1), td::Activation::tanh,
                                 td::OutputHead::sigmoid, doubt_rng);
                td::LazyTrainOutput out =
                    td::lazydagger_train(sys, ex, std::move(novice), std::move(doubt), cfg);
                return {std::move(out.metrics),
                        {{"checkpoint", td::serialize_policy(out.novice)},
                         {"doubt", td::serialize_policy(out.doubt)}}};
              }
              if (rf.algorithm == "ensembledagger") {
                if (rf.ensemble_size < 2) {
                  throw td::ConfigError("ensemble_size must be >= 2");
                }
                std::vector<td::MlpPolicy> members;
                for (int k = 0; k < rf.ensemble_size; ++k) {
                  td::SplitRng member_rng =
                      td::SplitRng(seed).split("member_init").split(static_cast<std::uint64_t>(k));
                  members.push_back(td::make_mlp(
                      policy_layers(spec, rf.hidden, static_cast<int>(spec.action_dim)),
                      td::Activation::tanh, td::OutputHead::linear, member_rng));
                }
                td::EnsembleTrainOutput out =
                    td::ensembledagger_train(sys, ex, std::move(members), cfg);
                RunResult result;
                result.metrics = std::move(out.metrics);
                for (std::size_t k = 0; k < out.ensemble.size(); ++k) {
                  result.checkpoints.emplace_back("member" + std::to_string(k),
                                                  td::serialize_policy(out.ensemble[k]));
                }
                return result;
              }
              if (rf.algorithm == "bc") {
                td::TrainOutput out =
                    td::behavioral_cloning(sys, ex, std::move(novice), rf.n_demos, cfg);
                return {std::move(out.metrics),
                        {{"checkpoint", td::serialize_policy(out.novice)}}};
              }
              throw td::ConfigError("unknown algorithm: " + rf.algorithm +
                                    " (expected tubedagger, lazydagger, ensembledagger, or bc)");
            },
            expert);
      },
      env);
}

int first_solved_episode(const std::vector<td::MetricsRecord>& series) {
  for (const td::MetricsRecord& m : series) {
    if (m.solved) return m.episode;
  }
  return -1;
}

std::optional<td::ReachTube> load_tube_if_needed(const RunFlags& rf) {
  if (rf.algorithm != "tubedagger") return std::nullopt;
  if (rf.tube_path.empty()) {
    throw td::ConfigError("algorithm tubedagger requires --tube <tube.json>");
  }
  return td::deserialize_tube(read_file(rf.tube_path));
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct BuildTubeArgs {
  std::string env;
  td::TubeConfig cfg;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "tube.json";
};

int cmd_build_tube(const BuildTubeArgs& args) {
  if (args.env.empty()) throw td::ConfigError("missing --env");
  const std::uint64_t seed = resolve_seed(args.seed_given, args.seed);
  const td::EnvId id = td::env_from_string(args.env);
  const td::AnyEnv env = td::make_env(id);
  const td::AnyExpert expert = td::make_expert(id);
  const td::BuildResult result = std::visit(
      [&](const auto& sys) {
        return std::visit([&](const auto& ex) { return td::build_tube(sys, ex, args.cfg, seed); },
                          expert);
      },
      env);
  std::cout << "env: " << args.env << "  seed: " << seed << '\n';
  std::cout << "samples: " << result.tube.sample_count << "  batches: " << result.batches_used
            << '\n';
  std::cout << "min coverage: " << td::fmt17(result.min_coverage) << " at step "
            << result.min_coverage_step << " (target " << td::fmt17(1.0 - args.cfg.gamma)
            << ")\n";
  const std::string serialized = td::serialize_tube(result.tube);
  if (!result.coverage_reached) {
    const std::string partial = args.out + ".partial";
    write_file(partial, serialized);
    std::cerr << "error: coverage target not reached within the batch budget; partial tube"
                 " written to "
              << partial << '\n';
    return kRuntimeError;
  }
  write_file(args.out, serialized);
  std::cout << "tube written to " << args.out << '\n';
  return kOk;
}

int cmd_train(const RunFlags& rf) {
  if (rf.env.empty()) throw td::ConfigError("missing --env");
  const td::TrainConfig base = make_train_config(rf);
  const std::optional<td::ReachTube> tube = load_tube_if_needed(rf);
  const std::vector<std::uint64_t> seeds = resolve_seeds(rf.seeds);
  for (const std::uint64_t seed : seeds) {
    const RunResult result = run_algorithm(rf, base, tube, seed);
    const std::string suffix = "_seed" + std::to_string(seed);
    const fs::path dir(rf.out_dir);
    write_file((dir / ("metrics" + suffix + ".csv")).string(), td::metrics_csv(result.metrics));
    for (const auto& [stem, content] : result.checkpoints) {
      write_file((dir / (stem + suffix + ".json")).string(), content);
    }
    const td::SwitchCount switches = td::context_switches_until_solved(result.metrics);
    const int solved_ep = first_solved_episode(result.metrics);
    std::cout << "seed " << seed << ": ";
    if (switches.solved) {
      std::cout << "solved at episode " << solved_ep << ", context switches until solved "
                << switches.count;
    } else {
      std::cout << "not solved in " << result.metrics.size() << " episodes, context switches "
                << switches.count;
    }
    std::cout << ", final eval median "
              << td::fmt17(result.metrics.back().eval_reward_median) << '\n';
  }
  std::cout << "outputs in " << rf.out_dir << '\n';
  return kOk;
}

int cmd_sweep(const RunFlags& rf) {
  if (rf.env.empty()) throw td::ConfigError("missing --env");
  if (rf.algorithm == "bc") {
    throw td::ConfigError("sweep needs a gated algorithm (bc has no thresholds)");
  }
  if (rf.pairs.empty()) throw td::ConfigError("missing threshold grid (--pairs)");
  const std::optional<td::ReachTube> tube = load_tube_if_needed(rf);
  const std::vector<std::uint64_t> seeds = resolve_seeds(rf.seeds);

  struct Task {
    std::size_t pair_index;
    std::pair<double, double> pair;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < rf.pairs.size(); ++p) {
    for (const std::uint64_t s : seeds) tasks.push_back({p, rf.pairs[p], s});
  }

  struct Row {
    Task task;
    bool ok = false;
    std::string error;
    td::MetricsRecord final_record;
    td::SwitchCount switches;
    int solved_episode = -1;
  };
  std::vector<Row> rows(tasks.size());

  // Every run is fully determined by its own (pair, seed) configuration, so
  // the worker count cannot change any numerical output, only wall time.
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      Row& row = rows[i];
      row.task = tasks[i];
      try {
        RunFlags run_flags = rf;
        if (rf.algorithm == "tubedagger") {
          run_flags.beta_minus = tasks[i].pair.first;
          run_flags.beta_plus = tasks[i].pair.second;
        } else {
          run_flags.tau_low = tasks[i].pair.first;
          run_flags.tau_high = tasks[i].pair.second;
        }
        const td::TrainConfig cfg = make_train_config(run_flags);
        const RunResult result = run_algorithm(run_flags, cfg, tube, tasks[i].seed);
        const fs::path dir = fs::path(rf.out_dir) /
                             ("pair_" + td::detail::fmt_svg(tasks[i].pair.first) + "_" +
                              td::detail::fmt_svg(tasks[i].pair.second)) /
                             ("seed_" + std::to_string(tasks[i].seed));
        write_file((dir / "metrics.csv").string(), td::metrics_csv(result.metrics));
        for (const auto& [stem, content] : result.checkpoints) {
          write_file((dir / (stem + ".json")).string(), content);
        }
        row.final_record = result.metrics.back();
        row.switches = td::context_switches_until_solved(result.metrics);
        row.solved_episode = first_solved_episode(result.metrics);
        row.ok = true;
      } catch (const std::exception& e) {
        row.error = e.what();
        const std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "run (pair " << tasks[i].pair.first << ":" << tasks[i].pair.second
                  << ", seed " << tasks[i].seed << ") failed: " << e.what() << '\n';
      }
    }
  };
  const unsigned hw = std::thread::hardware_concurrency();
  const std::size_t n_workers =
      std::min(tasks.size(),
               static_cast<std::size_t>(rf.workers > 0 ? rf.workers : (hw > 0 ? hw : 1)));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  // Aggregate CSV, one row per run, keyed by the threshold pair.
  std::string csv =
      "gate_low,gate_high,seed,final_eval_median,final_eval_std,solved,solved_episode,"
      "context_switches_until_solved,final_novice_action_pct,final_dataset_size,status\n";
  for (const Row& row : rows) {
    csv += td::fmt17(row.task.pair.first) + "," + td::fmt17(row.task.pair.second) + "," +
           std::to_string(row.task.seed) + ",";
    if (row.ok) {
      csv += td::fmt17(row.final_record.eval_reward_median) + "," +
             td::fmt17(row.final_record.eval_reward_std) + "," +
             (row.switches.solved ? "1" : "0") + "," + std::to_string(row.solved_episode) +
             "," + std::to_string(row.switches.count) + "," +
             td::fmt17(row.final_record.novice_action_pct) + "," +
             std::to_string(row.final_record.dataset_size) + ",ok\n";
    } else {
      csv += ",,,,,,,error\n";
    }
  }
  write_file((fs::path(rf.out_dir) / "sweep.csv").string(), csv);

  // Boxplots across seeds, one group per pair.
  std::vector<td::BoxGroup> reward_groups, pct_groups;
  for (std::size_t p = 0; p < rf.pairs.size(); ++p) {
    td::BoxGroup reward, pct;
    reward.label = "(" + td::detail::fmt_svg(rf.pairs[p].first) + "," +
                   td::detail::fmt_svg(rf.pairs[p].second) + ")";
    pct.label = reward.label;
    for (const Row& row : rows) {
      if (row.ok && row.task.pair_index == p) {
        reward.values.push_back(row.final_record.eval_reward_median);
        pct.values.push_back(row.final_record.novice_action_pct);
      }
    }
    if (!reward.values.empty()) {
      reward_groups.push_back(std::move(reward));
      pct_groups.push_back(std::move(pct));
    }
  }
  if (!reward_groups.empty()) {
    write_file((fs::path(rf.out_dir) / "sweep_eval_reward.svg").string(),
               td::boxplot_svg(reward_groups, "final evaluation reward per threshold pair",
                               "eval reward median"));
    write_file((fs::path(rf.out_dir) / "sweep_novice_pct.svg").string(),
               td::boxplot_svg(pct_groups, "final novice action share per threshold pair",
                               "novice action %"));
  }
  std::size_t failures = 0;
  for (const Row& row : rows) failures += row.ok ? 0 : 1;
  std::cout << "sweep finished: " << rows.size() - failures << "/" << rows.size()
            << " runs ok, outputs in " << rf.out_dir << '\n';
  return kOk;
}

struct EvalArgs {
  std::string env;
  std::vector<std::string> policy_paths;
  int episodes = 5;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  std::string dump;
};

int cmd_eval(const EvalArgs& args) {
  if (args.env.empty()) throw td::ConfigError("missing --env");
  if (args.policy_paths.empty()) throw td::ConfigError("missing --policy");
  const std::uint64_t seed = resolve_seed(args.seed_given, args.seed);
  const td::EnvId id = td::env_from_string(args.env);
  const td::AnyEnv env = td::make_env(id);
  std::vector<td::MlpPolicy> policies;
  for (const std::string& path : args.policy_paths) {
    policies.push_back(td::deserialize_policy(read_file(path)));
  }
  const td::EvalResult result = std::visit(
      [&](const auto& sys) {
        const td::SystemSpec& spec = sys.spec();
        for (const td::MlpPolicy& p : policies) {
          if (p.input_dim() != spec.state_dim || p.output_dim() != spec.action_dim) {
            throw td::ConfigError("policy dimensions do not match environment " + args.env);
          }
        }
        td::EvalResult r;
        if (policies.size() == 1) {
          r = td::evaluate_policy(sys, policies.front(), args.episodes, seed);
        } else {
          r = td::evaluate_policy(sys, td::EnsembleMeanPolicy{&policies}, args.episodes, seed);
        }
        if (!args.dump.empty()) {
          td::SplitRng rng = td::SplitRng(seed).split("dump");
          const td::Vec start = td::sample_start(sys, rng);
          const td::Trajectory traj =
              policies.size() == 1
                  ? td::rollout(sys, policies.front(), start)
                  : td::rollout(sys, td::EnsembleMeanPolicy{&policies}, start);
          write_file(args.dump, td::trajectory_csv(traj));
        }
        return r;
      },
      env);
  std::cout << "eval median " << td::fmt17(result.median) << " stddev "
            << td::fmt17(result.stddev) << " over " << args.episodes << " episodes\n";
  if (!args.out.empty()) {
    td::JsonWriter w;
    w.begin_object();
    w.key("median").number(result.median);
    w.key("stddev").number(result.stddev);
    w.key("episodes").integer(args.episodes);
    w.key("seed").unsigned_integer(seed);
    w.end_object();
    write_file(args.out, w.str() + "\n");
  }
  return kOk;
}

struct SafetyArgs {
  std::string expert_tube;
  std::string imitator_tube;
  std::string out = "report.json";
};

int cmd_check_safety(const SafetyArgs& args) {
  if (args.expert_tube.empty() || args.imitator_tube.empty()) {
    throw td::ConfigError("check-safety needs --expert-tube and --imitator-tube");
  }
  const td::ReachTube expert = td::deserialize_tube(read_file(args.expert_tube));
  const td::ReachTube imitator = td::deserialize_tube(read_file(args.imitator_tube));
  const td::ContainmentReport report = td::tube_contained(imitator, expert);
  write_file(args.out, td::serialize_containment_report(report) + "\n");
  if (report.all_contained) {
    std::cout << "all slices contained; probability floor p = " << td::fmt17(report.probability_p)
              << '\n';
  } else {
    std::cout << "containment violated first at slice " << *report.first_violation << '\n';
  }
  std::cout << "report written to " << args.out << '\n';
  return kOk;
}

struct PlotTubeArgs {
  std::string tube;
  std::vector<int> dims = {0, 1};
  int every = 0;  // 0 = auto
  double beta_minus = -1.0;
  double beta_plus = -1.0;
  std::string out = "tube.svg";
};

int cmd_plot_tube(const PlotTubeArgs& args) {
  if (args.tube.empty()) throw td::ConfigError("missing --tube");
  if (args.dims.size() != 2) throw td::ConfigError("--dims needs exactly two indices, e.g. 0,1");
  const td::ReachTube tube = td::deserialize_tube(read_file(args.tube));
  const int every =
      args.every > 0 ? args.every
                     : std::max<int>(1, static_cast<int>(tube.slices.size()) / 40);
  const std::optional<double> lo =
      args.beta_minus >= 0.0 ? std::optional<double>(args.beta_minus) : std::nullopt;
  const std::optional<double> hi =
      args.beta_plus >= 0.0 ? std::optional<double>(args.beta_plus) : std::nullopt;
  write_file(args.out, td::plot_tube_svg(tube, args.dims[0], args.dims[1], every, lo, hi));
  std::cout << "plot written to " << args.out << '\n';
  return kOk;
}

struct PlotMetricsArgs {
  std::string metrics;
  std::string out = "metrics.svg";
};

int cmd_plot_metrics(const PlotMetricsArgs& args) {
  if (args.metrics.empty()) throw td::ConfigError("missing --metrics");
  const std::vector<td::MetricsRecord> series = td::parse_metrics_csv(read_file(args.metrics));
  write_file(args.out, td::plot_metrics_svg(series));
  std::cout << "plot written to " << args.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  int rc = kOk;
  try {
    // Phase 1: load --config (if any) into the run defaults so that every
    // command-line flag can still override it.
    RunFlags rf;
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
      else if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
    }
    if (!config_path.empty()) load_config(config_path, rf);

    CLI::App app{"reach-tube gated interactive imitation learning"};
    app.require_subcommand(1);

    // build-tube ------------------------------------------------------------
    BuildTubeArgs bt;
    CLI::App* build = app.add_subcommand("build-tube", "build a stochastic reach-tube");
    build->add_option("--env", bt.env, "environment id");
    build->add_option("--gamma", bt.cfg.gamma, "coverage failure probability");
    build->add_option("--mu", bt.cfg.mu, "tightness inflation (>= 1)");
    build->add_option("--radius", bt.cfg.initial_radius, "initial ball radius");
    build->add_option("--batch-size", bt.cfg.batch_size, "traces added per refinement batch");
    build->add_option("--max-batches", bt.cfg.max_batches, "refinement batch budget");
    build->add_option("--coverage-samples", bt.cfg.coverage_samples,
                      "Monte Carlo samples for the coverage check");
    build->add_flag("--include-actions", bt.cfg.include_actions,
                    "augment tube states with expert actions");
    CLI::Option* bt_seed = build->add_option("--seed", bt.seed, "master seed");
    build->add_option("--out", bt.out, "output tube JSON path");

    // train -------------------------------------------------------------------
    CLI::App* train = app.add_subcommand("train", "run a gated imitation learning experiment");
    std::string config_sink;  // --config is consumed in phase 1; this just accepts the flag
    const auto add_run_options = [&rf, &config_sink](CLI::App* sub) {
      sub->add_option("--config", config_sink, "config JSON (flags override it)");
      sub->add_option("--env", rf.env, "environment id");
      sub->add_option("--algorithm", rf.algorithm,
                      "tubedagger | lazydagger | ensembledagger | bc");
      sub->add_option("--episodes", rf.episodes, "training episodes");
      sub->add_option("--horizon", rf.horizon, "steps per episode (0 = environment default)");
      sub->add_option("--sigma2", rf.sigma2, "variance of executed expert action noise");
      sub->add_option("--beta-minus", rf.beta_minus, "tube gate release threshold");
      sub->add_option("--beta-plus", rf.beta_plus, "tube gate handover threshold");
      sub->add_option("--tau-low", rf.tau_low, "doubt/variance gate release threshold");
      sub->add_option("--tau-high", rf.tau_high, "doubt/variance gate handover threshold");
      sub->add_option("--tau-m", rf.tau_m, "doubt label distance (0 = environment default)");
      sub->add_option("--lr", rf.lr, "SGD learning rate");
      sub->add_option("--momentum", rf.momentum, "SGD momentum");
      sub->add_option("--epochs", rf.epochs, "SGD epochs per retraining");
      sub->add_option("--minibatch", rf.minibatch, "SGD minibatch size");
      sub->add_option("--eval-episodes", rf.eval_episodes, "episodes per evaluation");
      sub->add_option("--solved-threshold", rf.solved_threshold,
                      "solved reward threshold (default: environment)");
      sub->add_option("--init-demos", rf.init_demos, "expert demo episodes before training");
      sub->add_option("--n-demos", rf.n_demos, "demo episodes for bc");
      sub->add_option("--ensemble-size", rf.ensemble_size, "ensemble member count");
      sub->add_option("--hidden", rf.hidden, "hidden layer sizes")->delimiter(',');
      sub->add_option("--tube", rf.tube_path, "tube JSON (tubedagger only)");
      sub->add_option("--seeds", rf.seeds, "run seeds")->delimiter(',');
      sub->add_option("--out-dir", rf.out_dir, "output directory");
    };
    add_run_options(train);

    // sweep -------------------------------------------------------------------
    CLI::App* sweep = app.add_subcommand("sweep", "threshold grid x seeds study");
    add_run_options(sweep);
    std::string pairs_flag;
    sweep->add_option("--pairs", pairs_flag, "threshold grid, e.g. 0.5:0.8,0.7:0.9");
    sweep->add_option("--workers", rf.workers, "worker threads (0 = hardware)");

    // eval --------------------------------------------------------------------
    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate saved policy checkpoints");
    eval_cmd->add_option("--env", ev.env, "environment id");
    eval_cmd->add_option("--policy", ev.policy_paths,
                         "policy JSON path(s); several files evaluate the ensemble mean");
    eval_cmd->add_option("--episodes", ev.episodes, "evaluation episodes");
    CLI::Option* ev_seed = eval_cmd->add_option("--seed", ev.seed, "master seed");
    eval_cmd->add_option("--out", ev.out, "result JSON path");
    eval_cmd->add_option("--dump", ev.dump, "write one rollout as trajectory CSV");

    // check-safety --------------------------------------------------------------
    SafetyArgs sa;
    CLI::App* safety = app.add_subcommand("check-safety",
                                          "check imitator tube containment in an expert tube");
    safety->add_option("--expert-tube", sa.expert_tube, "expert tube JSON");
    safety->add_option("--imitator-tube", sa.imitator_tube, "imitator tube JSON");
    safety->add_option("--out", sa.out, "containment report JSON path");

    // plot-tube -----------------------------------------------------------------
    PlotTubeArgs pt;
    CLI::App* plot_tube = app.add_subcommand("plot-tube", "render tube slice projections");
    plot_tube->add_option("--tube", pt.tube, "tube JSON");
    plot_tube->add_option("--dims", pt.dims, "projection dims, e.g. 0,1")->delimiter(',');
    plot_tube->add_option("--every", pt.every, "subsample every k-th slice (0 = auto)");
    plot_tube->add_option("--beta-minus", pt.beta_minus, "overlay release boundary ellipses");
    plot_tube->add_option("--beta-plus", pt.beta_plus, "overlay handover boundary ellipses");
    plot_tube->add_option("--out", pt.out, "output SVG path");

    // plot-metrics ---------------------------------------------------------------
    PlotMetricsArgs pm;
    CLI::App* plot_metrics = app.add_subcommand("plot-metrics", "render a metrics CSV as SVG");
    plot_metrics->add_option("--metrics", pm.metrics, "metrics CSV path");
    plot_metrics->add_option("--out", pm.out, "output SVG path");

    build->callback([&] {
      bt.seed_given = bt_seed->count() > 0;
      rc = cmd_build_tube(bt);
    });
    train->callback([&] { rc = cmd_train(rf); });
    sweep->callback([&] {
      if (!pairs_flag.empty()) rf.pairs = parse_pairs(pairs_flag);
      for (const auto& [lo, hi] : rf.pairs) check_pair(lo, hi);
      rc = cmd_sweep(rf);
    });
    eval_cmd->callback([&] {
      ev.seed_given = ev_seed->count() > 0;
      rc = cmd_eval(ev);
    });
    safety->callback([&] { rc = cmd_check_safety(sa); });
    plot_tube->callback([&] { rc = cmd_plot_tube(pt); });
    plot_metrics->callback([&] { rc = cmd_plot_metrics(pm); });

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return kOk;
    } catch (const CLI::ParseError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kUsageError;
    }
    return rc;
  } catch (const td::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::AlignmentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::InsufficientSamples& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::InsufficientEnsemble& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const td::EmptyBatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
