#include "priorfuse/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace priorfuse {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kAllocateTag = 0x616c6c6f63ULL;  // "alloc"

// ---- config parsing -----------------------------------------------------

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

void require_map(const YAML::Node& n, const std::string& path) {
  if (!n.IsMap()) throw ConfigError(fmt::format("'{}' must be a mapping", path.empty() ? "<root>" : path));
}

void check_keys(const YAML::Node& n, const std::string& path, std::initializer_list<std::string_view> allowed) {
  require_map(n, path);
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown key '{}'", join_path(path, key)));
    }
  }
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else return "a non-negative integer";
}

template <class T>
T as(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) throw ConfigError(fmt::format("'{}' must be {}", path, type_name<T>()));
  try {
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      const auto raw = n.Scalar();
      if (!raw.empty() && raw.front() == '-') throw YAML::BadConversion(n.Mark());
    }
    return n.as<T>();
  } catch (const YAML::BadConversion&) {
    throw ConfigError(fmt::format("'{}' must be {}", path, type_name<T>()));
  }
}

template <class T>
void read(const YAML::Node& parent, const char* key, const std::string& path, T& out) {
  const YAML::Node n = parent[key];
  if (n) out = as<T>(n, join_path(path, key));
}

std::vector<double> read_numbers(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) throw ConfigError(fmt::format("'{}' must be a list of numbers", path));
  std::vector<double> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(as<double>(n[i], fmt::format("{}[{}]", path, i)));
  return out;
}

PriorScenario parse_prior(const YAML::Node& n, const std::string& path) {
  std::string kind;
  if (n.IsScalar()) {
    kind = n.as<std::string>();
  } else {
    check_keys(n, path, {"kind", "delta", "value", "sd"});
    if (!n["kind"]) throw ConfigError(fmt::format("'{}' is required", join_path(path, "kind")));
    kind = as<std::string>(n["kind"], join_path(path, "kind"));
  }
  auto number = [&](const char* key) {
    if (!n.IsMap() || !n[key]) throw ConfigError(fmt::format("'{}' is required", join_path(path, key)));
    return as<double>(n[key], join_path(path, key));
  };
  if (kind == "exact") return scenario::Exact{};
  if (kind == "fixed_bias") return scenario::FixedBias{number("delta")};
  if (kind == "hallucinated") {
    const double v = number("value");
    if (!(v >= -1.0 && v <= 1.0)) throw ConfigError(fmt::format("'{}' must lie in [-1, 1]", join_path(path, "value")));
    return scenario::Hallucinated{v};
  }
  if (kind == "noisy_unbiased") {
    const double sd = number("sd");
    if (!(sd >= 0.0)) throw ConfigError(fmt::format("'{}' must be >= 0", join_path(path, "sd")));
    return scenario::NoisyUnbiased{sd};
  }
  throw ConfigError(fmt::format("'{}' must be one of exact, fixed_bias, hallucinated, noisy_unbiased",
                                n.IsScalar() ? path : join_path(path, "kind")));
}

ScenarioSpec parse_scenario(const YAML::Node& n, const std::string& path) {
  check_keys(n, path, {"p_true", "p_values", "p_range", "count", "prior"});
  ScenarioSpec s;
  std::size_t count = 1;
  read(n, "count", path, count);
  if (count < 1) throw ConfigError(fmt::format("'{}' must be >= 1", join_path(path, "count")));
  const int sources = (n["p_true"] ? 1 : 0) + (n["p_values"] ? 1 : 0) + (n["p_range"] ? 1 : 0);
  if (sources != 1) {
    throw ConfigError(fmt::format("'{}' needs exactly one of p_true, p_values, p_range", path));
  }
  if (n["p_true"]) {
    s.p_values.assign(count, as<double>(n["p_true"], join_path(path, "p_true")));
  } else if (n["p_values"]) {
    s.p_values = read_numbers(n["p_values"], join_path(path, "p_values"));
  } else {
    const auto range = read_numbers(n["p_range"], join_path(path, "p_range"));
    if (range.size() != 2 || range[0] > range[1]) {
      throw ConfigError(fmt::format("'{}' must be [low, high] with low <= high", join_path(path, "p_range")));
    }
    for (std::size_t i = 0; i < count; ++i) {
      s.p_values.push_back(count == 1 ? range[0]
                                      : range[0] + (range[1] - range[0]) * static_cast<double>(i) /
                                                       static_cast<double>(count - 1));
    }
  }
  for (double p : s.p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("'{}' probabilities must lie in [0, 1]", path));
  }
  if (n["prior"]) s.prior = parse_prior(n["prior"], join_path(path, "prior"));
  return s;
}

void parse_allocator(const YAML::Node& n, AllocatorConfig& a) {
  check_keys(n, "allocator", {"c", "k_min", "k_init", "increment", "budget_cap"});
  read(n, "c", "allocator", a.c);
  read(n, "k_min", "allocator", a.k_min);
  read(n, "k_init", "allocator", a.k_init);
  read(n, "increment", "allocator", a.increment);
  if (n["budget_cap"] && n["budget_cap"].IsScalar() && n["budget_cap"].Scalar() == "none") {
    a.budget_cap = kNoBudgetCap;
  } else {
    read(n, "budget_cap", "allocator", a.budget_cap);
  }
}

void parse_scheduler(const YAML::Node& n, SchedulerConfig& s) {
  check_keys(n, "scheduler",
             {"halt_fraction", "pad_multiple", "support_capacity", "support_sample", "discard_padding"});
  read(n, "halt_fraction", "scheduler", s.halt_fraction);
  read(n, "pad_multiple", "scheduler", s.pad_multiple);
  read(n, "support_capacity", "scheduler", s.support_capacity);
  read(n, "support_sample", "scheduler", s.support_sample);
  read(n, "discard_padding", "scheduler", s.discard_padding);
}

void parse_verify(const YAML::Node& n, ExperimentConfig& c) {
  const std::string p = "verify";
  check_keys(n, p,
             {"checks", "mse_configs", "mse_trials", "weight_draws", "exact_batches", "random_batches",
              "regret_costs", "regret_episodes", "gradient_trials", "false_rejection_trials", "fd_states"});
  auto& b = c.budget;
  read(n, "mse_configs", p, b.mse_configs);
  read(n, "mse_trials", p, b.mse_trials);
  read(n, "weight_draws", p, b.weight_draws);
  read(n, "exact_batches", p, b.exact_batches);
  read(n, "random_batches", p, b.random_batches);
  read(n, "regret_episodes", p, b.regret_episodes);
  read(n, "gradient_trials", p, b.gradient_trials);
  read(n, "false_rejection_trials", p, b.false_rejection_trials);
  read(n, "fd_states", p, b.fd_states);
  if (n["regret_costs"]) b.regret_costs = read_numbers(n["regret_costs"], "verify.regret_costs");
  if (n["checks"]) {
    const auto& list = n["checks"];
    if (!list.IsSequence()) throw ConfigError("'verify.checks' must be a list of check ids");
    c.checks.clear();
    for (std::size_t i = 0; i < list.size(); ++i) {
      c.checks.push_back(as<std::string>(list[i], fmt::format("verify.checks[{}]", i)));
    }
  }
}

void parse_trainer(const YAML::Node& n, ExperimentConfig& c) {
  const std::string p = "trainer";
  check_keys(n, p,
             {"learning_rate", "clip_eps", "steps", "num_prompts", "p_range", "kl_coef", "prior", "divergence_limit",
              "rollouts_per_step", "grpo_group_size", "fixed_group_size", "methods", "seeds"});
  auto& t = c.trainer;
  read(n, "learning_rate", p, t.learning_rate);
  read(n, "clip_eps", p, t.clip_eps);
  read(n, "steps", p, t.steps);
  read(n, "num_prompts", p, t.num_prompts);
  read(n, "kl_coef", p, t.kl_coef);
  read(n, "divergence_limit", p, t.divergence_limit);
  read(n, "rollouts_per_step", p, c.rollouts_per_step);
  read(n, "grpo_group_size", p, c.grpo_group_size);
  read(n, "fixed_group_size", p, c.fixed_group_size);
  read(n, "seeds", p, c.seeds);
  if (n["p_range"]) {
    const auto r = read_numbers(n["p_range"], "trainer.p_range");
    if (r.size() != 2) throw ConfigError("'trainer.p_range' must be [low, high]");
    t.p_low = r[0];
    t.p_high = r[1];
  }
  if (n["prior"]) t.prior = parse_prior(n["prior"], "trainer.prior");
  if (n["methods"]) {
    const auto& list = n["methods"];
    if (!list.IsSequence()) throw ConfigError("'trainer.methods' must be a list");
    c.methods.clear();
    for (std::size_t i = 0; i < list.size(); ++i) {
      c.methods.push_back(as<std::string>(list[i], fmt::format("trainer.methods[{}]", i)));
    }
  }
}

// ---- output staging -----------------------------------------------------

using Artifacts = std::vector<std::pair<std::string, std::string>>;  // relative path, content

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

void publish(const fs::path& output, const Artifacts& files) {
  fs::create_directories(output);
  const fs::path staging = output / ".staging";
  fs::remove_all(staging);
  try {
    for (const auto& [rel, content] : files) write_file(staging / rel, content);
    for (const auto& [rel, content] : files) {
      fs::create_directories((output / rel).parent_path());
      fs::rename(staging / rel, output / rel);
    }
    fs::remove_all(staging);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    for (const auto& f : files) fs::remove(output / f.first, ec);
    throw;
  }
}

std::string timestamp_line() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("# generated {:%Y-%m-%dT%H:%M:%SZ}\n", fmt::gmtime(now));
}

std::string summary_text(const ExperimentConfig& c, const std::vector<CheckResult>& checks,
                         const std::vector<std::string>& notes) {
  std::string out = timestamp_line();
  out += fmt::format("mode: {}\nseed: {}\n", to_string(c.mode), *c.seed);
  for (const auto& n : notes) out += n + "\n";
  out += "\n" + render_table(checks);
  return out;
}

std::string reports_json(const ExperimentConfig& c, const std::vector<CheckResult>& checks,
                         nlohmann::ordered_json extra = nullptr) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.mode);
  j["seed"] = *c.seed;
  auto& arr = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : checks) arr.push_back(r.to_json());
  if (!extra.is_null()) j["results"] = std::move(extra);
  return j.dump(2) + "\n";
}

// ---- modes --------------------------------------------------------------

class TablePrior final : public PriorOracle {
 public:
  TablePrior(std::vector<PriorScenario> scenarios, std::uint64_t seed)
      : scenarios_(std::move(scenarios)), seed_(seed) {}

  PriorEstimate predict(const PromptSpec& spec, std::span<const SupportEntry>) override {
    Engine rng = make_engine({seed_, spec.id});
    return prior_predict(spec, scenarios_.at(spec.id), rng);
  }

 private:
  std::vector<PriorScenario> scenarios_;
  std::uint64_t seed_;
};

RunOutcome run_allocate(const ExperimentConfig& c, Artifacts& files, std::vector<std::string>& notes) {
  const std::uint64_t seed = *c.seed;
  const auto& sched = c.scheduler;
  std::vector<PromptSpec> specs;
  std::vector<PriorScenario> priors;
  for (const auto& s : c.scenarios) {
    for (double p : s.p_values) {
      specs.emplace_back(specs.size(), p);
      priors.push_back(s.prior);
    }
  }

  SupportBuffer support(sched.support_capacity);
  std::string rounds;
  std::string csv = "batch,prompt_id,p_true,prior,prior_value,k,v_bar,delta2_hat,w_hat,mu_star,sigma_star,force_stopped\n";
  std::size_t accounting_errors = 0;
  std::size_t exact_prompts = 0;
  std::size_t exact_off_prior = 0;
  std::size_t exact_not_k4 = 0;
  std::size_t total_k = 0;
  std::size_t total_dispatched = 0;
  std::size_t prompts_seen = 0;
  const std::size_t cap = sched.allocator.budget_cap;

  for (std::size_t b = 0; b < c.batches; ++b) {
    SimulatedEnv env(seed, derive_key({kAllocateTag, b}));
    TablePrior prior(priors, derive_key({seed, kAllocateTag, b}));
    const auto result = run_batch(specs, env, prior, sched, &support, derive_key({seed, kAllocateTag, b, 1}));
    for (const auto& ev : result.state.log) {
      auto j = ev.to_json();
      nlohmann::ordered_json line;
      line["batch"] = b;
      for (auto it = j.begin(); it != j.end(); ++it) line[it.key()] = it.value();
      rounds += line.dump() + "\n";
      std::size_t assigned = 0;
      for (const auto& p : ev.prompts) assigned += p.assigned;
      if (ev.round > 0 && ev.dispatched % sched.pad_multiple != 0) ++accounting_errors;
      if (assigned + ev.discarded != ev.dispatched) ++accounting_errors;
    }
    for (std::size_t i = 0; i < result.outcomes.size(); ++i) {
      const auto& o = result.outcomes[i];
      const auto& ps = result.state.prompts[i];
      ++prompts_seen;
      total_k += o.k;
      if (o.k < sched.allocator.k_init || (cap != kNoBudgetCap && o.k > cap)) ++accounting_errors;
      if (!(ps.prior_tick < ps.first_rollout_tick)) ++accounting_errors;
      if (std::holds_alternative<scenario::Exact>(priors[i])) {
        ++exact_prompts;
        if (o.k != sched.allocator.k_init) ++exact_not_k4;
        if (o.fusion.delta2_hat == 0.0 && o.fusion.mu_star != o.prior_value) ++exact_off_prior;
      }
      csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", b, o.prompt_id, specs[i].p_true,
                         describe(priors[i]), o.prior_value, o.k, o.v_bar, o.fusion.delta2_hat, o.fusion.w_hat,
                         o.fusion.mu_star, o.fusion.sigma_star, o.force_stopped ? 1 : 0);
    }
    total_dispatched += result.state.dispatched_total();
  }

  RunOutcome out;
  CheckResult a1("A1", "budget accounting");
  a1.pass = accounting_errors == 0;
  a1.detail = fmt::format("{} batches x {} prompts, {} accounting violations", c.batches, specs.size(),
                          accounting_errors);
  out.checks.push_back(a1);
  if (exact_prompts > 0) {
    CheckResult a2("A2", "exact-prior acceptance");
    a2.pass = exact_off_prior == 0;
    a2.detail = fmt::format("{} exact-prior prompts: {} stopped at k_init, {} accepted with mu* != V", exact_prompts,
                            exact_prompts - exact_not_k4, exact_off_prior);
    out.checks.push_back(a2);
  }
  const double mean_k = static_cast<double>(total_k) / static_cast<double>(prompts_seen);
  const double mean_dispatched = static_cast<double>(total_dispatched) / static_cast<double>(prompts_seen);
  notes.push_back(fmt::format("mean rollouts/prompt: {:.4f}", mean_k));
  notes.push_back(fmt::format("mean dispatched/prompt (with padding): {:.4f}", mean_dispatched));
  nlohmann::ordered_json extra;
  extra["prompts"] = prompts_seen;
  extra["mean_rollouts_per_prompt"] = mean_k;
  extra["mean_dispatched_per_prompt"] = mean_dispatched;
  files.emplace_back("rounds.jsonl", rounds);
  files.emplace_back("allocations.csv", csv);
  files.emplace_back("reports.json", reports_json(c, out.checks, extra));
  return out;
}

RunOutcome run_verify(const ExperimentConfig& c, Artifacts& files) {
  const std::uint64_t seed = *c.seed;
  const std::size_t jobs = c.jobs;
  const auto& b = c.budget;
  const std::map<std::string, std::function<CheckResult()>> table{
      {"C1", [&] { return check_mse_decomposition(b, seed, jobs); }},
      {"C2", [&] { return check_optimal_weight(b, seed); }},
      {"C3", [&] { return check_bias_bound(); }},
      {"C4", [&] { return check_bias_decay(); }},
      {"C5", [&] { return check_marginal_return(); }},
      {"C6", [&] { return check_stopping_constants(b, seed); }},
      {"C7", [&] { return check_group_size_examples(); }},
      {"C8", [&] { return check_regret(b, seed, jobs); }},
      {"C9", [&] { return check_gradient_variance(b, seed, jobs); }},
      {"C11", [&] { return check_surrogate_gradient(b, seed); }},
      {"P1", [&] { return check_false_rejection(b, seed); }},
  };
  RunOutcome out;
  const auto& ids = c.checks.empty() ? verify_check_ids() : c.checks;
  for (const auto& id : ids) out.checks.push_back(table.at(id)());

  nlohmann::ordered_json regret;
  for (const auto& r : out.checks) {
    if (r.id == "C8") regret = r.data;
  }
  if (!regret.is_null()) {
    std::string csv = "scenario,c,delta2,x_star,k_oracle,oracle_risk,mean_risk,regret,std_error,regret_over_c,k_mode,k_mean\n";
    for (const auto& s : regret["scenarios"]) {
      for (const auto& p : s["points"]) {
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", p["scenario"].get<std::string>(),
                           p["c"].get<double>(), p["delta2"].get<double>(),
                           p["x_star"].is_null() ? std::string("-inf") : fmt::format("{}", p["x_star"].get<double>()),
                           p["k_oracle"].get<std::size_t>(), p["oracle_risk"].get<double>(),
                           p["mean_risk"].get<double>(), p["regret"].get<double>(), p["std_error"].get<double>(),
                           p["regret_over_c"].get<double>(), p["k_mode"].get<std::size_t>(),
                           p["k_mean"].get<double>());
      }
    }
    files.emplace_back("regret.csv", csv);
  }
  files.emplace_back("reports.json", reports_json(c, out.checks));
  return out;
}

std::vector<TrainingTrace> run_method(const ExperimentConfig& c, const std::string& method, Artifacts& files) {
  TrainerConfig cfg = c.trainer_for(method);
  cfg.seed = *c.seed;
  auto traces = train_seeds(cfg, c.seeds, c.jobs);
  for (const auto& t : traces) files.emplace_back(fmt::format("traces/{}_seed{}.csv", method, t.seed), t.to_csv());
  return traces;
}

RunOutcome run_train(const ExperimentConfig& c, Artifacts& files, std::vector<std::string>& notes) {
  RunOutcome out;
  nlohmann::ordered_json extra = nlohmann::ordered_json::array();
  std::size_t diverged = 0;
  for (const auto& m : c.methods) {
    const auto traces = run_method(c, m, files);
    double final_entropy = 0.0;
    double final_reward = 0.0;
    for (const auto& t : traces) {
      diverged += t.diverged;
      if (!t.steps.empty()) {
        final_entropy += t.steps.back().entropy;
        final_reward += t.steps.back().mean_reward;
      }
    }
    final_entropy /= static_cast<double>(traces.size());
    final_reward /= static_cast<double>(traces.size());
    nlohmann::ordered_json j;
    j["method"] = m;
    j["seeds"] = traces.size();
    j["final_entropy"] = final_entropy;
    j["final_mean_reward"] = final_reward;
    extra.push_back(std::move(j));
    notes.push_back(fmt::format("{}: final entropy {:.5f}, final mean reward {:.5f}", m, final_entropy, final_reward));
  }
  CheckResult t1("T1", "training stability");
  t1.pass = diverged == 0;
  t1.detail = fmt::format("{} diverged runs", diverged);
  out.checks.push_back(t1);
  files.emplace_back("reports.json", reports_json(c, out.checks, extra));
  return out;
}

RunOutcome run_sweep(const ExperimentConfig& c, Artifacts& files) {
  const auto grpo = run_method(c, "grpo", files);
  const auto v05 = run_method(c, "v05", files);
  require_compute_parity(c.trainer_for("grpo"), c.trainer_for("v05"));
  const auto cmp = compare(grpo, v05);
  RunOutcome out;
  CheckResult r("C10", "training dynamics at compute parity");
  r.pass = cmp.variance_claim && cmp.entropy_claim;
  r.detail = fmt::format(
      "{} seeds x {} steps: v05 EMA grad-var lower at {:.1f}% of steps (need >= 80%); final entropy v05 {:.5f} vs "
      "grpo {:.5f}{}",
      cmp.seeds, cmp.steps, 100.0 * cmp.fraction_candidate_lower_var, cmp.final_entropy_candidate,
      cmp.final_entropy_baseline, cmp.any_diverged ? "; divergence" : "");
  r.data["fraction_lower_var"] = cmp.fraction_candidate_lower_var;
  r.data["final_entropy_grpo"] = cmp.final_entropy_baseline;
  r.data["final_entropy_v05"] = cmp.final_entropy_candidate;
  r.data["diverged"] = cmp.any_diverged;
  out.checks.push_back(r);
  files.emplace_back("comparison.csv", cmp.to_csv());
  files.emplace_back("reports.json", reports_json(c, out.checks));
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Verify: return "verify";
    case Mode::Allocate: return "allocate";
    case Mode::Train: return "train";
    case Mode::Sweep: return "sweep";
  }
  return "unknown";
}

Mode parse_mode(std::string_view s) {
  if (s == "verify") return Mode::Verify;
  if (s == "allocate") return Mode::Allocate;
  if (s == "train") return Mode::Train;
  if (s == "sweep") return Mode::Sweep;
  throw ConfigError(fmt::format("'mode' must be one of verify, allocate, train, sweep (got '{}')", s));
}

const std::vector<std::string>& verify_check_ids() {
  static const std::vector<std::string> ids{"C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C11", "P1"};
  return ids;
}

void ExperimentConfig::validate() const {
  if (!seed) throw ConfigError("seed required for reproducibility");
  if (jobs < 1) throw ConfigError("'jobs' must be >= 1");
  if (output.empty()) throw ConfigError("'output' must not be empty");
  try {
    scheduler.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  switch (mode) {
    case Mode::Allocate: {
      if (scenarios.empty()) throw ConfigError("'allocate.scenarios' must list at least one scenario");
      if (batches < 1) throw ConfigError("'allocate.batches' must be >= 1");
      break;
    }
    case Mode::Verify: {
      const auto& known = verify_check_ids();
      for (const auto& id : checks) {
        if (std::find(known.begin(), known.end(), id) == known.end()) {
          throw ConfigError(fmt::format("'verify.checks' contains unknown check '{}'", id));
        }
      }
      if (budget.mse_trials < 100000) throw ConfigError("'verify.mse_trials' must be >= 100000");
      if (budget.regret_costs.size() < 2 || budget.regret_costs.size() > 9) {
        throw ConfigError("'verify.regret_costs' must list between 2 and 9 costs");
      }
      for (double cost : budget.regret_costs) {
        if (!(cost > 0.0)) throw ConfigError("'verify.regret_costs' entries must be > 0");
      }
      if (budget.regret_episodes < 1) throw ConfigError("'verify.regret_episodes' must be >= 1");
      if (budget.gradient_trials < 2) throw ConfigError("'verify.gradient_trials' must be >= 2");
      if (budget.false_rejection_trials < 1) throw ConfigError("'verify.false_rejection_trials' must be >= 1");
      break;
    }
    case Mode::Train:
    case Mode::Sweep: {
      if (seeds < 1) throw ConfigError("'trainer.seeds' must be >= 1");
      if (methods.empty()) throw ConfigError("'trainer.methods' must not be empty");
      const auto list = mode == Mode::Sweep ? std::vector<std::string>{"grpo", "v05"} : methods;
      for (const auto& m : list) {
        const TrainerConfig t = trainer_for(m);
        try {
          t.validate();
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
      break;
    }
  }
}

TrainerConfig ExperimentConfig::trainer_for(std::string_view method) const {
  TrainerConfig t = trainer;
  std::size_t group = 0;
  if (method == "grpo") {
    t.method = method::Grpo{grpo_group_size};
    group = grpo_group_size;
  } else if (method == "v05") {
    t.method = method::V05{scheduler};
    group = scheduler.allocator.k_init;
  } else if (method == "oracle") {
    t.method = method::Oracle{fixed_group_size};
    group = fixed_group_size;
  } else if (method == "prior_only") {
    t.method = method::PriorOnly{fixed_group_size};
    group = fixed_group_size;
  } else {
    throw ConfigError(fmt::format("'trainer.methods' contains unknown method '{}'", method));
  }
  if (group == 0 || rollouts_per_step % group != 0) {
    throw ConfigError(fmt::format("'trainer.rollouts_per_step' ({}) must be a multiple of the {} group size ({})",
                                  rollouts_per_step, method, group));
  }
  t.batch_size = rollouts_per_step / group;
  if (t.batch_size > t.num_prompts) {
    throw ConfigError(fmt::format("'trainer.num_prompts' ({}) is smaller than the {} batch size ({})", t.num_prompts,
                                  method, t.batch_size));
  }
  return t;
}

ExperimentConfig parse_config(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("config is not valid YAML/JSON: {}", e.what()));
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  check_keys(root, "",
             {"mode", "seed", "output", "jobs", "allocator", "scheduler", "allocate", "verify", "trainer"});
  if (root["mode"]) c.mode = parse_mode(as<std::string>(root["mode"], "mode"));
  if (root["seed"]) c.seed = as<std::uint64_t>(root["seed"], "seed");
  if (root["output"]) c.output = as<std::string>(root["output"], "output");
  read(root, "jobs", "", c.jobs);
  if (root["scheduler"]) parse_scheduler(root["scheduler"], c.scheduler);
  if (root["allocator"]) parse_allocator(root["allocator"], c.scheduler.allocator);
  if (const auto a = root["allocate"]) {
    check_keys(a, "allocate", {"batches", "scenarios"});
    read(a, "batches", "allocate", c.batches);
    if (a["scenarios"]) {
      if (!a["scenarios"].IsSequence()) throw ConfigError("'allocate.scenarios' must be a list");
      for (std::size_t i = 0; i < a["scenarios"].size(); ++i) {
        c.scenarios.push_back(parse_scenario(a["scenarios"][i], fmt::format("allocate.scenarios[{}]", i)));
      }
    }
  }
  if (root["verify"]) parse_verify(root["verify"], c);
  if (root["trainer"]) parse_trainer(root["trainer"], c);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

bool RunOutcome::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& r) { return r.pass; });
}

RunOutcome run_experiment(const ExperimentConfig& config) {
  config.validate();
  Artifacts files;
  std::vector<std::string> notes;
  RunOutcome out;
  switch (config.mode) {
    case Mode::Verify: out = run_verify(config, files); break;
    case Mode::Allocate: out = run_allocate(config, files, notes); break;
    case Mode::Train: out = run_train(config, files, notes); break;
    case Mode::Sweep: out = run_sweep(config, files); break;
  }
  files.emplace_back("summary.txt", summary_text(config, out.checks, notes));
  publish(config.output, files);
  for (const auto& f : files) out.files.emplace_back(f.first);
  return out;
}

std::string render_table(const std::vector<CheckResult>& checks) {
  std::size_t name_width = 5;
  for (const auto& r : checks) name_width = std::max(name_width, r.name.size());
  std::string out = fmt::format("{:<5} {:<6} {:<{}} {}\n", "ID", "RESULT", "CHECK", name_width, "DETAIL");
  std::size_t passed = 0;
  for (const auto& r : checks) {
    passed += r.pass;
    out += fmt::format("{:<5} {:<6} {:<{}} {}\n", r.id, r.pass ? "PASS" : "FAIL", r.name, name_width, r.detail);
  }
  out += fmt::format("overall: {} ({}/{} checks passed)\n", passed == checks.size() ? "PASS" : "FAIL", passed,
                     checks.size());
  return out;
}

CheckResult check_determinism(ExperimentConfig config, const fs::path& scratch) {
  CheckResult res("C12", "byte-identical reruns");
  const fs::path a = scratch / "run_a";
  const fs::path b = scratch / "run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  config.output = a;
  const auto first = run_experiment(config);
  config.output = b;
  const auto second = run_experiment(config);

  std::size_t compared = 0;
  std::vector<std::string> mismatched;
  std::set<fs::path> names(first.files.begin(), first.files.end());
  names.insert(second.files.begin(), second.files.end());
  for (const auto& rel : names) {
    std::string x = fs::exists(a / rel) ? read_text(a / rel) : std::string("<missing>");
    std::string y = fs::exists(b / rel) ? read_text(b / rel) : std::string("<missing>");
    if (rel == "summary.txt") {
      x = x.substr(std::min(x.size(), x.find('\n') + 1));
      y = y.substr(std::min(y.size(), y.find('\n') + 1));
    }
    ++compared;
    if (x != y) mismatched.push_back(rel.string());
  }
  res.pass = mismatched.empty() && compared > 0;
  res.detail = fmt::format("mode {}: {} files compared, {} differ", to_string(config.mode), compared, mismatched.size());
  res.data["files"] = compared;
  res.data["mismatched"] = mismatched;
  return res;
}

}  // namespace priorfuse
