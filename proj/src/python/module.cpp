#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "priorfuse/allocator.hpp"
#include "priorfuse/estimator.hpp"
#include "priorfuse/experiment.hpp"
#include "priorfuse/scheduler.hpp"
#include "priorfuse/simulator.hpp"
#include "priorfuse/verifier.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace priorfuse;

namespace {

std::vector<Reward> to_rewards(const std::vector<int>& values) {
  std::vector<Reward> out;
  out.reserve(values.size());
  for (int v : values) out.emplace_back(v);
  return out;
}

PriorScenario make_prior(const std::string& kind, double param) {
  if (kind == "exact") return scenario::Exact{};
  if (kind == "fixed_bias") return scenario::FixedBias{param};
  if (kind == "hallucinated") return scenario::Hallucinated{param};
  if (kind == "noisy_unbiased") return scenario::NoisyUnbiased{param};
  throw std::invalid_argument("unknown prior kind '" + kind + "'");
}

py::list simulate_batch(const std::vector<double>& p_values, const std::string& prior_kind, double prior_param,
                        std::uint64_t seed, const SchedulerConfig& config) {
  std::vector<PromptSpec> prompts;
  for (std::size_t i = 0; i < p_values.size(); ++i) prompts.emplace_back(i, p_values[i]);
  SimulatedEnv env(seed);
  ScenarioPrior prior(make_prior(prior_kind, prior_param), seed);
  const auto result = run_batch(prompts, env, prior, config);
  py::list out;
  for (const auto& o : result.outcomes) {
    out.append(py::dict("prompt_id"_a = o.prompt_id, "k"_a = o.k, "v_bar"_a = o.v_bar,
                        "prior_value"_a = o.prior_value, "mu_star"_a = o.fusion.mu_star,
                        "sigma_star"_a = o.fusion.sigma_star, "w_hat"_a = o.fusion.w_hat,
                        "advantages"_a = o.advantages, "force_stopped"_a = o.force_stopped));
  }
  return out;
}

py::dict run_config(const std::string& text, const std::string& output) {
  auto config = parse_config(text);
  if (!output.empty()) config.output = output;
  const auto outcome = run_experiment(config);
  py::list checks;
  for (const auto& c : outcome.checks) {
    checks.append(py::dict("id"_a = c.id, "name"_a = c.name, "pass"_a = c.pass, "detail"_a = c.detail));
  }
  std::vector<std::string> files;
  for (const auto& f : outcome.files) files.push_back(f.string());
  return py::dict("exit_code"_a = outcome.exit_code(), "checks"_a = checks, "files"_a = files);
}

}  // namespace

PYBIND11_MODULE(_priorfuse, m) {
  m.doc() = "Prior-fused baselines and adaptive rollout allocation";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<FusionResult>(m, "FusionResult")
      .def(py::init<>())
      .def_readwrite("sigma2_hat", &FusionResult::sigma2_hat)
      .def_readwrite("delta2_hat", &FusionResult::delta2_hat)
      .def_readwrite("w_hat", &FusionResult::w_hat)
      .def_readwrite("mu_star", &FusionResult::mu_star)
      .def_readwrite("sigma_star", &FusionResult::sigma_star)
      .def("__repr__", [](const FusionResult& f) {
        return "FusionResult(w_hat=" + std::to_string(f.w_hat) + ", mu_star=" + std::to_string(f.mu_star) + ")";
      });

  py::enum_<Action>(m, "Action").value("Stop", Action::Stop).value("RolloutMore", Action::RolloutMore);

  py::class_<AllocatorConfig>(m, "AllocatorConfig")
      .def(py::init<>())
      .def_readwrite("c", &AllocatorConfig::c)
      .def_readwrite("k_min", &AllocatorConfig::k_min)
      .def_readwrite("k_init", &AllocatorConfig::k_init)
      .def_readwrite("increment", &AllocatorConfig::increment)
      .def_readwrite("budget_cap", &AllocatorConfig::budget_cap)
      .def("validate", &AllocatorConfig::validate);

  py::class_<SchedulerConfig>(m, "SchedulerConfig")
      .def(py::init<>())
      .def_readwrite("allocator", &SchedulerConfig::allocator)
      .def_readwrite("halt_fraction", &SchedulerConfig::halt_fraction)
      .def_readwrite("pad_multiple", &SchedulerConfig::pad_multiple)
      .def_readwrite("discard_padding", &SchedulerConfig::discard_padding);

  py::class_<AllocationDecision>(m, "AllocationDecision")
      .def_readonly("action", &AllocationDecision::action)
      .def_readonly("n", &AllocationDecision::n)
      .def_readonly("k_target", &AllocationDecision::k_target)
      .def_readonly("delta2_hat", &AllocationDecision::delta2_hat);

  py::class_<EstimatorMoments>(m, "EstimatorMoments")
      .def_readonly("mean", &EstimatorMoments::mean)
      .def_readonly("bias", &EstimatorMoments::bias)
      .def_readonly("mse", &EstimatorMoments::mse);

  py::class_<OracleStop>(m, "OracleStop")
      .def_readonly("x_star", &OracleStop::x_star)
      .def_readonly("k_oracle", &OracleStop::k_oracle)
      .def_readonly("risk", &OracleStop::risk);

  m.def("empirical_mean", [](const std::vector<int>& r) { return empirical_mean(to_rewards(r)); }, "rewards"_a);
  m.def("noise_variance_bound", &noise_variance_bound, "k"_a);
  m.def("empirical_bias", &empirical_bias, "v_bar"_a, "prior_value"_a, "k"_a);
  m.def("shrinkage_weight", &shrinkage_weight, "delta2_hat"_a, "sigma2_hat"_a);
  m.def("fuse_baseline", &fuse_baseline, "v_bar"_a, "prior_value"_a, "w_hat"_a);
  m.def("fused_std", &fused_std, "mu_star"_a, "floor"_a = kStdFloor);
  m.def("fuse", py::overload_cast<double, std::size_t, double>(&fuse), "v_bar"_a, "k"_a, "prior_value"_a);
  m.def(
      "advantages",
      [](const std::vector<int>& r, const FusionResult& f) {
        const auto rewards = to_rewards(r);
        return advantages(std::span<const Reward>(rewards), f);
      },
      "rewards"_a, "fusion"_a);
  m.def("theoretical_mse", &theoretical_mse, "w"_a, "sigma2"_a, "delta2"_a);
  m.def("optimal_weight", &optimal_weight, "sigma2"_a, "delta2"_a);

  m.def("empirical_mse", &empirical_mse, "k"_a, "delta2_hat"_a);
  m.def("risk", &risk, "k"_a, "delta2_hat"_a, "c"_a);
  m.def("marginal_return_lower_bound", &marginal_return_lower_bound, "k"_a, "delta2_hat"_a);
  m.def("target_budget", &target_budget, "delta2_hat"_a, "c"_a);
  m.def("should_stop", &should_stop, "k"_a, "delta2_hat"_a, "config"_a = AllocatorConfig{});
  m.def("decide", py::overload_cast<std::size_t, std::size_t, double, const AllocatorConfig&>(&decide), "k"_a,
        "successes"_a, "prior_value"_a, "config"_a = AllocatorConfig{});

  m.def("enumerate_estimator_moments", &enumerate_estimator_moments, "p_true"_a, "prior_value"_a, "k"_a);
  m.def("false_rejection_exact", &false_rejection_exact, "p_true"_a, "k"_a);
  m.def("oracle_stop", &oracle_stop, "delta2_true"_a, "c"_a, "k_min"_a = 4);

  m.def("simulate_batch", &simulate_batch, "p_values"_a, "prior"_a = "exact", "prior_param"_a = 0.0, "seed"_a = 0,
        "config"_a = SchedulerConfig{},
        "Runs one scheduled batch on simulated prompts and returns per-prompt outcomes.");
  m.def("run_config", &run_config, "text"_a, "output"_a = "",
        "Parses a YAML or JSON config, runs it and returns the check results.");
}
