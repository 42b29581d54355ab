#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmon/harness/export.hpp"
#include "cmon/harness/scenario.hpp"
#include "cmon/harness/simulation.hpp"

using namespace cmon;
namespace fs = std::filesystem;

namespace {

const char* kSmallPendulum = R"({
  "model": "pendulum",
  "horizon": 10,
  "sampling_time": 0.05,
  "duration": 0.5,
  "reference": [{"start": 0, "value": [0, 0]}, {"start": 0.3, "value": [0.4, 0.1]}],
  "bounds": {"state": [{"index": 0, "lower": -1, "upper": 1}], "control": [{"index": 0, "lower": -20, "upper": 20}]},
  "weights": {"Q": [10, 10, 0.1, 0.1], "R": [0.01]},
  "scheme": {"kind": "cmon-rti", "c1": 0.1, "eps_abs": 0.1, "eps_rel": 0.1}
})";

const char* kSmallChain = R"({
  "model": "chain",
  "chain": {"n": 3, "position_noise": 0.1, "velocity_noise": 0.1},
  "horizon": 6,
  "sampling_time": 0.2,
  "duration": 1.0,
  "bounds": {"control": [{"index": 0, "lower": -1, "upper": 1}]},
  "scheme": {"kind": "rti"},
  "initialization": "steady_state",
  "seed": 4
})";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmon_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SimulationLog controls_log(std::vector<double> u, double Ts) {
  SimulationLog log;
  log.nx = 1;
  log.nu = 1;
  log.sampling_time = Ts;
  for (std::size_t i = 0; i < u.size(); ++i) {
    LogRow r;
    r.time = static_cast<double>(i) * Ts;
    r.state = Vector::Zero(1);
    r.control = Vector::Constant(1, u[i]);
    log.rows.push_back(r);
  }
  return log;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST(StabilizingTime, Examples) {
  EXPECT_NEAR(stabilizing_time(controls_log({0.5, 0.05, -0.2, 0.01, 0.0}, 0.1), 0.1, 50.0), 0.3, 1e-15);
  EXPECT_EQ(stabilizing_time(controls_log({0.01, 0.0}, 0.1), 0.1, 50.0), 0.0);
  EXPECT_EQ(stabilizing_time(controls_log({0.0, 0.3}, 0.1), 0.1, 50.0), 50.0);
  // the threshold itself is not "below"
  EXPECT_NEAR(stabilizing_time(controls_log({0.1, 0.0}, 0.2), 0.1, 50.0), 0.2, 1e-15);
  auto failed = controls_log({0.0}, 0.1);
  failed.failed = true;
  EXPECT_EQ(stabilizing_time(failed, 0.1, 42.0), 42.0);
  EXPECT_EQ(stabilizing_time(controls_log({}, 0.1), 0.1, 50.0), 0.0);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.75), 7.0);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

TEST(Scenario, ParsesAndCountsInstants) {
  const auto c = parse_scenario(kSmallPendulum);
  EXPECT_EQ(c.horizon, 10);
  EXPECT_EQ(c.instants(), 10);
  EXPECT_EQ(c.QN, c.Q);
  EXPECT_EQ(c.scheme.kind, SchemeKind::CMON_RTI);
  EXPECT_EQ(c.initial_state, Vector::Zero(4));
  EXPECT_EQ(c.raw, kSmallPendulum);
  auto d = c;
  d.duration = 20.0;
  EXPECT_EQ(d.instants(), 400);
}

TEST(Scenario, RejectsBadInput) {
  EXPECT_THROW(parse_scenario("{ not json"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "boat"})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "chain", "horizon": "long"})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "chain", "sampling_time": -1})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "chain", "scheme": {"kind": "nope"}})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "chain", "initialization": "cold"})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"model": "pendulum"})"), ConfigError);  // no reference
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), IoError);
}

TEST(Scenario, ShippedScenariosLoad) {
  for (const char* name : {"pendulum.json", "chain.json"}) {
    const auto c = load_scenario(std::string(CMON_SOURCE_DIR) + "/scenarios/" + name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
}

TEST(Scenario, ReferenceWindowShiftsByOneNode) {
  const auto c = parse_scenario(kSmallPendulum);
  for (int i = 0; i < 12; ++i) {
    const auto a = pendulum_reference_window(c, i);
    const auto b = pendulum_reference_window(c, i + 1);
    for (int k = 0; k + 1 < c.horizon; ++k) EXPECT_EQ(a.stage[k + 1], b.stage[k]) << i << ' ' << k;
    EXPECT_EQ(a.terminal.head(2), b.stage[c.horizon - 1].head(2));
  }
  // the switch at 0.3 s reaches node 6 of the first window
  const auto w = pendulum_reference_window(c, 0);
  EXPECT_EQ(w.stage[5](0), 0.0);
  EXPECT_EQ(w.stage[6](0), 0.4);
}

TEST(Simulation, DeterministicAndLogged) {
  const auto c = parse_scenario(kSmallPendulum);
  const auto a = closed_loop_simulate(c);
  const auto b = closed_loop_simulate(c);
  ASSERT_FALSE(a.failed) << a.failure;
  ASSERT_EQ(a.rows.size(), 10u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].state, b.rows[i].state);
    EXPECT_EQ(a.rows[i].control, b.rows[i].control);
    EXPECT_TRUE(std::isfinite(a.rows[i].kkt));
    EXPECT_TRUE(std::isfinite(a.rows[i].e_bar));
  }
  EXPECT_EQ(a.rows[0].state, c.initial_state);
  EXPECT_EQ(a.rows[0].n_refreshed, 0);  // perfect warm start, zero nonlinearity measure
}

TEST(Simulation, ZeroDurationGivesEmptyLog) {
  auto c = parse_scenario(kSmallPendulum);
  c.duration = 0.0;
  const auto log = closed_loop_simulate(c);
  EXPECT_TRUE(log.rows.empty());
  EXPECT_FALSE(log.failed);
}

TEST(Simulation, ChainAtRestStabilizesImmediately) {
  auto c = parse_scenario(kSmallChain);
  c.position_noise = c.velocity_noise = 0.0;
  const auto s = randomized_chain_trials(c, 1);
  ASSERT_EQ(s.trials.size(), 1u);
  EXPECT_EQ(s.trials[0].t_st, 0.0);
  EXPECT_EQ(s.failures, 0);
  const Vector xs = chain_rest_state(c);
  for (const auto& r : s.trials[0].log.rows) EXPECT_LE((r.state - xs).norm(), 1e-8);
}

TEST(Simulation, ChainTrialsIndependentOfThreadCount) {
  const auto c = parse_scenario(kSmallChain);
  const auto off = prepare_offline(c);
  const auto a = randomized_chain_trials(c, 3, &off, 1);
  const auto b = randomized_chain_trials(c, 3, &off, 3);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(a.trials[t].seed, trial_seed(4, t));
    ASSERT_EQ(a.trials[t].log.rows.size(), b.trials[t].log.rows.size());
    for (std::size_t i = 0; i < a.trials[t].log.rows.size(); ++i) {
      EXPECT_EQ(a.trials[t].log.rows[i].control, b.trials[t].log.rows[i].control);
    }
  }
  EXPECT_EQ(a.mean_t_st, b.mean_t_st);
}

TEST(Simulation, ChainInitialStateNoiseIsBoundedAndSeeded) {
  const auto c = parse_scenario(kSmallChain);
  const Vector xs = chain_rest_state(c);
  const Vector a = chain_initial_state(c, 0);
  EXPECT_EQ(a, chain_initial_state(c, 0));
  EXPECT_NE(a, chain_initial_state(c, 1));
  const int np = 3 * (c.chain.n - 1);
  EXPECT_LE((a - xs).head(2 * np).lpNorm<Eigen::Infinity>(), 0.1);
  EXPECT_EQ((a - xs).tail(3).norm(), 0.0);  // the controlled end is not perturbed
}

TEST(Export, LogRoundTripsExactly) {
  auto c = parse_scenario(kSmallPendulum);
  c.scheme.dto_oracle = true;
  const auto log = closed_loop_simulate(c);
  const auto dir = scratch("roundtrip");
  write_log_csv(log, dir / "log.csv");
  const auto back = read_log_csv(dir / "log.csv");
  ASSERT_EQ(back.rows.size(), log.rows.size());
  EXPECT_EQ(back.nx, 4);
  EXPECT_EQ(back.nu, 1);
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    const auto& a = log.rows[i];
    const auto& b = back.rows[i];
    EXPECT_EQ(a.time, b.time);
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.control, b.control);
    EXPECT_TRUE(same(a.kkt, b.kkt));
    EXPECT_TRUE(same(a.dto, b.dto));
    EXPECT_TRUE(same(a.e_bar, b.e_bar));
    EXPECT_TRUE(same(a.eta_pri, b.eta_pri));
    EXPECT_TRUE(same(a.eta_dual, b.eta_dual));
    EXPECT_EQ(a.n_refreshed, b.n_refreshed);
    EXPECT_EQ(a.refresh_fraction, b.refresh_fraction);
    EXPECT_EQ(a.kappa_max, b.kappa_max);
    EXPECT_EQ(a.active_set_changed, b.active_set_changed);
    EXPECT_EQ(a.counters.forward_sensitivities, b.counters.forward_sensitivities);
    EXPECT_EQ(a.counters.qp_iterations, b.counters.qp_iterations);
  }
}

TEST(Export, SpecialValuesAndFailureMarker) {
  SimulationLog log = controls_log({0.5}, 0.1);
  log.rows[0].eta_pri = std::numeric_limits<double>::infinity();
  log.failed = true;
  log.failure = "instant 1: QP\ninfeasible";
  const auto dir = scratch("special");
  write_log_csv(log, dir / "f.csv");
  const auto back = read_log_csv(dir / "f.csv");
  EXPECT_TRUE(std::isinf(back.rows[0].eta_pri));
  EXPECT_TRUE(std::isnan(back.rows[0].kkt));
  EXPECT_TRUE(back.failed);
  EXPECT_EQ(back.failure, "instant 1: QP infeasible");
}

TEST(Export, EmptyLogIsHeaderOnly) {
  SimulationLog log;
  log.nx = 2;
  log.nu = 1;
  const auto dir = scratch("empty");
  write_log_csv(log, dir / "e.csv");
  std::string expected;
  for (const auto& h : log_columns(2, 1)) expected += (expected.empty() ? "" : ",") + h;
  EXPECT_EQ(slurp(dir / "e.csv"), expected + "\n");
  EXPECT_TRUE(read_log_csv(dir / "e.csv").rows.empty());
}

TEST(Export, RejectsForeignFiles) {
  const auto dir = scratch("foreign");
  std::ofstream(dir / "x.csv") << "a,b,c\n1,2,3\n";
  EXPECT_THROW(read_log_csv(dir / "x.csv"), IoError);
  EXPECT_THROW(read_log_csv(dir / "missing.csv"), IoError);
}

TEST(Export, ManifestEchoesConfigurationVerbatim) {
  const auto c = parse_scenario(kSmallChain);
  const auto s = randomized_chain_trials(c, 2);
  const auto dir = scratch("manifest");
  ManifestInfo info;
  info.config = &c;
  info.summary = &s;
  info.files = {"trial_000.csv", "trial_001.csv", "summary.csv"};
  write_summary_csv(s, dir / "summary.csv");
  write_manifest(info, dir);
  EXPECT_EQ(slurp(dir / "scenario.json"), std::string(kSmallChain));
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["config"].get<std::string>(), std::string(kSmallChain));
  EXPECT_EQ(m["scheme"], "rti");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["files"].size(), 3u);
  EXPECT_DOUBLE_EQ(m["summary"]["mean_t_st"].get<double>(), s.mean_t_st);
  EXPECT_FALSE(m["version"].get<std::string>().empty());
  const std::string summary = slurp(dir / "summary.csv");
  EXPECT_EQ(summary.rfind("trial,seed,t_st,failed,instants\n", 0), 0u);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 3);
  ManifestInfo empty;
  EXPECT_THROW(write_manifest(empty, dir), InvalidStateError);
}
