#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcic/harness.hpp"
#include "test_support.hpp"

using namespace dcic;
using namespace dcic::harness;

namespace {

ExperimentConfig small_tars() {
  ExperimentConfig cfg;
  cfg.repetitions = 2;
  cfg.sample_sizes = {60};
  cfg.rho_grid = {0.2};
  cfg.beta_grid = {0.6, 1.4};
  cfg.seed = 11;
  cfg.record_timing = false;
  cfg.linear.max_outer_iters = 5;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("empty result set is a header-only CSV") {
  CHECK(format_csv({}) == std::string(kCsvHeader) + "\n");
  CHECK(parse_csv(format_csv({})).empty());
}

TEST_CASE("CSV round trip") {
  MetricRecord r;
  r.scenario = "tars_beta_sweep";
  r.rep = 3;
  r.seed = 18446744073709551615ULL;
  r.rho = 0.1;
  r.beta1 = 1.4;
  r.n_source = 500;
  r.n_target = 500;
  r.method = "dcic";
  r.beta_error = 0.123456789012345678;
  r.alpha_error = 1.0 / 3.0;
  r.accuracy = 0.875;
  r.wall_time_s = 2.5e-3;
  MetricRecord nan_row = r;
  nan_row.method = "cic";
  nan_row.beta_error = std::nan("");
  nan_row.accuracy.reset();

  const auto back = parse_csv(format_csv({r, nan_row}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].scenario == r.scenario);
  CHECK(back[0].seed == r.seed);
  CHECK(back[0].rep == 3);
  CHECK(back[0].method == "dcic");
  CHECK(std::abs(back[0].beta_error - r.beta_error) <= 1e-12);
  CHECK(std::abs(back[0].alpha_error - r.alpha_error) <= 1e-12);
  CHECK(std::abs(*back[0].accuracy - 0.875) <= 1e-12);
  CHECK(std::abs(back[0].wall_time_s - r.wall_time_s) <= 1e-12);
  CHECK(std::isnan(back[1].beta_error));
  CHECK_FALSE(back[1].accuracy.has_value());
  CHECK_THROWS(parse_csv("not,a,header\n"));
}

TEST_CASE("beta error") {
  const Eigen::Vector2d p(0.5, 0.5);
  const Eigen::Vector2d target(0.3, 0.7);
  CHECK(beta_error(target, p, target, p) == 0.0);
  // beta* = (0.6, 1.4), estimate (1, 1)
  const double expected = std::sqrt(0.16 + 0.16) / std::sqrt(0.36 + 1.96);
  CHECK(beta_error(p, p, target, p) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("TarS sweep is reproducible and self-consistent") {
  const auto cfg = small_tars();
  const auto records = run(cfg);
  REQUIRE(records.size() == 2u * 2u * 2u);
  for (const auto& r : records) {
    CHECK(r.error.empty());
    CHECK(r.wall_time_s == 0.0);
    CHECK(r.simplex_error <= 1e-12);
    CHECK(r.trace_violations == 0);
    CHECK(r.q_used.rows() == 2);
    CHECK(beta_error(r.alpha, r.source_prior_estimate, r.true_target_prior,
                     Eigen::Vector2d(cfg.source_prior1, 1.0 - cfg.source_prior1)) == r.beta_error);
    CHECK((r.alpha - r.true_target_prior).lpNorm<1>() == r.alpha_error);
    if (r.method == "cic") CHECK(r.q_used.isIdentity(0.0));
  }

  // each record's seed reruns that repetition exactly
  const auto& last = records.back();
  const auto again = run_tars_once(cfg, last.rho, last.beta1, last.n_source, last.rep, last.seed);
  CHECK(again[1].alpha == last.alpha);

  const test::TempPath a("a.csv");
  const test::TempPath b("b.csv");
  emit_results(records, cfg, a.path());
  emit_results(run(cfg), cfg, b.path());
  CHECK(slurp(a.path()) == slurp(b.path()));
  const auto sidecar = nlohmann::json::parse(slurp(a.path().string() + ".json"));
  CHECK(sidecar.at("records").size() == records.size());
  CHECK(sidecar.at("config").at("seed") == 11);
  std::filesystem::remove(a.path().string() + ".json");
  std::filesystem::remove(b.path().string() + ".json");

  ExperimentConfig other = cfg;
  other.seed = 12;
  CHECK(format_csv(run(other)) != format_csv(records));
}

TEST_CASE("a failing repetition is tagged, not dropped") {
  const auto cfg = small_tars();
  const auto recs = run_tars_once(cfg, 0.2, 3.0, 60, 0, 5);  // beta1 * 0.5 > 1
  REQUIRE(recs.size() == 2);
  for (const auto& r : recs) {
    CHECK_FALSE(r.error.empty());
    CHECK(std::isnan(r.beta_error));
  }
  CHECK(to_json(recs[0]).contains("error"));
  CHECK(to_json(recs[0]).at("beta_error").is_null());
}

TEST_CASE("GeTarS records carry accuracy") {
  ExperimentConfig cfg = ExperimentConfig::defaults(Scenario::getars_accuracy);
  cfg.repetitions = 1;
  cfg.sample_sizes = {80};
  cfg.rho_grid = {0.2};
  cfg.beta_grid = {1.4};
  cfg.record_timing = false;
  cfg.linear.max_outer_iters = 3;
  cfg.train.epochs = 5;
  const auto recs = run(cfg);
  REQUIRE(recs.size() == 2);
  for (const auto& r : recs) {
    CHECK(r.error.empty());
    REQUIRE(r.accuracy.has_value());
    CHECK(*r.accuracy >= 0.0);
    CHECK(*r.accuracy <= 1.0);
    CHECK(r.orthonormality_error <= 1e-10);
  }
}

TEST_CASE("configuration parsing and validation") {
  const auto base = ExperimentConfig::defaults(Scenario::tars_size_sweep);
  CHECK(base.sample_sizes == std::vector<int>{200, 500, 1000, 2000});
  const auto cfg = config_from_json(nlohmann::json{{"repetitions", 3}, {"q_source", "estimated"}}, base);
  CHECK(cfg.repetitions == 3);
  CHECK(cfg.q_source == QSource::estimated);
  CHECK(cfg.sample_sizes == base.sample_sizes);

  const auto round = config_from_json(to_json(cfg), ExperimentConfig{});
  CHECK(to_json(round) == to_json(cfg));

  ExperimentConfig bad = base;
  bad.rho_grid = {0.5};
  CHECK_THROWS(bad.check());
  bad = base;
  bad.beta_grid = {2.5};
  CHECK_THROWS(bad.check());
  CHECK_THROWS(scenario_from_string("nope"));
  CHECK(scenario_from_string(to_string(Scenario::getars_accuracy)) == Scenario::getars_accuracy);
  CHECK(repetition_seed(1, 2, 3) == repetition_seed(1, 2, 3));
  CHECK(repetition_seed(1, 2, 3) != repetition_seed(1, 2, 4));
}
