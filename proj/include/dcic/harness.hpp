#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dcic/classifier.hpp"
#include "dcic/dcic_linear.hpp"
#include "dcic/domain_model.hpp"
#include "dcic/synth.hpp"

namespace dcic::harness {

enum class Scenario { tars_beta_sweep, tars_rho_sweep, tars_size_sweep, getars_accuracy };
enum class QSource { true_q, estimated };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
std::string to_string(QSource s);
QSource q_source_from_string(const std::string& s);

// Two-class grids. beta_grid holds beta*(Y=1) = P^T(Y=1) / P^S(Y=1); every
// (rho, beta, n) combination is run `repetitions` times with m = n.
struct ExperimentConfig {
  Scenario scenario = Scenario::tars_beta_sweep;
  int repetitions = 20;
  std::vector<int> sample_sizes{500};
  std::vector<double> rho_grid{0.4};
  std::vector<double> beta_grid{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8};
  QSource q_source = QSource::true_q;
  std::uint64_t seed = 0;
  std::string output = "results.csv";

  int dim = 2;
  double source_prior1 = 0.5;
  int getars_d_prime = 1;
  double anchor_percentile = 97.0;
  bool record_timing = true;  // false writes wall_time_s = 0 for byte-stable output
  synth::LocationScaleRanges location_scale;
  linear::LinearFitConfig linear;
  classifier::TrainConfig train;    // downstream classifier (GeTarS)
  classifier::TrainConfig q_model;  // posterior model behind an estimated Q

  // Grid defaults for the named scenario.
  static ExperimentConfig defaults(Scenario s);
  void check() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Keys absent from j keep the values already in base.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base);

struct MetricRecord {
  std::string scenario;
  int rep = 0;
  std::uint64_t seed = 0;  // per-repetition seed; rerunning it reproduces the record
  double rho = 0.0;
  double beta1 = 0.0;
  int n_source = 0;
  int n_target = 0;
  std::string method;
  double beta_error = 0.0;
  double alpha_error = 0.0;
  std::optional<double> accuracy;
  double wall_time_s = 0.0;

  // Provenance and fit diagnostics, written to the JSON sidecar.
  Eigen::VectorXd alpha;
  Eigen::VectorXd true_target_prior;
  Eigen::VectorXd source_prior_estimate;
  Eigen::MatrixXd q_used;
  bool converged = false;
  double orthonormality_error = 0.0;
  double simplex_error = 0.0;
  int trace_violations = 0;  // objective increases beyond 1e-10
  std::string error;         // nonempty when the repetition failed
};

inline constexpr double kTraceSlack = 1e-10;

// Class-ratio error ||beta_est - beta*|| / ||beta*|| with beta_est = alpha ./ p_source.
double beta_error(const Eigen::VectorXd& alpha, const Eigen::VectorXd& source_prior_estimate,
                  const Eigen::VectorXd& true_target_prior, const Eigen::VectorXd& source_prior);

// Anchor-point Q estimate from an MLP fitted to the noisy labels.
Eigen::MatrixXd estimate_q(const Dataset& noisy_source, const classifier::TrainConfig& cfg,
                           double percentile);

// One grid point, one repetition; returns one record per method.
std::vector<MetricRecord> run_tars_once(const ExperimentConfig& cfg, double rho, double beta1,
                                        int n, int rep, std::uint64_t rep_seed);
std::vector<MetricRecord> run_getars_once(const ExperimentConfig& cfg, double rho, double beta1,
                                          int n, int rep, std::uint64_t rep_seed);

// Seed for repetition `rep` at grid point `point`.
std::uint64_t repetition_seed(std::uint64_t root, std::size_t point, int rep);

std::vector<MetricRecord> run_tars(const ExperimentConfig& cfg);
std::vector<MetricRecord> run_getars(const ExperimentConfig& cfg);
std::vector<MetricRecord> run(const ExperimentConfig& cfg);

inline constexpr const char* kCsvHeader =
    "scenario,rep,seed,rho,beta1,n_source,n_target,method,beta_error,alpha_error,accuracy,"
    "wall_time_s";

std::string format_csv(const std::vector<MetricRecord>& records);
// Writes the CSV to path and the JSON sidecar to path + ".json".
void emit_results(const std::vector<MetricRecord>& records, const ExperimentConfig& cfg,
                  const std::filesystem::path& path);
// Parses the numeric CSV columns back; provenance fields stay empty.
std::vector<MetricRecord> parse_csv(const std::string& text);

nlohmann::json to_json(const MetricRecord& r);

}  // namespace dcic::harness
