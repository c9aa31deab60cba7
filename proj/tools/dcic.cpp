// Command-line front end: experiment sweeps plus single fits on CSV data.
// Exit status: 0 success, 1 some repetition failed, 2 configuration error.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "dcic/classifier.hpp"
#include "dcic/dcic_linear.hpp"
#include "dcic/domain_model.hpp"
#include "dcic/harness.hpp"
#include "dcic/noise_adapt.hpp"

namespace {

using nlohmann::json;

constexpr int kExitFailedRep = 1;
constexpr int kExitConfig = 2;

// Configuration problems surface as exit status 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

struct SweepOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> reps;
  std::string scenario = "tars_beta_sweep";
  std::string q_source = "true";
};

int run_sweep(const SweepOptions& opt, bool getars) {
  dcic::harness::ExperimentConfig cfg;
  try {
    const auto scenario = getars ? dcic::harness::Scenario::getars_accuracy
                                 : dcic::harness::scenario_from_string(opt.scenario);
    if (!getars && scenario == dcic::harness::Scenario::getars_accuracy) {
      throw ConfigError("use the getars subcommand for getars_accuracy");
    }
    cfg = dcic::harness::ExperimentConfig::defaults(scenario);
    cfg.q_source = dcic::harness::q_source_from_string(opt.q_source);
    if (opt.reps) cfg.repetitions = *opt.reps;
    if (!opt.out.empty()) cfg.output = opt.out;
    if (!opt.config_path.empty()) cfg = dcic::harness::config_from_json(read_json(opt.config_path), cfg);
    if (opt.seed) cfg.seed = *opt.seed;
    cfg.check();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  const auto records = getars ? dcic::harness::run_getars(cfg) : dcic::harness::run_tars(cfg);
  dcic::harness::emit_results(records, cfg, cfg.output);
  int failed = 0;
  for (const auto& r : records) {
    if (!r.error.empty()) {
      ++failed;
      std::cerr << "rep " << r.rep << " (" << r.method << ", seed " << r.seed << ") failed: " << r.error
                << '\n';
    }
  }
  std::cout << records.size() << " records written to " << cfg.output << '\n';
  return failed > 0 ? kExitFailedRep : 0;
}

struct FitOptions {
  std::string source;
  std::string target;
  std::string q_path;
  std::string mode = "dcic";
  int d_prime = 1;
  std::uint64_t seed = 0;
  std::string out = "fit.json";
};

int run_fit(const FitOptions& opt) {
  dcic::linear::LinearFitConfig cfg;
  std::optional<dcic::Dataset> source;
  std::optional<dcic::Dataset> target;
  std::optional<dcic::TransitionMatrix> q;
  try {
    cfg.mode = dcic::linear::fit_mode_from_string(opt.mode);
    cfg.d_prime = opt.d_prime;
    cfg.seed = opt.seed;
    source.emplace(dcic::read_dataset_csv(opt.source, dcic::LabelKind::noisy));
    target.emplace(dcic::read_dataset_csv(opt.target, dcic::LabelKind::noisy).unlabeled());
    const int c = source->num_classes();
    q.emplace(opt.q_path.empty() ? dcic::TransitionMatrix::identity(c)
                                 : dcic::transition_from_json(read_json(opt.q_path)));
    cfg.check(source->dim());
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const auto result = dcic::linear::fit(cfg, *source, *target, *q);
  write_json(opt.out, dcic::linear::to_json(result, cfg));
  std::cout << "alpha:";
  for (int i = 0; i < result.alpha.size(); ++i) std::cout << ' ' << result.alpha[i];
  std::cout << "\nconverged: " << std::boolalpha << result.converged << '\n';
  return 0;
}

struct TrainOptions {
  std::string source;
  std::string q_path;
  std::string fit_path;  // optional linear fit: projects features and supplies alpha
  std::uint64_t seed = 0;
  int hidden = 64;
  int epochs = 100;
  double learning_rate = 0.1;
  std::string out = "model.json";
};

int run_train(const TrainOptions& opt) {
  std::optional<dcic::Dataset> source;
  std::optional<dcic::TransitionMatrix> q;
  dcic::classifier::TrainConfig cfg;
  Eigen::MatrixXd features;
  Eigen::VectorXd gamma;
  try {
    source.emplace(dcic::read_dataset_csv(opt.source, dcic::LabelKind::noisy));
    const int c = source->num_classes();
    q.emplace(opt.q_path.empty() ? dcic::TransitionMatrix::identity(c)
                                 : dcic::transition_from_json(read_json(opt.q_path)));
    features = source->features();
    gamma = Eigen::VectorXd::Ones(c);
    if (!opt.fit_path.empty()) {
      const json fit = read_json(opt.fit_path);
      const Eigen::MatrixXd w = dcic::linear::projection_from_json(fit);
      features = features * w;
      const dcic::ClassPrior alpha(dcic::vector_from_json(fit.at("alpha")));
      gamma = dcic::noise::gamma_weights(alpha, *q, dcic::empirical_prior(source->labels(), c));
    }
    cfg.seed = opt.seed;
    cfg.hidden_units = opt.hidden;
    cfg.epochs = opt.epochs;
    cfg.learning_rate = opt.learning_rate;
    cfg.check();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const auto model = dcic::classifier::train(features, source->labels(), *q, gamma, cfg);
  dcic::classifier::save_model(model, opt.out);
  std::cout << "model written to " << opt.out << '\n';
  return 0;
}

struct EstimateOptions {
  std::string source;
  double percentile = 97.0;
  std::uint64_t seed = 0;
  std::string out = "q_hat.json";
};

int run_estimate(const EstimateOptions& opt) {
  std::optional<dcic::Dataset> source;
  dcic::classifier::TrainConfig cfg;
  try {
    source.emplace(dcic::read_dataset_csv(opt.source, dcic::LabelKind::noisy));
    if (!(opt.percentile > 0.0 && opt.percentile <= 100.0)) {
      throw ConfigError("percentile must lie in (0, 100]");
    }
    cfg.seed = opt.seed;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const Eigen::MatrixXd q_hat = dcic::harness::estimate_q(*source, cfg, opt.percentile);
  json out{{"c", q_hat.rows()}, {"rows", json::array()}};
  for (Eigen::Index i = 0; i < q_hat.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < q_hat.cols(); ++j) row.push_back(q_hat(i, j));
    out["rows"].push_back(row);
  }
  try {
    const auto q = dcic::TransitionMatrix::validate(q_hat);
    out["condition_number"] = q.condition_number();
    out["diagonal_warning"] = q.diagonal_warning();
  } catch (const std::invalid_argument& e) {
    out["invalid"] = e.what();
  }
  write_json(opt.out, out);
  std::cout << out["rows"].dump() << '\n';
  return out.contains("invalid") ? kExitFailedRep : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising conditional invariant components: fits and experiment sweeps"};
  app.require_subcommand(1);

  SweepOptions tars_opt;
  auto* tars = app.add_subcommand("tars", "target-shift class-ratio sweeps");
  SweepOptions getars_opt;
  auto* getars = app.add_subcommand("getars", "generalized target shift accuracy sweep");
  for (auto [cmd, opt] : {std::pair{tars, &tars_opt}, std::pair{getars, &getars_opt}}) {
    cmd->add_option("--config", opt->config_path, "JSON config; overrides flags except --seed");
    cmd->add_option("--seed", opt->seed, "root seed");
    cmd->add_option("--out", opt->out, "CSV output path (JSON sidecar beside it)");
    cmd->add_option("--reps", opt->reps, "repetitions per grid point");
    cmd->add_option("--q-source", opt->q_source, "true or estimated")
        ->check(CLI::IsMember({"true", "estimated"}));
  }
  tars->add_option("--scenario", tars_opt.scenario, "tars_beta_sweep, tars_rho_sweep or tars_size_sweep");

  FitOptions fit_opt;
  auto* fit = app.add_subcommand("fit", "fit the linear model on CSV data");
  fit->add_option("--source", fit_opt.source, "noisy source CSV")->required();
  fit->add_option("--target", fit_opt.target, "target CSV (labels ignored)")->required();
  fit->add_option("--q", fit_opt.q_path, "transition matrix JSON (default identity)");
  fit->add_option("--mode", fit_opt.mode, "dcic, cic_baseline or tars_fixed_w");
  fit->add_option("--d-prime", fit_opt.d_prime, "projection dimension");
  fit->add_option("--seed", fit_opt.seed, "initialization seed");
  fit->add_option("--out", fit_opt.out, "result JSON");

  TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "train the forward-corrected classifier");
  train->add_option("--source", train_opt.source, "noisy source CSV")->required();
  train->add_option("--q", train_opt.q_path, "transition matrix JSON (default identity)");
  train->add_option("--fit", train_opt.fit_path, "linear fit JSON supplying W and alpha");
  train->add_option("--seed", train_opt.seed, "training seed");
  train->add_option("--hidden", train_opt.hidden, "hidden units");
  train->add_option("--epochs", train_opt.epochs, "epochs");
  train->add_option("--lr", train_opt.learning_rate, "learning rate");
  train->add_option("--out", train_opt.out, "model JSON");

  EstimateOptions est_opt;
  auto* est = app.add_subcommand("estimate-q", "anchor-point transition matrix estimate");
  est->add_option("--source", est_opt.source, "noisy source CSV")->required();
  est->add_option("--percentile", est_opt.percentile, "anchor percentile");
  est->add_option("--seed", est_opt.seed, "posterior model seed");
  est->add_option("--out", est_opt.out, "Q-hat JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*tars) return run_sweep(tars_opt, false);
    if (*getars) return run_sweep(getars_opt, true);
    if (*fit) return run_fit(fit_opt);
    if (*train) return run_train(train_opt);
    if (*est) return run_estimate(est_opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailedRep;
  }
  return 0;
}
