#include "dcic/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include <nlohmann/json.hpp>

#include "dcic/noise_adapt.hpp"
#include "dcic/rng.hpp"

namespace dcic::harness {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Sub-stream indices within one repetition.
enum Stream : std::uint64_t {
  kSpec = 0,
  kSource = 1,
  kTarget = 2,
  kTransform = 3,
  kFlip = 4,
  kQModel = 5,
  kFit = 6,
  kClassifier = 7,
};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("parse_csv: bad number '" + s + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("parse_csv: bad integer '" + s + "'");
  }
  return v;
}

Eigen::VectorXd two_class(double p1) {
  Eigen::VectorXd p(2);
  p << p1, 1.0 - p1;
  return p;
}

double simplex_error(const Eigen::VectorXd& a) {
  return std::max(std::abs(a.sum() - 1.0), std::max(0.0, -a.minCoeff()));
}

int count_trace_violations(const std::vector<double>& trace) {
  int violations = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1] + kTraceSlack) ++violations;
  }
  return violations;
}

double accuracy_of(const std::vector<Label>& predicted, const std::vector<Label>& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Source and target draws shared by both protocols.
struct Scene {
  Dataset noisy_source;
  Dataset target;  // clean labels kept for evaluation only
  Eigen::VectorXd source_prior;
  Eigen::VectorXd target_prior;
  TransitionMatrix q_true;
};

Scene make_scene(const ExperimentConfig& cfg, double rho, double beta1, int n, const Rng& root,
                 bool shift_conditionals) {
  const double target_p1 = beta1 * cfg.source_prior1;
  if (target_p1 < 0.0 || target_p1 > 1.0) {
    throw std::invalid_argument("beta1 * P^S(Y=1) must lie in [0, 1]");
  }
  Rng spec_rng = root.split(kSpec);
  synth::GmmSpec spec = synth::sample_gmm_spec(2, cfg.dim, spec_rng);
  const Eigen::VectorXd source_prior = two_class(cfg.source_prior1);
  const Eigen::VectorXd target_prior = two_class(target_p1);

  synth::GmmSpec source_spec = spec;
  source_spec.priors = ClassPrior(source_prior);
  synth::GmmSpec target_spec = spec;
  target_spec.priors = ClassPrior(target_prior);

  Rng source_rng = root.split(kSource);
  Rng target_rng = root.split(kTarget);
  const Dataset source = synth::sample_dataset(source_spec, n, source_rng);
  Dataset target = synth::sample_dataset(target_spec, n, target_rng);
  if (shift_conditionals) {
    Rng transform_rng = root.split(kTransform);
    const auto t = synth::sample_location_scale(2, cfg.dim, transform_rng, cfg.location_scale);
    target = synth::apply_location_scale(target, t);
  }
  const TransitionMatrix q = TransitionMatrix::symmetric(2, rho);
  Rng flip_rng = root.split(kFlip);
  return Scene{synth::flip_labels(source, q, flip_rng), std::move(target), source_prior,
               target_prior, q};
}

MetricRecord base_record(const ExperimentConfig& cfg, double rho, double beta1, int n, int rep,
                         std::uint64_t rep_seed, const std::string& method) {
  MetricRecord r;
  r.scenario = to_string(cfg.scenario);
  r.rep = rep;
  r.seed = rep_seed;
  r.rho = rho;
  r.beta1 = beta1;
  r.n_source = n;
  r.n_target = n;
  r.method = method;
  return r;
}

void mark_failed(MetricRecord& r, const std::string& what) {
  r.error = what;
  r.beta_error = kNaN;
  r.alpha_error = kNaN;
  if (r.accuracy) r.accuracy = kNaN;
}

void fill_fit(MetricRecord& r, const linear::LinearFitResult& fit, const Scene& scene,
              const Eigen::MatrixXd& q_used) {
  r.alpha = fit.alpha.values();
  r.true_target_prior = scene.target_prior;
  r.source_prior_estimate = fit.source_clean_prior.values();
  r.q_used = q_used;
  r.converged = fit.converged;
  r.orthonormality_error = orthonormality_error(fit.w.matrix());
  r.simplex_error = simplex_error(r.alpha);
  r.trace_violations = count_trace_violations(fit.objective_trace);
  r.alpha_error = (r.alpha - scene.target_prior).lpNorm<1>();
  r.beta_error = beta_error(r.alpha, r.source_prior_estimate, scene.target_prior, scene.source_prior);
}

// Q handed to the denoising method: the generating one or an estimate.
TransitionMatrix q_for_dcic(const ExperimentConfig& cfg, const Scene& scene, const Rng& root) {
  if (cfg.q_source == QSource::true_q) return scene.q_true;
  classifier::TrainConfig qc = cfg.q_model;
  qc.seed = root.split(kQModel).seed();
  return TransitionMatrix::validate(estimate_q(scene.noisy_source, qc, cfg.anchor_percentile));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::tars_beta_sweep: return "tars_beta_sweep";
    case Scenario::tars_rho_sweep: return "tars_rho_sweep";
    case Scenario::tars_size_sweep: return "tars_size_sweep";
    case Scenario::getars_accuracy: return "getars_accuracy";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
  for (auto v : {Scenario::tars_beta_sweep, Scenario::tars_rho_sweep, Scenario::tars_size_sweep,
                 Scenario::getars_accuracy}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown scenario: " + s);
}

std::string to_string(QSource s) { return s == QSource::true_q ? "true" : "estimated"; }

QSource q_source_from_string(const std::string& s) {
  if (s == "true") return QSource::true_q;
  if (s == "estimated") return QSource::estimated;
  throw std::invalid_argument("unknown q_source: " + s);
}

ExperimentConfig ExperimentConfig::defaults(Scenario s) {
  ExperimentConfig cfg;
  cfg.scenario = s;
  switch (s) {
    case Scenario::tars_beta_sweep:
      break;
    case Scenario::tars_rho_sweep:
      cfg.rho_grid = {0.0, 0.1, 0.2, 0.3, 0.4};
      cfg.beta_grid = {0.6};
      break;
    case Scenario::tars_size_sweep:
      cfg.beta_grid = {0.6};
      cfg.sample_sizes = {200, 500, 1000, 2000};
      break;
    case Scenario::getars_accuracy:
      cfg.rho_grid = {0.0, 0.1, 0.2, 0.3, 0.4};
      cfg.beta_grid = {1.4, 1.6, 1.8};
      break;
  }
  return cfg;
}

void ExperimentConfig::check() const {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (sample_sizes.empty() || rho_grid.empty() || beta_grid.empty()) {
    throw std::invalid_argument("grids must be nonempty");
  }
  for (int n : sample_sizes) {
    if (n < 2) throw std::invalid_argument("sample sizes must be >= 2");
  }
  for (double rho : rho_grid) {
    if (!(rho >= 0.0 && rho < 0.5)) throw std::invalid_argument("rho must lie in [0, 0.5)");
  }
  if (!(source_prior1 > 0.0 && source_prior1 < 1.0)) {
    throw std::invalid_argument("source_prior1 must lie in (0, 1)");
  }
  for (double b : beta_grid) {
    const double p = b * source_prior1;
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("beta grid leaves the simplex");
  }
  if (dim < 1) throw std::invalid_argument("dim must be >= 1");
  if (getars_d_prime < 1 || getars_d_prime > dim) {
    throw std::invalid_argument("getars_d_prime must lie in [1, dim]");
  }
  if (!(anchor_percentile > 0.0 && anchor_percentile <= 100.0)) {
    throw std::invalid_argument("anchor_percentile must lie in (0, 100]");
  }
  train.check();
  q_model.check();
}

json to_json(const ExperimentConfig& cfg) {
  const auto train_json = [](const classifier::TrainConfig& t) {
    return json{{"hidden_units", t.hidden_units}, {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},             {"batch_size", t.batch_size},
                {"l2_coeff", t.l2_coeff},         {"lr_decay", t.lr_decay}};
  };
  return json{
      {"scenario", to_string(cfg.scenario)},
      {"repetitions", cfg.repetitions},
      {"sample_sizes", cfg.sample_sizes},
      {"rho_grid", cfg.rho_grid},
      {"beta_grid", cfg.beta_grid},
      {"q_source", to_string(cfg.q_source)},
      {"seed", cfg.seed},
      {"output", cfg.output},
      {"dim", cfg.dim},
      {"source_prior1", cfg.source_prior1},
      {"getars_d_prime", cfg.getars_d_prime},
      {"anchor_percentile", cfg.anchor_percentile},
      {"record_timing", cfg.record_timing},
      {"location_scale",
       {{"shift_lo", cfg.location_scale.shift_lo},
        {"shift_hi", cfg.location_scale.shift_hi},
        {"scale_lo", cfg.location_scale.scale_lo},
        {"scale_hi", cfg.location_scale.scale_hi}}},
      {"linear",
       {{"max_outer_iters", cfg.linear.max_outer_iters},
        {"w_cg_iters", cfg.linear.w_cg_iters},
        {"alpha_tol", cfg.linear.alpha_tol},
        {"objective_tol", cfg.linear.objective_tol}}},
      {"train", train_json(cfg.train)},
      {"q_model", train_json(cfg.q_model)},
  };
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  if (j.contains("scenario")) {
    // a named scenario resets the grids before explicit overrides apply
    const Scenario s = scenario_from_string(j.at("scenario").get<std::string>());
    if (s != base.scenario) {
      const ExperimentConfig d = ExperimentConfig::defaults(s);
      base.scenario = s;
      base.rho_grid = d.rho_grid;
      base.beta_grid = d.beta_grid;
      base.sample_sizes = d.sample_sizes;
    }
  }
  const auto take = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("repetitions", base.repetitions);
  take("sample_sizes", base.sample_sizes);
  take("rho_grid", base.rho_grid);
  take("beta_grid", base.beta_grid);
  take("seed", base.seed);
  take("output", base.output);
  take("dim", base.dim);
  take("source_prior1", base.source_prior1);
  take("getars_d_prime", base.getars_d_prime);
  take("anchor_percentile", base.anchor_percentile);
  take("record_timing", base.record_timing);
  if (j.contains("q_source")) base.q_source = q_source_from_string(j.at("q_source").get<std::string>());
  if (j.contains("location_scale")) {
    const json& ls = j.at("location_scale");
    auto& r = base.location_scale;
    r.shift_lo = ls.value("shift_lo", r.shift_lo);
    r.shift_hi = ls.value("shift_hi", r.shift_hi);
    r.scale_lo = ls.value("scale_lo", r.scale_lo);
    r.scale_hi = ls.value("scale_hi", r.scale_hi);
  }
  if (j.contains("linear")) {
    const json& l = j.at("linear");
    auto& c = base.linear;
    c.max_outer_iters = l.value("max_outer_iters", c.max_outer_iters);
    c.w_cg_iters = l.value("w_cg_iters", c.w_cg_iters);
    c.alpha_tol = l.value("alpha_tol", c.alpha_tol);
    c.objective_tol = l.value("objective_tol", c.objective_tol);
  }
  const auto train_from = [](const json& t, classifier::TrainConfig& c) {
    c.hidden_units = t.value("hidden_units", c.hidden_units);
    c.learning_rate = t.value("learning_rate", c.learning_rate);
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.l2_coeff = t.value("l2_coeff", c.l2_coeff);
    c.lr_decay = t.value("lr_decay", c.lr_decay);
  };
  if (j.contains("train")) train_from(j.at("train"), base.train);
  if (j.contains("q_model")) train_from(j.at("q_model"), base.q_model);
  return base;
}

double beta_error(const Eigen::VectorXd& alpha, const Eigen::VectorXd& source_prior_estimate,
                  const Eigen::VectorXd& true_target_prior, const Eigen::VectorXd& source_prior) {
  const Eigen::VectorXd beta_true = true_target_prior.cwiseQuotient(source_prior);
  const Eigen::VectorXd beta_est = alpha.cwiseQuotient(source_prior_estimate);
  return (beta_est - beta_true).norm() / beta_true.norm();
}

Eigen::MatrixXd estimate_q(const Dataset& noisy_source, const classifier::TrainConfig& cfg,
                           double percentile) {
  const int c = noisy_source.num_classes();
  const auto model = classifier::train(noisy_source.features(), noisy_source.labels(),
                                       TransitionMatrix::identity(c), Eigen::VectorXd::Ones(c), cfg);
  return noise::estimate_transition_anchor(
      classifier::predict_proba(model, noisy_source.features()), percentile);
}

std::vector<MetricRecord> run_tars_once(const ExperimentConfig& cfg, double rho, double beta1,
                                        int n, int rep, std::uint64_t rep_seed) {
  const Rng root(rep_seed);
  MetricRecord dcic_rec = base_record(cfg, rho, beta1, n, rep, rep_seed, "dcic");
  MetricRecord cic_rec = base_record(cfg, rho, beta1, n, rep, rep_seed, "cic");
  std::optional<Scene> scene;
  try {
    scene.emplace(make_scene(cfg, rho, beta1, n, root, false));
  } catch (const std::exception& e) {
    mark_failed(dcic_rec, e.what());
    mark_failed(cic_rec, e.what());
    return {dcic_rec, cic_rec};
  }

  linear::LinearFitConfig lc = cfg.linear;
  lc.mode = linear::FitMode::tars_fixed_w;
  lc.d_prime = cfg.dim;
  lc.seed = root.split(kFit).seed();
  const Dataset target = scene->target.unlabeled();

  const auto run_method = [&](MetricRecord& rec, bool denoise) {
    const auto start = std::chrono::steady_clock::now();
    try {
      const TransitionMatrix q = denoise ? q_for_dcic(cfg, *scene, root) : TransitionMatrix::identity(2);
      const auto fit = linear::fit(lc, scene->noisy_source, target, q);
      fill_fit(rec, fit, *scene, q.matrix());
    } catch (const std::exception& e) {
      mark_failed(rec, e.what());
    }
    rec.wall_time_s = cfg.record_timing ? seconds_since(start) : 0.0;
  };
  run_method(dcic_rec, true);
  run_method(cic_rec, false);
  return {dcic_rec, cic_rec};
}

std::vector<MetricRecord> run_getars_once(const ExperimentConfig& cfg, double rho, double beta1,
                                          int n, int rep, std::uint64_t rep_seed) {
  const Rng root(rep_seed);
  MetricRecord dcic_rec = base_record(cfg, rho, beta1, n, rep, rep_seed, "dcic");
  MetricRecord cic_rec = base_record(cfg, rho, beta1, n, rep, rep_seed, "cic");
  dcic_rec.accuracy = 0.0;
  cic_rec.accuracy = 0.0;
  std::optional<Scene> scene;
  try {
    scene.emplace(make_scene(cfg, rho, beta1, n, root, true));
  } catch (const std::exception& e) {
    mark_failed(dcic_rec, e.what());
    mark_failed(cic_rec, e.what());
    return {dcic_rec, cic_rec};
  }
  const Dataset target = scene->target.unlabeled();

  const auto run_method = [&](MetricRecord& rec, bool denoise) {
    const auto start = std::chrono::steady_clock::now();
    try {
      const TransitionMatrix q = denoise ? q_for_dcic(cfg, *scene, root) : TransitionMatrix::identity(2);
      linear::LinearFitConfig lc = cfg.linear;
      lc.mode = denoise ? linear::FitMode::dcic : linear::FitMode::cic_baseline;
      lc.d_prime = cfg.getars_d_prime;
      lc.seed = root.split(kFit).seed();
      const auto fit = linear::fit(lc, scene->noisy_source, target, q);
      fill_fit(rec, fit, *scene, q.matrix());

      const Eigen::MatrixXd xs = fit.w.apply(scene->noisy_source.features());
      const Eigen::MatrixXd xt = fit.w.apply(scene->target.features());
      const Eigen::VectorXd gamma = noise::gamma_weights(fit.alpha, q, fit.noisy_prior);
      classifier::TrainConfig tc = cfg.train;
      tc.seed = root.split(kClassifier).seed();
      const auto model = classifier::train(xs, scene->noisy_source.labels(), q, gamma, tc);
      rec.accuracy = accuracy_of(classifier::predict(model, xt), scene->target.labels());
    } catch (const std::exception& e) {
      mark_failed(rec, e.what());
    }
    rec.wall_time_s = cfg.record_timing ? seconds_since(start) : 0.0;
  };
  run_method(dcic_rec, true);
  run_method(cic_rec, false);
  return {dcic_rec, cic_rec};
}

std::uint64_t repetition_seed(std::uint64_t root, std::size_t point, int rep) {
  return Rng(root).split(point).split(static_cast<std::uint64_t>(rep)).seed();
}

namespace {

template <typename Once>
std::vector<MetricRecord> sweep(const ExperimentConfig& cfg, Once once) {
  cfg.check();
  std::vector<MetricRecord> out;
  std::size_t point = 0;
  for (int n : cfg.sample_sizes) {
    for (double rho : cfg.rho_grid) {
      for (double beta1 : cfg.beta_grid) {
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
          auto recs = once(cfg, rho, beta1, n, rep, repetition_seed(cfg.seed, point, rep));
          out.insert(out.end(), recs.begin(), recs.end());
        }
        ++point;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<MetricRecord> run_tars(const ExperimentConfig& cfg) { return sweep(cfg, run_tars_once); }

std::vector<MetricRecord> run_getars(const ExperimentConfig& cfg) {
  return sweep(cfg, run_getars_once);
}

std::vector<MetricRecord> run(const ExperimentConfig& cfg) {
  return cfg.scenario == Scenario::getars_accuracy ? run_getars(cfg) : run_tars(cfg);
}

std::string format_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    os << r.scenario << ',' << r.rep << ',' << r.seed << ',' << format_double(r.rho) << ','
       << format_double(r.beta1) << ',' << r.n_source << ',' << r.n_target << ',' << r.method
       << ',' << format_double(r.beta_error) << ',' << format_double(r.alpha_error) << ','
       << (r.accuracy ? format_double(*r.accuracy) : std::string()) << ','
       << format_double(r.wall_time_s) << '\n';
  }
  return os.str();
}

json to_json(const MetricRecord& r) {
  json j{{"scenario", r.scenario},
         {"rep", r.rep},
         {"seed", r.seed},
         {"rho", r.rho},
         {"beta1", r.beta1},
         {"n_source", r.n_source},
         {"n_target", r.n_target},
         {"method", r.method},
         {"converged", r.converged},
         {"orthonormality_error", r.orthonormality_error},
         {"simplex_error", r.simplex_error},
         {"trace_violations", r.trace_violations}};
  // NaN has no JSON spelling; failed metrics are null
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  j["beta_error"] = num(r.beta_error);
  j["alpha_error"] = num(r.alpha_error);
  j["accuracy"] = r.accuracy ? num(*r.accuracy) : json(nullptr);
  j["wall_time_s"] = r.wall_time_s;
  if (r.alpha.size() > 0) j["alpha"] = vector_to_json(r.alpha);
  if (r.true_target_prior.size() > 0) j["true_target_prior"] = vector_to_json(r.true_target_prior);
  if (r.source_prior_estimate.size() > 0) {
    j["source_prior_estimate"] = vector_to_json(r.source_prior_estimate);
  }
  if (r.q_used.size() > 0) j["q_used"] = matrix_to_json(r.q_used);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

void emit_results(const std::vector<MetricRecord>& records, const ExperimentConfig& cfg,
                  const std::filesystem::path& path) {
  const auto write = [](const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << body;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + p.string());
  };
  write(path, format_csv(records));

  json sidecar{{"config", to_json(cfg)}, {"records", json::array()}};
  for (const auto& r : records) sidecar["records"].push_back(to_json(r));
  write(std::filesystem::path(path.string() + ".json"), sidecar.dump(2) + "\n");
}

std::vector<MetricRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::invalid_argument("parse_csv: missing or unexpected header");
  }
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 12) throw std::invalid_argument("parse_csv: expected 12 columns");
    MetricRecord r;
    r.scenario = cells[0];
    r.rep = parse_int<int>(cells[1]);
    r.seed = parse_int<std::uint64_t>(cells[2]);
    r.rho = parse_double(cells[3]);
    r.beta1 = parse_double(cells[4]);
    r.n_source = parse_int<int>(cells[5]);
    r.n_target = parse_int<int>(cells[6]);
    r.method = cells[7];
    r.beta_error = parse_double(cells[8]);
    r.alpha_error = parse_double(cells[9]);
    if (!cells[10].empty()) r.accuracy = parse_double(cells[10]);
    r.wall_time_s = parse_double(cells[11]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dcic::harness
