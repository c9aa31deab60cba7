#include "dcic/dcic_linear.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dcic/rng.hpp"

namespace dcic::linear {

namespace {

void check_shapes(const Eigen::MatrixXd& w, const Dataset& source, const Dataset& target,
                  const noise::GMatrix& g) {
  if (!source.has_labels()) throw std::invalid_argument("source must carry noisy labels");
  if (w.rows() != source.dim() || w.rows() != target.dim()) {
    throw std::invalid_argument("projection rows do not match feature dimension");
  }
  if (g.num_samples() != source.rows() || g.num_classes() != source.num_classes()) {
    throw std::invalid_argument("G does not match the source sample");
  }
  if (source.rows() == 0 || target.rows() == 0) throw std::invalid_argument("empty sample");
}

// sum_{a,b} wa_a wb_b k(pa_a, pb_b) (xa_a - xb_b)(xa_a - xb_b)^T over all
// ordered pairs, streamed one row of a at a time.
Eigen::MatrixXd pair_moment(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& pa,
                            const Eigen::VectorXd& wa, const Eigen::MatrixXd& xb,
                            const Eigen::MatrixXd& pb, const Eigen::VectorXd& wb, double sigma) {
  const Eigen::Index na = xa.rows();
  const Eigen::Index nb = xb.rows();
  const Eigen::Index d = xa.cols();
  const Eigen::Index dp = pa.cols();
  const Eigen::MatrixXd pat = pa.transpose();
  const Eigen::MatrixXd pbt = pb.transpose();
  const double inv = 1.0 / (2.0 * sigma * sigma);

  Eigen::VectorXd r(nb);
  Eigen::VectorXd colsum = Eigen::VectorXd::Zero(nb);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index a = 0; a < na; ++a) {
    const double* p = pat.col(a).data();
    for (Eigen::Index b = 0; b < nb; ++b) {
      const double* q = pbt.col(b).data();
      double s = 0.0;
      for (Eigen::Index k = 0; k < dp; ++k) {
        const double diff = p[k] - q[k];
        s += diff * diff;
      }
      r(b) = wa(a) * wb(b) * std::exp(-s * inv);
    }
    colsum += r;
    const double s_a = r.sum();
    const Eigen::VectorXd v_a = xb.transpose() * r;
    const Eigen::VectorXd x_a = xa.row(a).transpose();
    m.noalias() += s_a * x_a * x_a.transpose();
    m.noalias() -= x_a * v_a.transpose() + v_a * x_a.transpose();
  }
  m.noalias() += xb.transpose() * colsum.asDiagonal() * xb;
  return m;
}

}  // namespace

std::string to_string(FitMode mode) {
  switch (mode) {
    case FitMode::dcic: return "dcic";
    case FitMode::cic_baseline: return "cic_baseline";
    case FitMode::tars_fixed_w: return "tars_fixed_w";
  }
  return "unknown";
}

FitMode fit_mode_from_string(const std::string& s) {
  if (s == "dcic") return FitMode::dcic;
  if (s == "cic_baseline" || s == "cic") return FitMode::cic_baseline;
  if (s == "tars_fixed_w" || s == "tars") return FitMode::tars_fixed_w;
  throw std::invalid_argument("unknown fit mode '" + s + "'");
}

void LinearFitConfig::check(Eigen::Index d) const {
  if (d_prime < 1 || d_prime > d) {
    throw std::invalid_argument("d_prime must lie in 1.." + std::to_string(d));
  }
  if (mode == FitMode::tars_fixed_w && d_prime != d) {
    throw std::invalid_argument("tars_fixed_w uses W = I and needs d_prime == d");
  }
  if (max_outer_iters < 1 || w_cg_iters < 1) {
    throw std::invalid_argument("iteration counts must be positive");
  }
  if (!(alpha_tol > 0.0) || !(objective_tol > 0.0)) {
    throw std::invalid_argument("tolerances must be positive");
  }
}

nlohmann::json to_json(const LinearFitResult& r, const LinearFitConfig& cfg) {
  const Eigen::MatrixXd& w = r.w.matrix();
  std::vector<double> w_row_major;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w_row_major.push_back(w(i, j));
  }
  return {
      {"alpha", vector_to_json(r.alpha.values())},
      {"w", {{"rows", w.rows()}, {"cols", w.cols()}, {"data", w_row_major}}},
      {"objective_trace", r.objective_trace},
      {"converged", r.converged},
      {"sigma", r.sigma},
      {"noisy_prior", vector_to_json(r.noisy_prior.values())},
      {"source_clean_prior", vector_to_json(r.source_clean_prior.values())},
      {"outer_iterations", r.outer_iterations},
      {"config",
       {{"d_prime", cfg.d_prime},
        {"max_outer_iters", cfg.max_outer_iters},
        {"w_cg_iters", cfg.w_cg_iters},
        {"alpha_tol", cfg.alpha_tol},
        {"objective_tol", cfg.objective_tol},
        {"mode", to_string(cfg.mode)},
        {"seed", cfg.seed}}},
  };
}

Eigen::MatrixXd projection_from_json(const nlohmann::json& fit) {
  const auto& j = fit.at("w");
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::invalid_argument("fit JSON: w shape does not match its data");
  }
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) w(i, k) = data[static_cast<std::size_t>(i * cols + k)];
  }
  return w;
}

QpTerms alpha_qp_terms(const Eigen::MatrixXd& w, const Dataset& source, const Dataset& target,
                       const noise::GMatrix& g, double sigma) {
  check_shapes(w, source, target, g);
  const auto sums = kernels::class_kernel_sums(source.features() * w, source.labels(),
                                               source.num_classes(), target.features() * w, sigma);
  const auto m = static_cast<double>(source.rows());
  const auto n = static_cast<double>(target.rows());
  const Eigen::MatrixXd& gc = g.class_rows();
  QpTerms t;
  t.a = gc.transpose() * sums.ss * gc / (m * m);
  t.a = 0.5 * (t.a + t.a.transpose()).eval();
  t.b = gc.transpose() * sums.ts / (m * n);
  t.constant = sums.tt / (n * n);
  return t;
}

double objective(const Eigen::MatrixXd& w, const ClassPrior& alpha, const Dataset& source,
                 const Dataset& target, const noise::GMatrix& g, double sigma) {
  check_shapes(w, source, target, g);
  const auto sums = kernels::class_kernel_sums(source.features() * w, source.labels(),
                                               source.num_classes(), target.features() * w, sigma);
  const auto m = static_cast<double>(source.rows());
  const auto n = static_cast<double>(target.rows());
  const Eigen::VectorXd v = g.class_weights(alpha.values());
  return v.dot(sums.ss * v) / (m * m) - 2.0 * sums.ts.dot(v) / (m * n) + sums.tt / (n * n);
}

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index c = v.size();
  std::vector<double> u(v.data(), v.data() + c);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < c; ++i) {
    cumsum += u[static_cast<std::size_t>(i)];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  Eigen::VectorXd out = (v.array() - theta).cwiseMax(0.0);
  // keep the sum at one to rounding
  const double s = out.sum();
  if (s > 0.0) out /= s;
  return out;
}

double kkt_residual(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd grad = 2.0 * (a * alpha - b);
  return (alpha - project_to_simplex(alpha - grad)).cwiseAbs().maxCoeff();
}

ClassPrior solve_alpha_qp(const Eigen::MatrixXd& a_in, const Eigen::VectorXd& b, double tol) {
  const Eigen::Index c = b.size();
  if (c == 0 || a_in.rows() != c || a_in.cols() != c) {
    throw std::invalid_argument("solve_alpha_qp: A must be c x c with c = len(b)");
  }
  if (!a_in.allFinite() || !b.allFinite()) throw std::invalid_argument("solve_alpha_qp: non-finite input");
  const double scale = std::max(1.0, a_in.cwiseAbs().maxCoeff());
  if ((a_in - a_in.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument("solve_alpha_qp: A is not symmetric");
  }
  if (c == 1) return ClassPrior(Eigen::VectorXd::Ones(1));
  const Eigen::MatrixXd a = 0.5 * (a_in + a_in.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const double lipschitz = 2.0 * std::max(es.eigenvalues().maxCoeff(), 0.0);
  const auto value = [&](const Eigen::VectorXd& x) { return x.dot(a * x) - 2.0 * b.dot(x); };

  Eigen::VectorXd x = Eigen::VectorXd::Constant(c, 1.0 / static_cast<double>(c));
  if (kkt_residual(a, b, x) <= tol) return ClassPrior(x);

  // A linear objective still needs a finite step; use the gradient scale.
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz
                                      : 1.0 / std::max(2.0 * b.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd y = x;
  double t = 1.0;
  double fx = value(x);
  for (int it = 0; it < 100000; ++it) {
    const Eigen::VectorXd grad = 2.0 * (a * y - b);
    Eigen::VectorXd x_next = project_to_simplex(y - step * grad);
    const double f_next = value(x_next);
    if (f_next > fx) {
      // momentum overshot; restart from the last iterate
      y = x;
      t = 1.0;
      x_next = project_to_simplex(x - step * 2.0 * (a * x - b));
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_next + ((t - 1.0) / t_next) * (x_next - x);
    x = x_next;
    fx = value(x);
    t = t_next;
    if (kkt_residual(a, b, x) <= tol) break;
  }

  // Polish: solve the equality-constrained problem on the detected support.
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < c; ++i) {
    if (x(i) > 1e-10) support.push_back(i);
  }
  const auto s = static_cast<Eigen::Index>(support.size());
  if (s >= 1) {
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
    Eigen::VectorXd rhs(s + 1);
    for (Eigen::Index i = 0; i < s; ++i) {
      for (Eigen::Index j = 0; j < s; ++j) kkt(i, j) = 2.0 * a(support[i], support[j]);
      kkt(i, s) = 1.0;
      kkt(s, i) = 1.0;
      rhs(i) = 2.0 * b(support[i]);
    }
    rhs(s) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.isInvertible()) {
      const Eigen::VectorXd sol = lu.solve(rhs);
      Eigen::VectorXd polished = Eigen::VectorXd::Zero(c);
      for (Eigen::Index i = 0; i < s; ++i) polished(support[i]) = sol(i);
      if (polished.minCoeff() >= 0.0 && polished.allFinite()) {
        polished /= polished.sum();
        if (kkt_residual(a, b, polished) < kkt_residual(a, b, x)) x = polished;
      }
    }
  }
  return ClassPrior(project_to_simplex(x));
}

Eigen::MatrixXd euclidean_grad_w(const Eigen::MatrixXd& w, const ClassPrior& alpha,
                                 const Dataset& source, const Dataset& target,
                                 const noise::GMatrix& g, double sigma) {
  check_shapes(w, source, target, g);
  const auto m = static_cast<double>(source.rows());
  const auto n = static_cast<double>(target.rows());
  const Eigen::MatrixXd& xs = source.features();
  const Eigen::MatrixXd& xt = target.features();
  const Eigen::MatrixXd ps = xs * w;
  const Eigen::MatrixXd pt = xt * w;
  const Eigen::VectorXd ws = g.sample_weights(alpha.values());
  const Eigen::VectorXd ones_t = Eigen::VectorXd::Ones(target.rows());

  Eigen::MatrixXd moment = pair_moment(xs, ps, ws, xs, ps, ws, sigma) / (m * m);
  moment -= 2.0 * pair_moment(xt, pt, ones_t, xs, ps, ws, sigma) / (m * n);
  moment += pair_moment(xt, pt, ones_t, xt, pt, ones_t, sigma) / (n * n);
  return -(moment * w) / (sigma * sigma);
}

Eigen::MatrixXd qr_retract(const Eigen::MatrixXd& m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

GrassmannStep grassmann_step(const Eigen::MatrixXd& w, double f0,
                             const Eigen::MatrixXd& euclidean_grad, GrassmannState& state,
                             const std::function<double(const Eigen::MatrixXd&)>& f) {
  const auto horizontal = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return x - w * (w.transpose() * x);
  };
  const Eigen::MatrixXd gh = horizontal(euclidean_grad);
  const double gnorm2 = gh.squaredNorm();
  if (!(gnorm2 > 0.0) || gnorm2 <= 1e-30 * std::max(1.0, euclidean_grad.squaredNorm())) {
    return {w, f0, false};
  }

  Eigen::MatrixXd dir = -gh;
  if (state.has_prev) {
    const Eigen::MatrixXd prev_g = horizontal(state.prev_grad);
    const double denom = state.prev_grad.squaredNorm();
    const double beta = denom > 0.0 ? std::max(0.0, gh.cwiseProduct(gh - prev_g).sum() / denom) : 0.0;
    dir += beta * horizontal(state.prev_dir);
    if (dir.cwiseProduct(gh).sum() >= 0.0) dir = -gh;  // not a descent direction
  }
  const double slope = dir.cwiseProduct(gh).sum();
  const double dnorm = dir.norm();

  double t = state.step > 0.0 ? 2.0 * state.step : 1.0 / dnorm;
  t = std::min(t, 1.0 / dnorm);  // at most a unit move per step
  for (int halving = 0; halving <= kMaxHalvings; ++halving) {
    const Eigen::MatrixXd candidate = qr_retract(w + t * dir);
    const double fc = f(candidate);
    if (std::isfinite(fc) && fc <= f0 + kArmijoC1 * t * slope) {
      state.prev_grad = gh;
      state.prev_dir = dir;
      state.step = t;
      state.has_prev = true;
      return {candidate, fc, false};
    }
    t *= 0.5;
  }
  state.reset();
  return {w, f0, true};
}

LinearFitResult fit(const LinearFitConfig& config, const Dataset& noisy_source,
                    const Dataset& target, const TransitionMatrix& q,
                    const FitObserver& observer) {
  if (!noisy_source.has_labels()) throw std::invalid_argument("fit: source labels required");
  if (noisy_source.dim() != target.dim()) throw std::invalid_argument("fit: dimension mismatch");
  const Eigen::Index d = noisy_source.dim();
  const int c = noisy_source.num_classes();
  config.check(d);
  if (q.size() != c) throw std::invalid_argument("fit: transition matrix size mismatch");

  Eigen::MatrixXd pooled(noisy_source.rows() + target.rows(), d);
  pooled << noisy_source.features(), target.features();
  const double sigma = kernels::median_bandwidth(pooled);

  const TransitionMatrix q_used =
      config.mode == FitMode::cic_baseline ? TransitionMatrix::identity(c) : q;
  const ClassPrior noisy_prior = empirical_prior(noisy_source.labels(), c);
  const ClassPrior clean_prior = noise::clean_prior_from_noisy(noisy_prior, q_used);
  const noise::GMatrix g = noise::build_g_matrix(q_used, clean_prior, noisy_source.labels());

  Eigen::MatrixXd w;
  if (config.mode == FitMode::tars_fixed_w) {
    w = Eigen::MatrixXd::Identity(d, d);
  } else {
    Rng rng(config.seed);
    Eigen::MatrixXd z(d, config.d_prime);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      for (Eigen::Index i = 0; i < d; ++i) z(i, j) = rng.normal();
    }
    w = qr_retract(z);
  }

  ClassPrior alpha = ClassPrior::uniform(c);
  const auto f_of_w = [&](const Eigen::MatrixXd& wc) {
    return objective(wc, alpha, noisy_source, target, g, sigma);
  };
  double f = f_of_w(w);

  LinearFitResult result{Projection(w), alpha, {f}, false, sigma, noisy_prior, clean_prior, 0, 0};
  int consecutive_stalls = 0;
  for (int outer = 0; outer < config.max_outer_iters; ++outer) {
    result.outer_iterations = outer + 1;
    const double f_start = f;

    const QpTerms terms = alpha_qp_terms(w, noisy_source, target, g, sigma);
    const ClassPrior candidate = solve_alpha_qp(terms.a, terms.b, config.alpha_tol);
    const double f_candidate = terms.value(candidate.values());
    if (f_candidate <= f) {
      alpha = candidate;
      f = f_candidate;
    }
    result.objective_trace.push_back(f);
    if (observer) observer(w, alpha);

    if (config.mode != FitMode::tars_fixed_w) {
      GrassmannState state;
      bool moved = false;
      bool stalled = false;
      for (int it = 0; it < config.w_cg_iters; ++it) {
        const Eigen::MatrixXd egrad = euclidean_grad_w(w, alpha, noisy_source, target, g, sigma);
        const GrassmannStep step = grassmann_step(w, f, egrad, state, f_of_w);
        if (step.stalled) {
          stalled = true;
          ++result.line_search_stalls;
          break;
        }
        if (step.objective == f && step.w == w) break;  // stationary
        w = step.w;
        f = step.objective;
        moved = true;
      }
      result.objective_trace.push_back(f);
      if (observer) observer(w, alpha);
      consecutive_stalls = (stalled && !moved) ? consecutive_stalls + 1 : 0;
      if (consecutive_stalls >= 3) break;
    }

    if (f_start - f < config.objective_tol) {
      result.converged = true;
      break;
    }
  }

  result.w = Projection(w);
  result.alpha = alpha;
  return result;
}

}  // namespace dcic::linear
