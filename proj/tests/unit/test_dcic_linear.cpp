#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "dcic/dcic_linear.hpp"
#include "dcic/synth.hpp"
#include "test_support.hpp"

using namespace dcic;
using namespace dcic::linear;

namespace {

struct Instance {
  Dataset source;
  Dataset target;
  TransitionMatrix q;
  noise::GMatrix g;
  ClassPrior alpha;
  double sigma;
};

Instance random_instance(Rng& rng, Eigen::Index m, Eigen::Index n, int c, Eigen::Index d) {
  const Eigen::MatrixXd xs = test::random_matrix(m, d, rng);
  const Eigen::MatrixXd xt = test::random_matrix(n, d, rng) + Eigen::MatrixXd::Constant(n, d, 0.3);
  const auto y = test::random_labels(m, c, rng);
  const auto q = TransitionMatrix::validate(test::random_transition(c, rng, 0.3));
  const ClassPrior prior(0.8 * test::random_simplex(c, rng) + Eigen::VectorXd::Constant(c, 0.2 / c));
  auto g = noise::build_g_matrix(q, prior, y);
  return Instance{Dataset(xs, y, c, LabelKind::noisy), Dataset(xt), q, std::move(g),
                  ClassPrior(test::random_simplex(c, rng)), rng.uniform(0.5, 2.0)};
}

// Explicit per-sample-weight MMD with dense double loops.
double per_sample_mmd(const Eigen::MatrixXd& xs, const Eigen::VectorXd& weights,
                      const Eigen::MatrixXd& xt, double sigma) {
  const auto k = [sigma](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
  };
  const auto m = static_cast<double>(xs.rows());
  const auto n = static_cast<double>(xt.rows());
  double ss = 0.0;
  double ts = 0.0;
  double tt = 0.0;
  for (Eigen::Index a = 0; a < xs.rows(); ++a)
    for (Eigen::Index b = 0; b < xs.rows(); ++b) ss += weights(a) * weights(b) * k(xs.row(a), xs.row(b));
  for (Eigen::Index j = 0; j < xt.rows(); ++j)
    for (Eigen::Index a = 0; a < xs.rows(); ++a) ts += weights(a) * k(xt.row(j), xs.row(a));
  for (Eigen::Index i = 0; i < xt.rows(); ++i)
    for (Eigen::Index j = 0; j < xt.rows(); ++j) tt += k(xt.row(i), xt.row(j));
  return ss / (m * m) - 2.0 * ts / (m * n) + tt / (n * n);
}

// Minimum of a^T A a - 2 b^T a over the simplex by enumerating supports.
double brute_force_qp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index c = b.size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << c); ++mask) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index i = 0; i < c; ++i)
      if (mask & (1u << i)) s.push_back(i);
    const auto k = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd rhs(k + 1);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) kkt(i, j) = 2.0 * a(s[i], s[j]);
      kkt(i, k) = 1.0;
      kkt(k, i) = 1.0;
      rhs(i) = 2.0 * b(s[i]);
    }
    rhs(k) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (sol.head(k).minCoeff() < -1e-12) continue;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(c);
    for (Eigen::Index i = 0; i < k; ++i) x(s[i]) = std::max(sol(i), 0.0);
    best = std::min(best, x.dot(a * x) - 2.0 * b.dot(x));
  }
  return best;
}

}  // namespace

TEST_CASE("objective is zero for identical domains without shift") {
  Rng rng(1);
  const Eigen::MatrixXd x = test::random_matrix(12, 3, rng);
  const auto y = test::random_labels(12, 2, rng);
  const Dataset source(x, y, 2, LabelKind::noisy);
  const ClassPrior p = empirical_prior(y, 2);
  const auto g = noise::build_g_matrix(TransitionMatrix::identity(2), p, y);
  for (int k = 0; k < 5; ++k) {
    const Eigen::MatrixXd w = test::random_orthonormal(3, 1 + static_cast<Eigen::Index>(rng.below(3)), rng);
    CHECK(std::abs(objective(w, p, source, Dataset(x), g, 1.0)) <= 1e-10);
  }
}

TEST_CASE("reparametrized objective equals the explicit per-sample-weight MMD") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 10, 8, 2 + static_cast<int>(rng.below(3)), 3);
    const Eigen::MatrixXd w = test::random_orthonormal(3, 2, rng);
    const double got = objective(w, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
    const Eigen::VectorXd beta_rho = inst.g.dense() * inst.alpha.values();
    const double oracle = per_sample_mmd(inst.source.features() * w, beta_rho, inst.target.features() * w, inst.sigma);
    CHECK(std::abs(got - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("objective depends on distances over sigma only") {
  Rng rng(3);
  auto inst = random_instance(rng, 10, 9, 3, 2);
  const Eigen::MatrixXd w = test::random_orthonormal(2, 2, rng);
  const double base = objective(w, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
  const double s = 3.7;
  const double scaled = objective(w, inst.alpha, inst.source.with_features(s * inst.source.features()),
                                  Dataset(s * inst.target.features()), inst.g, s * inst.sigma);
  CHECK(std::abs(base - scaled) <= 1e-10);
}

TEST_CASE("alpha QP terms reproduce the objective") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instance(rng, 15, 11, 3, 2);
    const Eigen::MatrixXd w = test::random_orthonormal(2, 1, rng);
    const QpTerms t = alpha_qp_terms(w, inst.source, inst.target, inst.g, inst.sigma);
    CHECK((t.a - t.a.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(t.a).eigenvalues().minCoeff() >= -1e-8);
    for (int k = 0; k < 10; ++k) {
      const ClassPrior a(test::random_simplex(3, rng));
      const double direct = objective(w, a, inst.source, inst.target, inst.g, inst.sigma);
      CHECK(std::abs(t.value(a.values()) - direct) <= 1e-12 * std::max(1.0, std::abs(direct)));
    }
  }

  // c = 1: scalar terms and a forced alpha
  const Eigen::MatrixXd x = test::random_matrix(5, 2, rng);
  const std::vector<Label> zeros(5, 0);
  const auto g1 = noise::build_g_matrix(TransitionMatrix::identity(1), ClassPrior(Eigen::VectorXd::Ones(1)), zeros);
  const auto t1 = alpha_qp_terms(Eigen::MatrixXd::Identity(2, 2), Dataset(x, zeros, 1, LabelKind::noisy),
                                 Dataset(test::random_matrix(4, 2, rng)), g1, 1.0);
  CHECK(t1.a.size() == 1);
  CHECK(solve_alpha_qp(t1.a, t1.b)[0] == 1.0);

  // duplicated source rows: A keeps rank <= c and stays PSD
  Eigen::MatrixXd dup(8, 2);
  for (Eigen::Index i = 0; i < 8; ++i) dup.row(i) = x.row(0);
  const std::vector<Label> y{0, 1, 2, 0, 1, 2, 0, 1};
  const auto g3 = noise::build_g_matrix(TransitionMatrix::symmetric(3, 0.2), ClassPrior::uniform(3), y);
  const auto t3 = alpha_qp_terms(Eigen::MatrixXd::Identity(2, 2), Dataset(dup, y, 3, LabelKind::noisy),
                                 Dataset(test::random_matrix(6, 2, rng)), g3, 1.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(t3.a).eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("simplex QP solver") {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  const auto a1 = solve_alpha_qp(eye, Eigen::Vector2d(0.6, 0.4));
  CHECK(a1[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(kkt_residual(eye, Eigen::Vector2d(0.6, 0.4), a1.values()) <= 1e-7);

  const auto a2 = solve_alpha_qp(eye, Eigen::Vector2d(2.0, -1.0));
  CHECK(a2[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a2[1] == doctest::Approx(0.0));
  CHECK(kkt_residual(eye, Eigen::Vector2d(2.0, -1.0), a2.values()) <= 1e-7);

  const auto flat = solve_alpha_qp(Eigen::MatrixXd::Zero(3, 3), Eigen::VectorXd::Zero(3));
  CHECK(flat.values().isApprox(Eigen::VectorXd::Constant(3, 1.0 / 3.0)));

  Eigen::Matrix2d skew;
  skew << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(solve_alpha_qp(skew, Eigen::Vector2d(0.5, 0.5)), std::invalid_argument);
}

TEST_CASE("simplex QP matches support enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(4));
    const Eigen::MatrixXd f = test::random_matrix(c, trial % 3 == 0 ? c - 1 : c + 1, rng);
    const Eigen::MatrixXd a = f * f.transpose();
    const Eigen::VectorXd b = test::random_matrix(c, 1, rng);
    const auto alpha = solve_alpha_qp(a, b);
    const double value = alpha.values().dot(a * alpha.values()) - 2.0 * b.dot(alpha.values());
    CHECK(value <= brute_force_qp(a, b) + 1e-9 * std::max(1.0, std::abs(value)));
    CHECK(kkt_residual(a, b, alpha.values()) <= 1e-7);
    CHECK(std::abs(alpha.values().sum() - 1.0) <= 1e-9);
    CHECK(alpha.values().minCoeff() >= 0.0);
  }
}

TEST_CASE("Euclidean W gradient matches central differences") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 8, 8, 2, 3);
    const Eigen::MatrixXd w = test::random_orthonormal(3, 2, rng);
    const auto f = [&](const Eigen::MatrixXd& wc) {
      return objective(wc, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
    };
    const Eigen::MatrixXd analytic = euclidean_grad_w(w, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
    CHECK(test::relative_max_error(analytic, test::numeric_gradient(f, w, 1e-6)) <= 1e-5);
  }
}

TEST_CASE("W gradient vanishes at the zero-discrepancy point") {
  Rng rng(7);
  const Eigen::MatrixXd x = test::random_matrix(10, 3, rng);
  const auto y = test::random_labels(10, 2, rng);
  const ClassPrior p = empirical_prior(y, 2);
  const auto g = noise::build_g_matrix(TransitionMatrix::identity(2), p, y);
  const Eigen::MatrixXd w = test::random_orthonormal(3, 2, rng);
  CHECK(euclidean_grad_w(w, p, Dataset(x, y, 2, LabelKind::noisy), Dataset(x), g, 1.2).norm() <= 1e-8);
}

TEST_CASE("duplicating the source leaves the gradient unchanged") {
  Rng rng(8);
  auto inst = random_instance(rng, 9, 7, 2, 3);
  const Eigen::MatrixXd w = test::random_orthonormal(3, 1, rng);
  Eigen::MatrixXd xs2(18, 3);
  xs2 << inst.source.features(), inst.source.features();
  std::vector<Label> y2 = inst.source.labels();
  y2.insert(y2.end(), inst.source.labels().begin(), inst.source.labels().end());
  const noise::GMatrix g2(inst.g.class_rows(), y2);
  const Eigen::MatrixXd once = euclidean_grad_w(w, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
  const Eigen::MatrixXd twice = euclidean_grad_w(w, inst.alpha, Dataset(xs2, y2, 2, LabelKind::noisy),
                                                 inst.target, g2, inst.sigma);
  CHECK((once - twice).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("Grassmann step") {
  Rng rng(9);
  auto inst = random_instance(rng, 20, 20, 2, 3);
  const auto f = [&](const Eigen::MatrixXd& wc) {
    return objective(wc, inst.alpha, inst.source, inst.target, inst.g, inst.sigma);
  };
  Eigen::MatrixXd w = test::random_orthonormal(3, 1, rng);

  GrassmannState s0;
  const auto still = grassmann_step(w, f(w), Eigen::MatrixXd::Zero(3, 1), s0, f);
  CHECK(still.w == w);
  CHECK_FALSE(still.stalled);

  GrassmannState state;
  double fw = f(w);
  for (int k = 0; k < 10; ++k) {
    const auto step = grassmann_step(w, fw, euclidean_grad_w(w, inst.alpha, inst.source, inst.target, inst.g, inst.sigma), state, f);
    CHECK(orthonormality_error(step.w) <= 1e-8);
    if (k == 0) CHECK(step.objective < fw);
    CHECK(step.objective <= fw);
    w = step.w;
    fw = step.objective;
  }
  const Eigen::MatrixXd r = qr_retract(test::random_matrix(4, 2, rng));
  CHECK(orthonormality_error(r) <= 1e-12);
}

TEST_CASE("fit invariants and degenerate modes") {
  Rng rng(10);
  Rng spec_rng = rng.split(0);
  auto spec = synth::sample_gmm_spec(2, 2, spec_rng);
  Rng s_rng = rng.split(1);
  const auto source = synth::sample_dataset(spec, 150, s_rng);
  spec.priors = ClassPrior(Eigen::Vector2d(0.3, 0.7));
  Rng t_rng = rng.split(2);
  const auto target = synth::sample_dataset(spec, 150, t_rng).unlabeled();
  const auto noisy = source.with_labels(source.labels(), LabelKind::noisy);

  LinearFitConfig cfg;
  cfg.seed = 17;
  cfg.max_outer_iters = 8;
  cfg.mode = FitMode::dcic;
  const auto a = fit(cfg, noisy, target, TransitionMatrix::identity(2));
  cfg.mode = FitMode::cic_baseline;
  const auto b = fit(cfg, noisy, target, TransitionMatrix::symmetric(2, 0.3));
  CHECK(a.alpha.values() == b.alpha.values());
  CHECK(a.w.matrix() == b.w.matrix());
  CHECK(a.objective_trace == b.objective_trace);

  cfg.mode = FitMode::dcic;
  std::size_t observed = 0;
  const auto c = fit(cfg, noisy, target, TransitionMatrix::symmetric(2, 0.2),
                     [&](const Eigen::MatrixXd& w, const ClassPrior& alpha) {
                       ++observed;
                       CHECK(orthonormality_error(w) <= 1e-8);
                       CHECK(std::abs(alpha.values().sum() - 1.0) <= 1e-9);
                     });
  CHECK(observed + 1 == c.objective_trace.size());
  for (std::size_t i = 1; i < c.objective_trace.size(); ++i) {
    CHECK(c.objective_trace[i] <= c.objective_trace[i - 1] + 1e-10);
  }

  cfg.mode = FitMode::tars_fixed_w;
  CHECK_THROWS_AS(fit(cfg, noisy, target, TransitionMatrix::identity(2)), std::invalid_argument);
  cfg.d_prime = 2;
  const auto tars = fit(cfg, noisy, target, TransitionMatrix::identity(2));
  CHECK(tars.w.matrix() == Eigen::MatrixXd::Identity(2, 2));

  const nlohmann::json j = nlohmann::json::parse(to_json(tars, cfg).dump());
  CHECK(j.at("config").at("mode") == "tars_fixed_w");
  CHECK(projection_from_json(j) == tars.w.matrix());
  CHECK(j.at("objective_trace").size() == tars.objective_trace.size());
}

TEST_CASE("QP optimality gap shrinks with the sample size") {
  // median |objective(alpha_hat) - objective(alpha_true)| over seeds, W = I, true Q
  const std::vector<Eigen::Index> sizes{200, 800, 3200};
  std::vector<double> medians;
  for (Eigen::Index n : sizes) {
    std::vector<double> gaps;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Rng root(1000 + seed);
      Rng spec_rng = root.split(0);
      auto spec = synth::sample_gmm_spec(2, 2, spec_rng);
      Rng s_rng = root.split(1);
      const auto source = synth::sample_dataset(spec, n, s_rng);
      spec.priors = ClassPrior(Eigen::Vector2d(0.3, 0.7));
      Rng t_rng = root.split(2);
      const auto target = synth::sample_dataset(spec, n, t_rng).unlabeled();
      const auto q = TransitionMatrix::symmetric(2, 0.4);
      Rng f_rng = root.split(3);
      const auto noisy = synth::flip_labels(source, q, f_rng);
      const auto clean_prior = noise::clean_prior_from_noisy(empirical_prior(noisy.labels(), 2), q);
      const auto g = noise::build_g_matrix(q, clean_prior, noisy.labels());
      Eigen::MatrixXd pooled(2 * n, 2);
      pooled << noisy.features(), target.features();
      const double sigma = kernels::median_bandwidth(pooled);
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
      const auto t = alpha_qp_terms(eye, noisy, target, g, sigma);
      const auto alpha_hat = solve_alpha_qp(t.a, t.b);
      gaps.push_back(std::abs(t.value(alpha_hat.values()) - t.value(Eigen::Vector2d(0.3, 0.7))));
    }
    std::nth_element(gaps.begin(), gaps.begin() + 5, gaps.end());
    medians.push_back(gaps[5]);
  }
  CHECK(medians[1] <= medians[0]);
  CHECK(medians[2] <= medians[1]);
}
