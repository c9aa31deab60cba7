#include "dcic/noise_adapt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcic::noise {

namespace {

constexpr double kClampTol = 1e-6;

void require_size(int got, int want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": size " + std::to_string(got) +
                                " != " + std::to_string(want));
  }
}

}  // namespace

GMatrix::GMatrix(Eigen::MatrixXd class_rows, std::vector<Label> noisy_labels)
    : rows_(std::move(class_rows)), labels_(std::move(noisy_labels)) {
  if (rows_.rows() != rows_.cols()) throw std::invalid_argument("G class rows must be c x c");
  for (Label y : labels_) {
    if (y < 0 || y >= rows_.rows()) throw std::invalid_argument("G: noisy label out of range");
  }
}

Eigen::MatrixXd GMatrix::dense() const {
  Eigen::MatrixXd g(num_samples(), num_classes());
  for (Eigen::Index k = 0; k < num_samples(); ++k) {
    g.row(k) = rows_.row(labels_[static_cast<std::size_t>(k)]);
  }
  return g;
}

Eigen::VectorXd GMatrix::class_weights(const Eigen::VectorXd& alpha) const {
  require_size(static_cast<int>(alpha.size()), num_classes(), "G class weights");
  return rows_ * alpha;
}

Eigen::VectorXd GMatrix::sample_weights(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd per_class = class_weights(alpha);
  Eigen::VectorXd w(num_samples());
  for (Eigen::Index k = 0; k < num_samples(); ++k) {
    w(k) = per_class(labels_[static_cast<std::size_t>(k)]);
  }
  return w;
}

ClassPrior clean_prior_from_noisy(const ClassPrior& noisy_prior, const TransitionMatrix& q) {
  require_size(noisy_prior.size(), q.size(), "clean_prior_from_noisy");
  Eigen::VectorXd p = (noisy_prior.values().transpose() * q.inverse()).transpose();
  if (p.minCoeff() < -kClampTol) {
    throw std::invalid_argument(
        "clean_prior_from_noisy: noisy prior is inconsistent with Q (clean prior entry " +
        std::to_string(p.minCoeff()) + ")");
  }
  p = p.cwiseMax(0.0);
  return ClassPrior(p / p.sum());
}

ClassPrior noisy_prior_from_clean(const ClassPrior& clean_prior, const TransitionMatrix& q) {
  require_size(clean_prior.size(), q.size(), "noisy_prior_from_clean");
  Eigen::VectorXd p = (clean_prior.values().transpose() * q.matrix()).transpose();
  return ClassPrior(p / p.sum());
}

ClassRatio beta_from_beta_rho(const TransitionMatrix& q, const ClassRatio& beta_rho) {
  require_size(beta_rho.size(), q.size(), "beta_from_beta_rho");
  return ClassRatio(q.matrix() * beta_rho.values());
}

GMatrix build_g_matrix(const TransitionMatrix& q, const ClassPrior& clean_prior,
                       const std::vector<Label>& noisy_labels) {
  require_size(clean_prior.size(), q.size(), "build_g_matrix");
  if (clean_prior.values().minCoeff() <= 0.0) {
    throw std::invalid_argument("build_g_matrix: clean prior has an empty class");
  }
  Eigen::MatrixXd rows = q.inverse();
  for (Eigen::Index j = 0; j < rows.cols(); ++j) rows.col(j) /= clean_prior[static_cast<int>(j)];
  return GMatrix(std::move(rows), noisy_labels);
}

Eigen::VectorXd gamma_weights(const ClassPrior& alpha, const TransitionMatrix& q,
                              const ClassPrior& noisy_prior) {
  require_size(alpha.size(), q.size(), "gamma_weights");
  require_size(noisy_prior.size(), q.size(), "gamma_weights");
  if (noisy_prior.values().minCoeff() <= 0.0) {
    throw std::invalid_argument("gamma_weights: noisy prior has an empty class");
  }
  const Eigen::VectorXd target_noisy = q.matrix().transpose() * alpha.values();
  return target_noisy.cwiseQuotient(noisy_prior.values());
}

Eigen::MatrixXd estimate_transition_anchor(const Eigen::MatrixXd& posteriors, double percentile) {
  const Eigen::Index m = posteriors.rows();
  const Eigen::Index c = posteriors.cols();
  if (m == 0 || c == 0) throw std::invalid_argument("estimate_transition_anchor: no posteriors");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw std::invalid_argument("estimate_transition_anchor: percentile must lie in (0, 100]");
  }
  if (!posteriors.allFinite() || posteriors.minCoeff() < -1e-9) {
    throw std::invalid_argument("estimate_transition_anchor: posteriors must be probabilities");
  }
  // rank of the anchor among ascending column values
  const auto rank = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::ceil(percentile / 100.0 * static_cast<double>(m))) - 1, 0,
      m - 1);

  Eigen::MatrixXd q(c, c);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index k = 0; k < m; ++k) order[static_cast<std::size_t>(k)] = k;
    // ties resolved by row index so the anchor is deterministic
    std::nth_element(order.begin(), order.begin() + rank, order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                       const double va = posteriors(a, i);
                       const double vb = posteriors(b, i);
                       return va < vb || (va == vb && a < b);
                     });
    const Eigen::Index anchor = order[static_cast<std::size_t>(rank)];
    Eigen::VectorXd row = posteriors.row(anchor).transpose().cwiseMax(0.0);
    const double s = row.sum();
    if (!(s > 0.0)) throw std::invalid_argument("estimate_transition_anchor: zero posterior row");
    q.row(i) = (row / s).transpose();
  }
  return q;
}

}  // namespace dcic::noise
