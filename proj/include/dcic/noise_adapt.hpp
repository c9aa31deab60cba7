#pragma once

#include <Eigen/Core>

#include <vector>

#include "dcic/domain_model.hpp"

namespace dcic::noise {

// Per-sample reweighting matrix. Row k is g_i for the noisy label i of
// sample k, with g_i[j] = (Q^-1)_{ij} / P^S(Y = j). Stored compactly as the
// c x c matrix of g_i rows plus the label vector.
class GMatrix {
 public:
  GMatrix(Eigen::MatrixXd class_rows, std::vector<Label> noisy_labels);

  // c x c; row i is g_i.
  [[nodiscard]] const Eigen::MatrixXd& class_rows() const noexcept { return rows_; }
  [[nodiscard]] const std::vector<Label>& noisy_labels() const noexcept { return labels_; }
  [[nodiscard]] int num_classes() const noexcept { return static_cast<int>(rows_.rows()); }
  [[nodiscard]] Eigen::Index num_samples() const noexcept {
    return static_cast<Eigen::Index>(labels_.size());
  }

  // Materialized m x c matrix G.
  [[nodiscard]] Eigen::MatrixXd dense() const;
  // Per noisy class weights beta_rho = (g_i . alpha)_i.
  [[nodiscard]] Eigen::VectorXd class_weights(const Eigen::VectorXd& alpha) const;
  // Per sample weights G alpha.
  [[nodiscard]] Eigen::VectorXd sample_weights(const Eigen::VectorXd& alpha) const;

 private:
  Eigen::MatrixXd rows_;
  std::vector<Label> labels_;
};

// Solve p_clean Q = p_noisy for p_clean. Entries in [-1e-6, 0) are clamped to
// zero and the result renormalized; anything more negative is an error.
ClassPrior clean_prior_from_noisy(const ClassPrior& noisy_prior, const TransitionMatrix& q);

// p_noisy = p_clean Q.
ClassPrior noisy_prior_from_clean(const ClassPrior& clean_prior, const TransitionMatrix& q);

// beta = Q beta_rho.
ClassRatio beta_from_beta_rho(const TransitionMatrix& q, const ClassRatio& beta_rho);

GMatrix build_g_matrix(const TransitionMatrix& q, const ClassPrior& clean_prior,
                       const std::vector<Label>& noisy_labels);

// gamma_i = (alpha^T Q_{:,i}) / p_noisy_i, the ratio of target to source
// noisy-label marginals.
Eigen::VectorXd gamma_weights(const ClassPrior& alpha, const TransitionMatrix& q,
                              const ClassPrior& noisy_prior);

inline constexpr double kDefaultAnchorPercentile = 97.0;

// Anchor-point estimate of Q from estimated noisy posteriors (rows of an
// m x c matrix). For each class i the anchor is the sample sitting at the
// given upper percentile of column i; row i of the estimate is that sample's
// posterior, renormalized. Not validated: degenerate estimates are returned
// as-is so the caller can run TransitionMatrix::validate.
Eigen::MatrixXd estimate_transition_anchor(const Eigen::MatrixXd& posteriors,
                                           double percentile = kDefaultAnchorPercentile);

}  // namespace dcic::noise
