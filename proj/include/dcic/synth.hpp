#pragma once

#include <Eigen/Core>

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dcic/domain_model.hpp"
#include "dcic/rng.hpp"

namespace dcic::synth {

// Gaussian mixture with one component per class.
struct GmmSpec {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  ClassPrior priors;

  [[nodiscard]] int num_classes() const { return static_cast<int>(means.size()); }
  [[nodiscard]] Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  // Throws if shapes disagree or a covariance is not symmetric PSD.
  void check() const;
};

// Per-class, per-coordinate affine map x -> scale .* x + shift.
struct LocationScale {
  std::vector<Eigen::VectorXd> shift;
  std::vector<Eigen::VectorXd> scale;

  static LocationScale identity(int c, Eigen::Index d);
  void check() const;
};

inline constexpr double kMeanHalfWidth = 0.25;
inline constexpr double kWishartScale = 2.0;
inline constexpr double kWishartDof = 7.0;

// Draw from W(scale, dof) by the Bartlett decomposition.
Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, Rng& rng);

// Means ~ U(-0.25, 0.25) entrywise, covariances ~ W(2 I_d, 7), uniform priors.
GmmSpec sample_gmm_spec(int c, Eigen::Index d, Rng& rng);

// n iid draws; clean labels are the component indices.
Dataset sample_dataset(const GmmSpec& spec, Eigen::Index n, Rng& rng);

// Shift ~ U(lo, hi) and scale ~ U(lo, hi) per class and coordinate.
struct LocationScaleRanges {
  double shift_lo = -0.5;
  double shift_hi = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.25;
};
LocationScale sample_location_scale(int c, Eigen::Index d, Rng& rng,
                                    const LocationScaleRanges& ranges = {});

Dataset apply_location_scale(const Dataset& data, const LocationScale& t);

// Replace each clean label i by a draw from row i of q. Features are copied
// unchanged.
Dataset flip_labels(const Dataset& data, const TransitionMatrix& q, Rng& rng);

// n draws with replacement whose labels follow the target prior: a class is
// drawn from the prior, then a sample uniformly among rows carrying it.
Dataset resample_by_prior(const Dataset& data, const ClassPrior& target, Eigen::Index n,
                          Rng& rng);

// Draws n Gaussian vectors via a Cholesky factor of cov (one 1e-10 I retry).
Eigen::MatrixXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                Eigen::Index n, Rng& rng);

nlohmann::json to_json(const GmmSpec& spec);
nlohmann::json to_json(const LocationScale& t);
GmmSpec gmm_spec_from_json(const nlohmann::json& j);
LocationScale location_scale_from_json(const nlohmann::json& j);

}  // namespace dcic::synth
