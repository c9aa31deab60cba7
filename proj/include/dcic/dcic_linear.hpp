#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dcic/domain_model.hpp"
#include "dcic/kernels.hpp"
#include "dcic/noise_adapt.hpp"

namespace dcic::linear {

// dcic:          G built from the supplied Q.
// cic_baseline:  noise-ignorant baseline, Q replaced by the identity.
// tars_fixed_w:  W pinned to the identity (target shift only), alpha fitted.
enum class FitMode { dcic, cic_baseline, tars_fixed_w };

std::string to_string(FitMode mode);
FitMode fit_mode_from_string(const std::string& s);

struct LinearFitConfig {
  int d_prime = 1;
  int max_outer_iters = 30;
  int w_cg_iters = 5;
  double alpha_tol = 1e-7;      // KKT residual for the alpha QP
  double objective_tol = 1e-9;  // outer-loop convergence on objective change
  FitMode mode = FitMode::dcic;
  std::uint64_t seed = 0;

  void check(Eigen::Index d) const;
};

struct LinearFitResult {
  Projection w;
  ClassPrior alpha;
  std::vector<double> objective_trace;
  bool converged = false;
  double sigma = 0.0;
  ClassPrior noisy_prior;         // empirical noisy source prior
  ClassPrior source_clean_prior;  // noisy prior pushed through Q^-1 (or itself for CIC)
  int outer_iterations = 0;
  int line_search_stalls = 0;
};

nlohmann::json to_json(const LinearFitResult& r, const LinearFitConfig& cfg);
// Reads the "w" member written by to_json.
Eigen::MatrixXd projection_from_json(const nlohmann::json& fit);

// Denoising MMD between the G alpha reweighted source and the target, both
// projected by w (any d x d' matrix; orthonormality is not required here).
double objective(const Eigen::MatrixXd& w, const ClassPrior& alpha, const Dataset& source,
                 const Dataset& target, const noise::GMatrix& g, double sigma);

// objective(alpha) = alpha^T a alpha - 2 b^T alpha + constant for fixed w.
struct QpTerms {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  double constant = 0.0;

  [[nodiscard]] double value(const Eigen::VectorXd& alpha) const {
    return alpha.dot(a * alpha) - 2.0 * b.dot(alpha) + constant;
  }
};

QpTerms alpha_qp_terms(const Eigen::MatrixXd& w, const Dataset& source, const Dataset& target,
                       const noise::GMatrix& g, double sigma);

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

// ||alpha - P(alpha - grad)||_inf for f = a^T A a - 2 b^T a over the simplex;
// zero exactly at a KKT point.
double kkt_residual(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& alpha);

// Minimize alpha^T a alpha - 2 b^T alpha over the simplex by accelerated
// projected gradient, then polish on the detected support. A flat objective
// (a = 0, b constant) returns the uniform prior.
ClassPrior solve_alpha_qp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol = 1e-7);

// d x d' gradient of objective() with respect to w.
Eigen::MatrixXd euclidean_grad_w(const Eigen::MatrixXd& w, const ClassPrior& alpha,
                                 const Dataset& source, const Dataset& target,
                                 const noise::GMatrix& g, double sigma);

// Nonlinear CG memory carried between Grassmann steps.
struct GrassmannState {
  Eigen::MatrixXd prev_grad;  // horizontal gradient at the previous iterate
  Eigen::MatrixXd prev_dir;
  double step = 0.0;  // last accepted step; 0 before the first step
  bool has_prev = false;

  void reset() { *this = GrassmannState{}; }
};

struct GrassmannStep {
  Eigen::MatrixXd w;
  double objective = 0.0;
  bool stalled = false;  // line search failed; w is the input unchanged
};

inline constexpr double kArmijoC1 = 1e-4;
inline constexpr int kMaxHalvings = 40;

// One Polak-Ribiere CG step on the Grassmann manifold with QR retraction and
// Armijo backtracking. f0 is the objective at w.
GrassmannStep grassmann_step(const Eigen::MatrixXd& w, double f0,
                             const Eigen::MatrixXd& euclidean_grad, GrassmannState& state,
                             const std::function<double(const Eigen::MatrixXd&)>& f);

// Q factor of a thin QR with the sign convention diag(R) >= 0.
Eigen::MatrixXd qr_retract(const Eigen::MatrixXd& m);

// Called after each accepted block update.
using FitObserver = std::function<void(const Eigen::MatrixXd& w, const ClassPrior& alpha)>;

// Alternating minimization: alpha by QP, then W by Grassmann CG. Bandwidth is
// the median pairwise distance of the pooled raw features, fixed for the fit.
LinearFitResult fit(const LinearFitConfig& config, const Dataset& noisy_source,
                    const Dataset& target, const TransitionMatrix& q,
                    const FitObserver& observer = {});

}  // namespace dcic::linear
