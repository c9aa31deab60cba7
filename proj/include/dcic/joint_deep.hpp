#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "dcic/classifier.hpp"
#include "dcic/domain_model.hpp"

namespace dcic::joint {

// Training settings for the end-to-end model. The inherited l2_coeff is the
// regularization weight pi2; pi1 weights the denoising MMD on the hidden layer.
struct JointConfig : classifier::TrainConfig {
  double pi1 = 1.0;
  int mmd_layer = 1;           // hidden layer carrying the MMD; the MLP has one
  int alpha_update_every = 0;  // in batches; 0 means once per epoch
  int target_batch_size = 100;

  JointConfig() { l2_coeff = 1e-4; }
  [[nodiscard]] double pi2() const { return l2_coeff; }
  void check() const;
};

struct JointLoss {
  double loss = 0.0;  // risk + pi1 * mmd + pi2 * 0.5 ||W||^2
  double risk = 0.0;
  double mmd = 0.0;
  double sigma = 0.0;
  classifier::MlpGrads grads;
  bool clamped = false;
};

// Loss and gradient for one (source batch, target batch) pair. The G rows and
// gamma come from the full-sample noisy prior. sigma defaults to the median
// pairwise distance of the batch's hidden responses and is held constant in
// the gradient.
JointLoss joint_loss(const classifier::MlpModel& model, const Eigen::MatrixXd& source_batch,
                     const std::vector<Label>& noisy_labels, const Eigen::MatrixXd& target_batch,
                     const TransitionMatrix& q, const ClassPrior& alpha,
                     const ClassPrior& noisy_prior, const JointConfig& cfg,
                     std::optional<double> sigma = std::nullopt);

// Re-estimate alpha by the simplex QP on the current hidden responses.
ClassPrior update_alpha(const classifier::MlpModel& model, const Dataset& noisy_source,
                        const Dataset& target, const TransitionMatrix& q);

struct JointFitResult {
  classifier::MlpModel model;
  ClassPrior alpha;
  Eigen::VectorXd gamma;
  std::vector<double> loss_trace;  // mean batch loss per epoch
  std::vector<ClassPrior> alpha_trace;
};

// alpha starts at the clean source prior estimate (gamma = 1) and is updated
// only when pi1 > 0.
JointFitResult fit_joint(const JointConfig& cfg, const Dataset& noisy_source, const Dataset& target,
                         const TransitionMatrix& q);

}  // namespace dcic::joint
