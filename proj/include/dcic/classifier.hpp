#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dcic/domain_model.hpp"
#include "dcic/rng.hpp"

namespace dcic::classifier {

// input -> ReLU hidden layer -> softmax over c classes.
struct MlpModel {
  Eigen::MatrixXd hidden_weights;  // d' x h
  Eigen::VectorXd hidden_bias;     // h
  Eigen::MatrixXd output_weights;  // h x c
  Eigen::VectorXd output_bias;     // c

  [[nodiscard]] Eigen::Index input_dim() const { return hidden_weights.rows(); }
  [[nodiscard]] Eigen::Index hidden_units() const { return hidden_weights.cols(); }
  [[nodiscard]] int num_classes() const { return static_cast<int>(output_weights.cols()); }

  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases likewise.
  static MlpModel init(Eigen::Index input_dim, Eigen::Index hidden_units, int num_classes,
                       Rng& rng);
  void check() const;
};

// Same shapes as MlpModel; used for gradients.
using MlpGrads = MlpModel;

struct TrainConfig {
  int hidden_units = 64;
  double learning_rate = 0.1;
  int epochs = 100;
  int batch_size = 100;
  double l2_coeff = 0.0;  // weight decay 0.5 * l2 * ||W||^2 on both weight matrices
  bool lr_decay = false;  // rate * (1 + 1e-4 t)^-0.75 at iteration t
  std::uint64_t seed = 0;

  void check() const;
  [[nodiscard]] double rate_at(long long iteration) const;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Softmax outputs, one row per sample.
Eigen::MatrixXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& features);

// argmax of the uncorrected softmax head; ties go to the smaller index.
std::vector<Label> predict(const MlpModel& model, const Eigen::MatrixXd& features);

struct LossResult {
  double loss = 0.0;
  MlpGrads grads;
  bool clamped = false;  // some corrected probability hit the 1e-12 floor
};

// -gamma[y] * log((Q^T f(x))_y) for one sample, with its gradient.
LossResult forward_loss(const MlpModel& model, const Eigen::VectorXd& x, Label noisy_label,
                        const TransitionMatrix& q, const Eigen::VectorXd& gamma);

// Batch mean of forward_loss plus 0.5 * l2 * ||W||^2, and its gradient.
LossResult batch_forward_loss(const MlpModel& model, const Eigen::MatrixXd& features,
                              const std::vector<Label>& noisy_labels, const TransitionMatrix& q,
                              const Eigen::VectorXd& gamma, double l2_coeff);

// Mean gamma-weighted cross-entropy without the Q^T correction.
double reweighted_risk(const MlpModel& model, const Eigen::MatrixXd& features,
                       const std::vector<Label>& noisy_labels, const Eigen::VectorXd& gamma);

// Hidden-layer responses, one row per sample.
Eigen::MatrixXd hidden_responses(const MlpModel& model, const Eigen::MatrixXd& features);

// Backpropagate dLoss/dLogits (rows per sample) plus an optional extra
// dLoss/dHidden into parameter gradients. Shared with the joint model.
MlpGrads backprop(const MlpModel& model, const Eigen::MatrixXd& features,
                  const Eigen::MatrixXd& hidden_pre, const Eigen::MatrixXd& d_logits,
                  const Eigen::MatrixXd* d_hidden_extra);

void apply_update(MlpModel& model, const MlpGrads& grads, double rate);

// Shuffled mini-batch order for one epoch.
std::vector<std::vector<Eigen::Index>> batch_schedule(Eigen::Index n, int batch_size, Rng& rng);

// Seeded sub-streams used by train(); the joint trainer uses the same ones so
// the two agree when the MMD term is switched off.
struct TrainStreams {
  Rng init;
  Rng shuffle;
  Rng target_shuffle;
  explicit TrainStreams(std::uint64_t seed)
      : init(Rng(seed).split(0)), shuffle(Rng(seed).split(1)), target_shuffle(Rng(seed).split(2)) {}
};

// Mini-batch SGD on the gamma-weighted forward-corrected risk. Throws
// std::runtime_error on a non-finite loss.
MlpModel train(const Eigen::MatrixXd& features, const std::vector<Label>& noisy_labels,
               const TransitionMatrix& q, const Eigen::VectorXd& gamma, const TrainConfig& cfg,
               std::vector<double>* epoch_losses = nullptr);

nlohmann::json to_json(const MlpModel& model);
MlpModel model_from_json(const nlohmann::json& j);
void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace dcic::classifier
