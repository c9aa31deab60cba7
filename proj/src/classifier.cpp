#include "dcic/classifier.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dcic::classifier {

namespace {

struct Forward {
  Eigen::MatrixXd hidden_pre;  // n x h
  Eigen::MatrixXd hidden;      // n x h
  Eigen::MatrixXd probs;       // n x c
};

Forward run_forward(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.input_dim()) {
    throw std::invalid_argument("feature dimension " + std::to_string(x.cols()) +
                                " does not match model input " +
                                std::to_string(model.input_dim()));
  }
  Forward f;
  f.hidden_pre = x * model.hidden_weights;
  f.hidden_pre.rowwise() += model.hidden_bias.transpose();
  f.hidden = f.hidden_pre.cwiseMax(0.0);
  Eigen::MatrixXd logits = f.hidden * model.output_weights;
  logits.rowwise() += model.output_bias.transpose();
  f.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    f.probs.row(i) = e / e.sum();
  }
  return f;
}

void check_labels(const std::vector<Label>& y, Eigen::Index rows, int c) {
  if (static_cast<Eigen::Index>(y.size()) != rows) {
    throw std::invalid_argument("label count does not match feature rows");
  }
  for (Label v : y) {
    if (v < 0 || v >= c) throw std::invalid_argument("label outside model classes");
  }
}

}  // namespace

MlpModel MlpModel::init(Eigen::Index input_dim, Eigen::Index hidden_units, int num_classes,
                        Rng& rng) {
  if (input_dim < 1 || hidden_units < 1 || num_classes < 1) {
    throw std::invalid_argument("MLP shapes must be positive");
  }
  MlpModel m;
  const double r1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden_units));
  m.hidden_weights.resize(input_dim, hidden_units);
  m.hidden_bias.resize(hidden_units);
  m.output_weights.resize(hidden_units, num_classes);
  m.output_bias.resize(num_classes);
  for (Eigen::Index j = 0; j < hidden_units; ++j) {
    for (Eigen::Index i = 0; i < input_dim; ++i) m.hidden_weights(i, j) = rng.uniform(-r1, r1);
  }
  for (Eigen::Index j = 0; j < hidden_units; ++j) m.hidden_bias(j) = rng.uniform(-r1, r1);
  for (Eigen::Index j = 0; j < num_classes; ++j) {
    for (Eigen::Index i = 0; i < hidden_units; ++i) m.output_weights(i, j) = rng.uniform(-r2, r2);
  }
  for (Eigen::Index j = 0; j < num_classes; ++j) m.output_bias(j) = rng.uniform(-r2, r2);
  return m;
}

void MlpModel::check() const {
  if (hidden_bias.size() != hidden_weights.cols() || output_weights.rows() != hidden_weights.cols() ||
      output_bias.size() != output_weights.cols()) {
    throw std::invalid_argument("MLP parameter shapes are inconsistent");
  }
  if (!hidden_weights.allFinite() || !hidden_bias.allFinite() || !output_weights.allFinite() ||
      !output_bias.allFinite()) {
    throw std::invalid_argument("MLP parameters are not finite");
  }
}

void TrainConfig::check() const {
  if (hidden_units < 1 || epochs < 1 || batch_size < 1) {
    throw std::invalid_argument("training counts must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (l2_coeff < 0.0) throw std::invalid_argument("l2 coefficient must be nonnegative");
}

double TrainConfig::rate_at(long long iteration) const {
  if (!lr_decay) return learning_rate;
  return learning_rate * std::pow(1.0 + 1e-4 * static_cast<double>(iteration), -0.75);
}

Eigen::MatrixXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& features) {
  return run_forward(model, features).probs;
}

std::vector<Label> predict(const MlpModel& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd p = predict_proba(model, features);
  std::vector<Label> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Label best = 0;
    for (Eigen::Index j = 1; j < p.cols(); ++j) {
      if (p(i, j) > p(i, best)) best = static_cast<Label>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Eigen::MatrixXd hidden_responses(const MlpModel& model, const Eigen::MatrixXd& features) {
  return run_forward(model, features).hidden;
}

MlpGrads backprop(const MlpModel& model, const Eigen::MatrixXd& features,
                  const Eigen::MatrixXd& hidden_pre, const Eigen::MatrixXd& d_logits,
                  const Eigen::MatrixXd* d_hidden_extra) {
  const Eigen::MatrixXd hidden = hidden_pre.cwiseMax(0.0);
  MlpGrads g;
  g.output_weights = hidden.transpose() * d_logits;
  g.output_bias = d_logits.colwise().sum().transpose();
  Eigen::MatrixXd d_hidden = d_logits * model.output_weights.transpose();
  if (d_hidden_extra != nullptr) d_hidden += *d_hidden_extra;
  const Eigen::MatrixXd d_pre = d_hidden.cwiseProduct((hidden_pre.array() > 0.0).cast<double>().matrix());
  g.hidden_weights = features.transpose() * d_pre;
  g.hidden_bias = d_pre.colwise().sum().transpose();
  return g;
}

LossResult batch_forward_loss(const MlpModel& model, const Eigen::MatrixXd& features,
                              const std::vector<Label>& noisy_labels, const TransitionMatrix& q,
                              const Eigen::VectorXd& gamma, double l2_coeff) {
  const int c = model.num_classes();
  if (q.size() != c || gamma.size() != c) {
    throw std::invalid_argument("Q and gamma must match the model's class count");
  }
  check_labels(noisy_labels, features.rows(), c);
  const Eigen::Index n = features.rows();
  if (n == 0) throw std::invalid_argument("empty batch");

  const Forward fw = run_forward(model, features);
  const Eigen::MatrixXd& qm = q.matrix();
  const Eigen::MatrixXd corrected = fw.probs * qm;  // row k is (Q^T f_k)^T

  LossResult out;
  Eigen::MatrixXd d_logits(n, c);
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Label y = noisy_labels[static_cast<std::size_t>(k)];
    const double p = corrected(k, y);
    const Eigen::RowVectorXd f = fw.probs.row(k);
    if (p < kProbabilityFloor) {
      out.clamped = true;
      total += -gamma(y) * std::log(kProbabilityFloor);
      d_logits.row(k).setZero();
      continue;
    }
    total += -gamma(y) * std::log(p);
    // dL/df_i = -gamma_y Q(i, y) / p, then through the softmax Jacobian
    const Eigen::RowVectorXd df = (-gamma(y) / p) * qm.col(y).transpose();
    d_logits.row(k) = f.cwiseProduct(df.array().matrix() - Eigen::RowVectorXd::Constant(c, f.dot(df)));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  d_logits *= inv_n;
  out.loss = total * inv_n;
  out.grads = backprop(model, features, fw.hidden_pre, d_logits, nullptr);
  if (l2_coeff > 0.0) {
    out.loss += 0.5 * l2_coeff *
                (model.hidden_weights.squaredNorm() + model.output_weights.squaredNorm());
    out.grads.hidden_weights += l2_coeff * model.hidden_weights;
    out.grads.output_weights += l2_coeff * model.output_weights;
  }
  return out;
}

LossResult forward_loss(const MlpModel& model, const Eigen::VectorXd& x, Label noisy_label,
                        const TransitionMatrix& q, const Eigen::VectorXd& gamma) {
  return batch_forward_loss(model, x.transpose(), {noisy_label}, q, gamma, 0.0);
}

double reweighted_risk(const MlpModel& model, const Eigen::MatrixXd& features,
                       const std::vector<Label>& noisy_labels, const Eigen::VectorXd& gamma) {
  const int c = model.num_classes();
  if (gamma.size() != c) throw std::invalid_argument("gamma must match the model's class count");
  check_labels(noisy_labels, features.rows(), c);
  if (features.rows() == 0) throw std::invalid_argument("empty sample");
  const Eigen::MatrixXd p = predict_proba(model, features);
  double total = 0.0;
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    const Label y = noisy_labels[static_cast<std::size_t>(k)];
    total += -gamma(y) * std::log(std::max(p(k, y), kProbabilityFloor));
  }
  return total / static_cast<double>(p.rows());
}

void apply_update(MlpModel& model, const MlpGrads& grads, double rate) {
  model.hidden_weights -= rate * grads.hidden_weights;
  model.hidden_bias -= rate * grads.hidden_bias;
  model.output_weights -= rate * grads.output_weights;
  model.output_bias -= rate * grads.output_bias;
}

std::vector<std::vector<Eigen::Index>> batch_schedule(Eigen::Index n, int batch_size, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

MlpModel train(const Eigen::MatrixXd& features, const std::vector<Label>& noisy_labels,
               const TransitionMatrix& q, const Eigen::VectorXd& gamma, const TrainConfig& cfg,
               std::vector<double>* epoch_losses) {
  cfg.check();
  const int c = q.size();
  check_labels(noisy_labels, features.rows(), c);
  if (features.rows() == 0) throw std::invalid_argument("train: empty sample");
  if (gamma.size() != c || !gamma.allFinite() || gamma.minCoeff() < 0.0) {
    throw std::invalid_argument("train: gamma must be finite, nonnegative and length c");
  }

  TrainStreams streams(cfg.seed);
  MlpModel model = MlpModel::init(features.cols(), cfg.hidden_units, c, streams.init);
  long long iteration = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_total = 0.0;
    const auto batches = batch_schedule(features.rows(), cfg.batch_size, streams.shuffle);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(idx.size()), features.cols());
      std::vector<Label> yb(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        xb.row(static_cast<Eigen::Index>(k)) = features.row(idx[k]);
        yb[k] = noisy_labels[static_cast<std::size_t>(idx[k])];
      }
      const LossResult lr = batch_forward_loss(model, xb, yb, q, gamma, cfg.l2_coeff);
      if (!std::isfinite(lr.loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(bi));
      }
      epoch_total += lr.loss;
      apply_update(model, lr.grads, cfg.rate_at(iteration++));
    }
    if (epoch_losses != nullptr) {
      epoch_losses->push_back(epoch_total / static_cast<double>(batches.size()));
    }
  }
  return model;
}

nlohmann::json to_json(const MlpModel& model) {
  return {{"input_dim", model.input_dim()},
          {"hidden_units", model.hidden_units()},
          {"num_classes", model.num_classes()},
          {"activation", "relu"},
          {"hidden_weights", matrix_to_json(model.hidden_weights)},
          {"hidden_bias", vector_to_json(model.hidden_bias)},
          {"output_weights", matrix_to_json(model.output_weights)},
          {"output_bias", vector_to_json(model.output_bias)}};
}

MlpModel model_from_json(const nlohmann::json& j) {
  MlpModel m{matrix_from_json(j.at("hidden_weights")), vector_from_json(j.at("hidden_bias")),
             matrix_from_json(j.at("output_weights")), vector_from_json(j.at("output_bias"))};
  m.check();
  if (m.input_dim() != j.at("input_dim").get<Eigen::Index>() ||
      m.hidden_units() != j.at("hidden_units").get<Eigen::Index>() ||
      m.num_classes() != j.at("num_classes").get<int>()) {
    throw std::invalid_argument("model JSON shapes disagree with its weights");
  }
  return m;
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << to_json(model).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return model_from_json(nlohmann::json::parse(in));
}

}  // namespace dcic::classifier
