#include "dcic/joint_deep.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dcic/dcic_linear.hpp"
#include "dcic/kernels.hpp"
#include "dcic/noise_adapt.hpp"

namespace dcic::joint {

namespace {

double hidden_bandwidth(const Eigen::MatrixXd& hs, const Eigen::MatrixXd& ht) {
  Eigen::MatrixXd pooled(hs.rows() + ht.rows(), hs.cols());
  pooled << hs, ht;
  try {
    return kernels::median_bandwidth(pooled);
  } catch (const std::invalid_argument&) {
    // collapsed hidden layer: every kernel value is 1 and the MMD gradient
    // vanishes for any bandwidth
    return 1.0;
  }
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  return out;
}

}  // namespace

void JointConfig::check() const {
  TrainConfig::check();
  if (pi1 < 0.0 || l2_coeff < 0.0) throw std::invalid_argument("pi1 and pi2 must be nonnegative");
  if (mmd_layer != 1) {
    throw std::invalid_argument("mmd_layer must be 1 for a one-hidden-layer network");
  }
  if (alpha_update_every < 0 || target_batch_size < 1) {
    throw std::invalid_argument("invalid alpha schedule or target batch size");
  }
}

JointLoss joint_loss(const classifier::MlpModel& model, const Eigen::MatrixXd& source_batch,
                     const std::vector<Label>& noisy_labels, const Eigen::MatrixXd& target_batch,
                     const TransitionMatrix& q, const ClassPrior& alpha,
                     const ClassPrior& noisy_prior, const JointConfig& cfg,
                     std::optional<double> sigma) {
  if (source_batch.rows() == 0 || target_batch.rows() == 0) {
    throw std::invalid_argument("joint_loss: empty batch");
  }
  const Eigen::VectorXd gamma = noise::gamma_weights(alpha, q, noisy_prior);
  const auto base =
      classifier::batch_forward_loss(model, source_batch, noisy_labels, q, gamma, cfg.l2_coeff);

  JointLoss out;
  out.grads = base.grads;
  out.clamped = base.clamped;
  out.loss = base.loss;
  out.risk = base.loss - 0.5 * cfg.l2_coeff *
                             (model.hidden_weights.squaredNorm() + model.output_weights.squaredNorm());
  if (cfg.pi1 > 0.0) {
    const Eigen::MatrixXd pre_s = [&] {
      Eigen::MatrixXd z = source_batch * model.hidden_weights;
      z.rowwise() += model.hidden_bias.transpose();
      return z;
    }();
    const Eigen::MatrixXd pre_t = [&] {
      Eigen::MatrixXd z = target_batch * model.hidden_weights;
      z.rowwise() += model.hidden_bias.transpose();
      return z;
    }();
    const Eigen::MatrixXd hs = pre_s.cwiseMax(0.0);
    const Eigen::MatrixXd ht = pre_t.cwiseMax(0.0);
    const double s = sigma.value_or(hidden_bandwidth(hs, ht));
    out.sigma = s;

    const ClassPrior clean_prior = noise::clean_prior_from_noisy(noisy_prior, q);
    const auto g = noise::build_g_matrix(q, clean_prior, noisy_labels);
    const Eigen::VectorXd w = g.sample_weights(alpha.values());
    const auto m = static_cast<double>(hs.rows());
    const auto n = static_cast<double>(ht.rows());

    const auto gram = kernels::build_gram(hs, ht, s);
    const Eigen::MatrixXd e_ss = (w * w.transpose()).cwiseProduct(gram.k_ss) / (m * m);
    const Eigen::MatrixXd e_tt = gram.k_tt / (n * n);
    const Eigen::MatrixXd e_ts =
        -2.0 * (Eigen::VectorXd::Ones(ht.rows()) * w.transpose()).cwiseProduct(gram.k_ts) / (m * n);
    out.mmd = e_ss.sum() + e_tt.sum() + e_ts.sum();

    // d/dh of sum E_ab k(h_a, h_b), with k' = -k (h_a - h_b) / sigma^2
    const double inv = 1.0 / (s * s);
    Eigen::MatrixXd d_hs = -2.0 * inv * (e_ss.rowwise().sum().asDiagonal() * hs - e_ss * hs);
    d_hs += -inv * (e_ts.colwise().sum().transpose().asDiagonal() * hs - e_ts.transpose() * ht);
    Eigen::MatrixXd d_ht = -2.0 * inv * (e_tt.rowwise().sum().asDiagonal() * ht - e_tt * ht);
    d_ht += -inv * (e_ts.rowwise().sum().asDiagonal() * ht - e_ts * hs);
    d_hs *= cfg.pi1;
    d_ht *= cfg.pi1;

    const Eigen::MatrixXd zero_s = Eigen::MatrixXd::Zero(hs.rows(), model.num_classes());
    const Eigen::MatrixXd zero_t = Eigen::MatrixXd::Zero(ht.rows(), model.num_classes());
    const auto gs = classifier::backprop(model, source_batch, pre_s, zero_s, &d_hs);
    const auto gt = classifier::backprop(model, target_batch, pre_t, zero_t, &d_ht);
    out.grads.hidden_weights += gs.hidden_weights + gt.hidden_weights;
    out.grads.hidden_bias += gs.hidden_bias + gt.hidden_bias;
    out.loss += cfg.pi1 * out.mmd;
  }
  if (!std::isfinite(out.loss)) throw std::runtime_error("joint_loss: non-finite loss");
  return out;
}

ClassPrior update_alpha(const classifier::MlpModel& model, const Dataset& noisy_source,
                        const Dataset& target, const TransitionMatrix& q) {
  const Eigen::MatrixXd hs = classifier::hidden_responses(model, noisy_source.features());
  const Eigen::MatrixXd ht = classifier::hidden_responses(model, target.features());
  const double sigma = hidden_bandwidth(hs, ht);
  const int c = noisy_source.num_classes();
  const ClassPrior noisy_prior = empirical_prior(noisy_source.labels(), c);
  const ClassPrior clean_prior = noise::clean_prior_from_noisy(noisy_prior, q);
  const auto g = noise::build_g_matrix(q, clean_prior, noisy_source.labels());
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(hs.cols(), hs.cols());
  const auto terms = linear::alpha_qp_terms(identity, noisy_source.with_features(hs), Dataset(ht), g,
                                            sigma);
  return linear::solve_alpha_qp(terms.a, terms.b);
}

JointFitResult fit_joint(const JointConfig& cfg, const Dataset& noisy_source, const Dataset& target,
                         const TransitionMatrix& q) {
  cfg.check();
  if (!noisy_source.has_labels()) throw std::invalid_argument("fit_joint: source labels required");
  if (noisy_source.dim() != target.dim()) throw std::invalid_argument("fit_joint: dimension mismatch");
  const int c = noisy_source.num_classes();
  if (q.size() != c) throw std::invalid_argument("fit_joint: transition matrix size mismatch");

  const ClassPrior noisy_prior = empirical_prior(noisy_source.labels(), c);
  ClassPrior alpha = noise::clean_prior_from_noisy(noisy_prior, q);
  Eigen::VectorXd gamma = noise::gamma_weights(alpha, q, noisy_prior);

  classifier::TrainStreams streams(cfg.seed);
  auto model = classifier::MlpModel::init(noisy_source.dim(), cfg.hidden_units, c, streams.init);
  const Eigen::MatrixXd& xs = noisy_source.features();
  const Eigen::MatrixXd& xt = target.features();
  const auto& ys = noisy_source.labels();

  JointFitResult result{model, alpha, gamma, {}, {}};
  long long iteration = 0;
  long long batch_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = classifier::batch_schedule(xs.rows(), cfg.batch_size, streams.shuffle);
    std::vector<std::vector<Eigen::Index>> target_batches;
    if (cfg.pi1 > 0.0) {
      target_batches = classifier::batch_schedule(xt.rows(), cfg.target_batch_size,
                                                  streams.target_shuffle);
    }
    double epoch_total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi, ++batch_counter) {
      if (cfg.pi1 > 0.0) {
        const bool due = cfg.alpha_update_every == 0 ? bi == 0
                                                     : batch_counter % cfg.alpha_update_every == 0;
        if (due) {
          alpha = update_alpha(model, noisy_source, target, q);
          gamma = noise::gamma_weights(alpha, q, noisy_prior);
          result.alpha_trace.push_back(alpha);
        }
      }
      const Eigen::MatrixXd xb = gather_rows(xs, batches[bi]);
      std::vector<Label> yb(batches[bi].size());
      for (std::size_t k = 0; k < yb.size(); ++k) yb[k] = ys[static_cast<std::size_t>(batches[bi][k])];

      classifier::MlpGrads grads;
      double loss = 0.0;
      if (cfg.pi1 > 0.0) {
        const Eigen::MatrixXd tb = gather_rows(xt, target_batches[bi % target_batches.size()]);
        const JointLoss jl = joint_loss(model, xb, yb, tb, q, alpha, noisy_prior, cfg);
        grads = jl.grads;
        loss = jl.loss;
      } else {
        const auto lr = classifier::batch_forward_loss(model, xb, yb, q, gamma, cfg.l2_coeff);
        grads = lr.grads;
        loss = lr.loss;
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("fit_joint: non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_total += loss;
      classifier::apply_update(model, grads, cfg.rate_at(iteration++));
    }
    result.loss_trace.push_back(epoch_total / static_cast<double>(batches.size()));
  }
  result.model = std::move(model);
  result.alpha = alpha;
  result.gamma = gamma;
  return result;
}

}  // namespace dcic::joint
