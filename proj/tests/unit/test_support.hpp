#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dcic/classifier.hpp"
#include "dcic/domain_model.hpp"
#include "dcic/rng.hpp"

namespace dcic::test {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                     double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Eigen::VectorXd random_simplex(int c, Rng& rng) {
  Eigen::VectorXd v(c);
  for (int i = 0; i < c; ++i) v(i) = -std::log(rng.uniform(1e-12, 1.0));
  return v / v.sum();
}

// Every class appears at least once.
inline std::vector<Label> random_labels(Eigen::Index m, int c, Rng& rng) {
  std::vector<Label> y(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = i < static_cast<std::size_t>(c) ? static_cast<Label>(i)
                                           : static_cast<Label>(rng.below(static_cast<std::uint64_t>(c)));
  }
  return y;
}

// Diagonally dominant row-stochastic matrix.
inline Eigen::MatrixXd random_transition(int c, Rng& rng, double max_noise = 0.4) {
  Eigen::MatrixXd q(c, c);
  for (int i = 0; i < c; ++i) {
    const double noise = rng.uniform(0.0, max_noise);
    Eigen::VectorXd off(c);
    for (int j = 0; j < c; ++j) off(j) = j == i ? 0.0 : rng.uniform(0.1, 1.0);
    off *= c > 1 ? noise / off.sum() : 0.0;
    q.row(i) = off.transpose();
    q(i, i) = 1.0 - q.row(i).sum();
  }
  return q;
}

inline Eigen::MatrixXd random_orthonormal(Eigen::Index d, Eigen::Index k, Rng& rng) {
  const Eigen::MatrixXd a = random_matrix(d, k, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
}

// Central differences of a scalar function of a matrix argument.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                                        const Eigen::MatrixXd& x, double h) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::MatrixXd xp = x;
      Eigen::MatrixXd xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      g(i, j) = (f(xp) - f(xm)) / (2.0 * h);
    }
  }
  return g;
}

// Largest component error relative to the largest gradient component.
inline double relative_max_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max(numeric.cwiseAbs().maxCoeff(), 1e-12);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

// Scratch file removed on destruction.
class TempPath {
 public:
  explicit TempPath(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("dcic_test_" + name)) {}
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempPath(const TempPath&) = delete;
  TempPath& operator=(const TempPath&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};


// Largest relative finite-difference error over all four MLP parameter blocks.
inline double mlp_gradient_error(const classifier::MlpModel& model, const classifier::MlpGrads& grads,
                                 const std::function<double(const classifier::MlpModel&)>& loss,
                                 double h) {
  using classifier::MlpModel;
  const auto block_error = [&](auto member, const Eigen::MatrixXd& analytic) {
    const Eigen::MatrixXd at = model.*member;
    const auto f = [&](const Eigen::MatrixXd& value) {
      MlpModel perturbed = model;
      perturbed.*member = value;
      return loss(perturbed);
    };
    return std::make_pair(analytic, numeric_gradient(f, at, h));
  };
  const auto blocks = {block_error(&MlpModel::hidden_weights, grads.hidden_weights),
                       block_error(&MlpModel::output_weights, grads.output_weights)};
  // biases are vectors; treat them as one-column matrices
  const auto bias_error = [&](Eigen::VectorXd MlpModel::*member, const Eigen::VectorXd& analytic) {
    const Eigen::MatrixXd at = model.*member;
    const auto f = [&](const Eigen::MatrixXd& value) {
      MlpModel perturbed = model;
      perturbed.*member = value.col(0);
      return loss(perturbed);
    };
    return std::make_pair(Eigen::MatrixXd(analytic), numeric_gradient(f, at, h));
  };
  const auto biases = {bias_error(&MlpModel::hidden_bias, grads.hidden_bias),
                       bias_error(&MlpModel::output_bias, grads.output_bias)};

  double scale = 1e-12;
  double worst = 0.0;
  for (const auto& [a, n] : blocks) scale = std::max(scale, n.cwiseAbs().maxCoeff());
  for (const auto& [a, n] : biases) scale = std::max(scale, n.cwiseAbs().maxCoeff());
  for (const auto& [a, n] : blocks) worst = std::max(worst, (a - n).cwiseAbs().maxCoeff());
  for (const auto& [a, n] : biases) worst = std::max(worst, (a - n).cwiseAbs().maxCoeff());
  return worst / scale;
}

}  // namespace dcic::test
