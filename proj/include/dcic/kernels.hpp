#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "dcic/domain_model.hpp"

namespace dcic::kernels {

inline constexpr std::size_t kMaxBandwidthPairs = 1'000'000;
inline constexpr std::uint64_t kBandwidthSeed = 0x5eed'ba2d'0001ULL;

// Median of the Euclidean distances over all pairs i < j of rows. Above
// max_pairs pairs, the median of max_pairs pairs drawn with a fixed seed.
// Throws when there are fewer than two rows or the median is zero.
double median_bandwidth(const Eigen::MatrixXd& x, std::size_t max_pairs = kMaxBandwidthPairs);

// exp(-||x - y||^2 / (2 sigma^2))
double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y, double sigma);

struct GramSet {
  Eigen::MatrixXd k_ss;  // m x m
  Eigen::MatrixXd k_tt;  // n x n
  Eigen::MatrixXd k_ts;  // n x m
  double sigma = 1.0;
};

// Kernel values between the rows of a and the rows of b.
Eigen::MatrixXd cross_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double sigma);

GramSet build_gram(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, double sigma);

// ||(1/m) sum_i w_i psi(x^S_i) - (1/n) sum_j psi(x^T_j)||^2 from a GramSet.
double weighted_mmd_sq(const GramSet& g, const Eigen::VectorXd& weights);

// Kernel sums with source samples grouped by (noisy) label:
//   ss(i, j) = sum over source pairs with labels (i, j),
//   ts(i)    = sum over (target, source with label i),
//   tt       = sum over all target pairs.
// Every weighted MMD whose weights depend only on the label is a quadratic
// form in these sums, so the m x m matrices never need to be stored.
struct ClassKernelSums {
  Eigen::MatrixXd ss;
  Eigen::VectorXd ts;
  double tt = 0.0;
};

ClassKernelSums class_kernel_sums(const Eigen::MatrixXd& source, const std::vector<Label>& labels,
                                  int num_classes, const Eigen::MatrixXd& target, double sigma);

}  // namespace dcic::kernels
