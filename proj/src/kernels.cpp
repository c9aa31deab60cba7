#include "dcic/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dcic/rng.hpp"

namespace dcic::kernels {

namespace {

// Squared distance between columns, summed in coordinate order.
inline double sq_dist(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("kernel bandwidth must be positive and finite");
  }
}

void require_same_dim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("feature dimension mismatch: " + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.cols()));
  }
}

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

double median_bandwidth(const Eigen::MatrixXd& x, std::size_t max_pairs) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("median_bandwidth: need at least two rows");
  const Eigen::MatrixXd xt = x.transpose();
  const Eigen::Index d = xt.rows();
  const auto un = static_cast<std::size_t>(n);
  const std::size_t total = un * (un - 1) / 2;

  std::vector<double> dist;
  if (total <= max_pairs) {
    dist.reserve(total);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        dist.push_back(std::sqrt(sq_dist(xt.col(i).data(), xt.col(j).data(), d)));
      }
    }
  } else {
    Rng rng(kBandwidthSeed);
    dist.reserve(max_pairs);
    while (dist.size() < max_pairs) {
      const auto i = static_cast<Eigen::Index>(rng.below(un));
      const auto j = static_cast<Eigen::Index>(rng.below(un));
      if (i == j) continue;
      dist.push_back(std::sqrt(sq_dist(xt.col(i).data(), xt.col(j).data(), d)));
    }
  }
  const double med = median_of(dist);
  if (!(med > 0.0)) {
    throw std::invalid_argument("median_bandwidth: median pairwise distance is zero");
  }
  return med;
}

double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y, double sigma) {
  if (x.size() != y.size()) throw std::invalid_argument("gaussian_kernel: dimension mismatch");
  require_sigma(sigma);
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double diff = x(k) - y(k);
    s += diff * diff;
  }
  return std::exp(-s / (2.0 * sigma * sigma));
}

Eigen::MatrixXd cross_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double sigma) {
  require_same_dim(a, b);
  require_sigma(sigma);
  const Eigen::MatrixXd at = a.transpose();
  const Eigen::MatrixXd bt = b.transpose();
  const Eigen::Index d = at.rows();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      k(i, j) = std::exp(-sq_dist(at.col(i).data(), bt.col(j).data(), d) * inv);
    }
  }
  return k;
}

GramSet build_gram(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, double sigma) {
  require_same_dim(source, target);
  return GramSet{cross_gram(source, source, sigma), cross_gram(target, target, sigma),
                 cross_gram(target, source, sigma), sigma};
}

double weighted_mmd_sq(const GramSet& g, const Eigen::VectorXd& weights) {
  const auto m = static_cast<double>(g.k_ss.rows());
  const auto n = static_cast<double>(g.k_tt.rows());
  if (weights.size() != g.k_ss.rows()) {
    throw std::invalid_argument("weighted_mmd_sq: weight length " +
                                std::to_string(weights.size()) + " != source size " +
                                std::to_string(g.k_ss.rows()));
  }
  if (!weights.allFinite()) throw std::invalid_argument("weighted_mmd_sq: non-finite weights");
  const double ss = weights.dot(g.k_ss * weights);
  const double ts = g.k_ts.colwise().sum().dot(weights.transpose());
  const double tt = g.k_tt.sum();
  return ss / (m * m) - 2.0 * ts / (m * n) + tt / (n * n);
}

ClassKernelSums class_kernel_sums(const Eigen::MatrixXd& source, const std::vector<Label>& labels,
                                  int num_classes, const Eigen::MatrixXd& target, double sigma) {
  require_same_dim(source, target);
  require_sigma(sigma);
  if (static_cast<Eigen::Index>(labels.size()) != source.rows()) {
    throw std::invalid_argument("class_kernel_sums: label count mismatch");
  }
  const Eigen::MatrixXd st = source.transpose();
  const Eigen::MatrixXd tt = target.transpose();
  const Eigen::Index d = st.rows();
  const Eigen::Index m = st.cols();
  const Eigen::Index n = tt.cols();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const int c = num_classes;

  ClassKernelSums out;
  out.ss = Eigen::MatrixXd::Zero(c, c);
  out.ts = Eigen::VectorXd::Zero(c);

  // Off-diagonal pairs counted once and mirrored; each row reduced in order.
  Eigen::VectorXd row(c);
  for (Eigen::Index a = 0; a < m; ++a) {
    row.setZero();
    const double* xa = st.col(a).data();
    for (Eigen::Index b = a + 1; b < m; ++b) {
      row(labels[static_cast<std::size_t>(b)]) += std::exp(-sq_dist(xa, st.col(b).data(), d) * inv);
    }
    const int ya = labels[static_cast<std::size_t>(a)];
    for (int j = 0; j < c; ++j) {
      out.ss(ya, j) += row(j);
      out.ss(j, ya) += row(j);
    }
    out.ss(ya, ya) += 1.0;
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    row.setZero();
    const double* xt = tt.col(t).data();
    for (Eigen::Index b = 0; b < m; ++b) {
      row(labels[static_cast<std::size_t>(b)]) += std::exp(-sq_dist(xt, st.col(b).data(), d) * inv);
    }
    out.ts += row;
  }

  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double r = 0.0;
    const double* xa = tt.col(a).data();
    for (Eigen::Index b = a + 1; b < n; ++b) r += std::exp(-sq_dist(xa, tt.col(b).data(), d) * inv);
    total += 2.0 * r + 1.0;
  }
  out.tt = total;
  return out;
}

}  // namespace dcic::kernels
