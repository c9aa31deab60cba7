#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dcic {

// Class labels are 0-based inside the library. Every file and CLI surface
// reads and writes them 1-based.
using Label = int;

enum class LabelKind { clean, noisy, unlabeled };

std::string to_string(LabelKind kind);

// Feature matrix (rows = samples) plus optional class labels.
class Dataset {
 public:
  // Unlabeled data.
  explicit Dataset(Eigen::MatrixXd features);
  // Labeled data; kind must be clean or noisy.
  Dataset(Eigen::MatrixXd features, std::vector<Label> labels, int num_classes,
          LabelKind kind);

  [[nodiscard]] const Eigen::MatrixXd& features() const noexcept { return features_; }
  [[nodiscard]] const std::vector<Label>& labels() const;
  [[nodiscard]] bool has_labels() const noexcept { return kind_ != LabelKind::unlabeled; }
  [[nodiscard]] LabelKind kind() const noexcept { return kind_; }
  [[nodiscard]] int num_classes() const noexcept { return num_classes_; }
  [[nodiscard]] Eigen::Index rows() const noexcept { return features_.rows(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return features_.cols(); }

  [[nodiscard]] Dataset with_labels(std::vector<Label> labels, LabelKind kind) const;
  [[nodiscard]] Dataset with_features(Eigen::MatrixXd features) const;
  [[nodiscard]] Dataset unlabeled() const { return Dataset(features_); }

 private:
  Eigen::MatrixXd features_;
  std::vector<Label> labels_;
  int num_classes_ = 0;
  LabelKind kind_ = LabelKind::unlabeled;
};

// Probability vector over classes.
class ClassPrior {
 public:
  explicit ClassPrior(Eigen::VectorXd p);
  static ClassPrior uniform(int c);

  [[nodiscard]] const Eigen::VectorXd& values() const noexcept { return p_; }
  [[nodiscard]] int size() const noexcept { return static_cast<int>(p_.size()); }
  double operator[](int i) const { return p_(i); }

 private:
  Eigen::VectorXd p_;
};

// Nonnegative per-class ratio such as P^T(Y)/P^S(Y).
class ClassRatio {
 public:
  explicit ClassRatio(Eigen::VectorXd r);

  [[nodiscard]] const Eigen::VectorXd& values() const noexcept { return r_; }
  [[nodiscard]] int size() const noexcept { return static_cast<int>(r_.size()); }
  double operator[](int i) const { return r_(i); }

 private:
  Eigen::VectorXd r_;
};

inline constexpr double kDefaultConditionBound = 1e6;

// Row-stochastic label flip matrix, Q(i, j) = P(noisy = j | clean = i).
class TransitionMatrix {
 public:
  // Throws std::invalid_argument for non-square, non-stochastic, singular or
  // ill-conditioned input.
  static TransitionMatrix validate(const Eigen::MatrixXd& q,
                                   double condition_bound = kDefaultConditionBound);
  static TransitionMatrix identity(int c);
  // Symmetric flips: stay with probability 1 - rho, otherwise uniform over
  // the other c - 1 classes.
  static TransitionMatrix symmetric(int c, double rho);

  [[nodiscard]] const Eigen::MatrixXd& matrix() const noexcept { return q_; }
  [[nodiscard]] const Eigen::MatrixXd& inverse() const noexcept { return q_inv_; }
  [[nodiscard]] int size() const noexcept { return static_cast<int>(q_.rows()); }
  [[nodiscard]] double condition_number() const noexcept { return cond_; }
  // Set when some diagonal entry is <= 0.5.
  [[nodiscard]] bool diagonal_warning() const noexcept { return diagonal_warning_; }

 private:
  TransitionMatrix(Eigen::MatrixXd q, Eigen::MatrixXd q_inv, double cond, bool warn);

  Eigen::MatrixXd q_;
  Eigen::MatrixXd q_inv_;
  double cond_;
  bool diagonal_warning_;
};

// Column-orthonormal d x d' matrix W; features are mapped by x -> W^T x.
class Projection {
 public:
  explicit Projection(Eigen::MatrixXd w, double tol = 1e-8);
  static Projection identity(int d);

  [[nodiscard]] const Eigen::MatrixXd& matrix() const noexcept { return w_; }
  [[nodiscard]] Eigen::Index input_dim() const noexcept { return w_.rows(); }
  [[nodiscard]] Eigen::Index output_dim() const noexcept { return w_.cols(); }
  // Rows of x projected: x W.
  [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return x * w_; }

 private:
  Eigen::MatrixXd w_;
};

// Fraction of labels equal to each class. Labels are 0-based.
ClassPrior empirical_prior(const std::vector<Label>& labels, int c);

// Orthonormality defect ||W^T W - I||_F.
double orthonormality_error(const Eigen::MatrixXd& w);

// --- serialization -------------------------------------------------------

// Header f1,...,fd[,label]; labels written 1-based.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
// A trailing "label" column marks labeled data; num_classes defaults to the
// largest label seen.
Dataset read_dataset_csv(const std::filesystem::path& path, LabelKind labeled_kind,
                         std::optional<int> num_classes = std::nullopt);

nlohmann::json transition_to_json(const TransitionMatrix& q);
TransitionMatrix transition_from_json(const nlohmann::json& j,
                                      double condition_bound = kDefaultConditionBound);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

}  // namespace dcic
