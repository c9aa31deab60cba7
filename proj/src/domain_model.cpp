#include "dcic/domain_model.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dcic {

namespace {

constexpr double kSimplexTol = 1e-9;

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + " contains non-finite entries");
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("failed to format number");
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("line " + std::to_string(line) + ": cannot parse '" +
                                std::string(s) + "' as a number");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::clean: return "clean";
    case LabelKind::noisy: return "noisy";
    case LabelKind::unlabeled: return "unlabeled";
  }
  return "unknown";
}

// --- Dataset ---------------------------------------------------------------

Dataset::Dataset(Eigen::MatrixXd features) : features_(std::move(features)) {
  require_finite(features_, "feature matrix");
}

Dataset::Dataset(Eigen::MatrixXd features, std::vector<Label> labels, int num_classes,
                 LabelKind kind)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      kind_(kind) {
  require_finite(features_, "feature matrix");
  if (kind_ == LabelKind::unlabeled) {
    throw std::invalid_argument("labeled dataset constructed with kind 'unlabeled'");
  }
  if (num_classes_ < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (static_cast<Eigen::Index>(labels_.size()) != features_.rows()) {
    throw std::invalid_argument("label count " + std::to_string(labels_.size()) +
                                " does not match row count " +
                                std::to_string(features_.rows()));
  }
  for (Label y : labels_) {
    if (y < 0 || y >= num_classes_) {
      throw std::invalid_argument("label " + std::to_string(y + 1) + " outside 1.." +
                                  std::to_string(num_classes_));
    }
  }
}

const std::vector<Label>& Dataset::labels() const {
  if (!has_labels()) throw std::logic_error("dataset is unlabeled");
  return labels_;
}

Dataset Dataset::with_labels(std::vector<Label> labels, LabelKind kind) const {
  return Dataset(features_, std::move(labels), num_classes_, kind);
}

Dataset Dataset::with_features(Eigen::MatrixXd features) const {
  if (!has_labels()) return Dataset(std::move(features));
  return Dataset(std::move(features), labels_, num_classes_, kind_);
}

// --- priors and ratios -----------------------------------------------------

ClassPrior::ClassPrior(Eigen::VectorXd p) : p_(std::move(p)) {
  if (p_.size() == 0) throw std::invalid_argument("class prior is empty");
  if (!p_.allFinite()) throw std::invalid_argument("class prior is not finite");
  if (p_.minCoeff() < 0.0) throw std::invalid_argument("class prior has a negative entry");
  if (std::abs(p_.sum() - 1.0) > kSimplexTol) {
    throw std::invalid_argument("class prior sums to " + format_double(p_.sum()));
  }
}

ClassPrior ClassPrior::uniform(int c) {
  return ClassPrior(Eigen::VectorXd::Constant(c, 1.0 / c));
}

ClassRatio::ClassRatio(Eigen::VectorXd r) : r_(std::move(r)) {
  if (!r_.allFinite()) throw std::invalid_argument("class ratio is not finite");
  if (r_.size() > 0 && r_.minCoeff() < 0.0) {
    throw std::invalid_argument("class ratio has a negative entry");
  }
}

ClassPrior empirical_prior(const std::vector<Label>& labels, int c) {
  if (labels.empty()) throw std::invalid_argument("empirical_prior: no labels");
  if (c < 1) throw std::invalid_argument("empirical_prior: c must be >= 1");
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(c);
  for (Label y : labels) {
    if (y < 0 || y >= c) {
      throw std::invalid_argument("empirical_prior: label " + std::to_string(y + 1) +
                                  " outside 1.." + std::to_string(c));
    }
    counts(y) += 1.0;
  }
  return ClassPrior(counts / static_cast<double>(labels.size()));
}

// --- TransitionMatrix ------------------------------------------------------

TransitionMatrix::TransitionMatrix(Eigen::MatrixXd q, Eigen::MatrixXd q_inv, double cond,
                                   bool warn)
    : q_(std::move(q)), q_inv_(std::move(q_inv)), cond_(cond), diagonal_warning_(warn) {}

TransitionMatrix TransitionMatrix::validate(const Eigen::MatrixXd& q,
                                            double condition_bound) {
  if (q.rows() == 0 || q.rows() != q.cols()) {
    throw std::invalid_argument("transition matrix must be square and nonempty");
  }
  require_finite(q, "transition matrix");
  if (q.minCoeff() < 0.0 || q.maxCoeff() > 1.0) {
    throw std::invalid_argument("transition matrix entries must lie in [0, 1]");
  }
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double s = q.row(i).sum();
    if (std::abs(s - 1.0) > kSimplexTol) {
      throw std::invalid_argument("transition matrix row " + std::to_string(i + 1) +
                                  " sums to " + format_double(s));
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  const double cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(smin > std::numeric_limits<double>::epsilon() * sv(0))) {
    throw std::invalid_argument("transition matrix is singular");
  }
  if (cond > condition_bound) {
    throw std::invalid_argument("transition matrix condition number " +
                                format_double(cond) + " exceeds bound " +
                                format_double(condition_bound));
  }
  Eigen::MatrixXd q_inv = q.partialPivLu().inverse();
  const bool warn = (q.diagonal().array() <= 0.5).any();
  return TransitionMatrix(q, std::move(q_inv), cond, warn);
}

TransitionMatrix TransitionMatrix::identity(int c) {
  return validate(Eigen::MatrixXd::Identity(c, c));
}

TransitionMatrix TransitionMatrix::symmetric(int c, double rho) {
  if (c < 2) throw std::invalid_argument("symmetric noise needs at least two classes");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("flip rate must lie in [0, 1]");
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(c, c, rho / (c - 1));
  q.diagonal().setConstant(1.0 - rho);
  return validate(q);
}

// --- Projection ------------------------------------------------------------

double orthonormality_error(const Eigen::MatrixXd& w) {
  return (w.transpose() * w - Eigen::MatrixXd::Identity(w.cols(), w.cols())).norm();
}

Projection::Projection(Eigen::MatrixXd w, double tol) : w_(std::move(w)) {
  if (w_.cols() == 0 || w_.cols() > w_.rows()) {
    throw std::invalid_argument("projection must be d x d' with 1 <= d' <= d");
  }
  require_finite(w_, "projection");
  const double err = orthonormality_error(w_);
  if (err > tol) {
    throw std::invalid_argument("projection is not column-orthonormal (defect " +
                                format_double(err) + ")");
  }
}

Projection Projection::identity(int d) { return Projection(Eigen::MatrixXd::Identity(d, d)); }

// --- CSV -------------------------------------------------------------------

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const Eigen::Index d = data.dim();
  for (Eigen::Index j = 0; j < d; ++j) {
    out << (j ? "," : "") << 'f' << (j + 1);
  }
  if (data.has_labels()) out << (d ? "," : "") << "label";
  out << '\n';
  const auto& x = data.features();
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out << (j ? "," : "") << format_double(x(i, j));
    }
    if (data.has_labels()) out << (d ? "," : "") << (data.labels()[i] + 1);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Dataset read_dataset_csv(const std::filesystem::path& path, LabelKind labeled_kind,
                         std::optional<int> num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("'" + path.string() + "' is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  const bool labeled = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (labeled ? 1 : 0);
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j + 1)) {
      throw std::invalid_argument("'" + path.string() + "': unexpected header column '" +
                                  std::string(header[j]) + "'");
    }
  }

  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("'" + path.string() + "' line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(header.size()) +
                                  " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_double(cells[j], line_no));
    if (labeled) {
      const double v = parse_double(cells.back(), line_no);
      if (v != std::floor(v) || v < 1.0) {
        throw std::invalid_argument("'" + path.string() + "' line " +
                                    std::to_string(line_no) + ": label must be an integer >= 1");
      }
      labels.push_back(static_cast<Label>(v) - 1);
    }
  }
  const auto n = static_cast<Eigen::Index>(d ? values.size() / d : 0);
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
      x(i, j) = values[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }
  }
  if (!labeled) return Dataset(std::move(x));
  int c = num_classes.value_or(0);
  if (!num_classes) {
    for (Label y : labels) c = std::max(c, y + 1);
  }
  return Dataset(std::move(x), std::move(labels), c, labeled_kind);
}

// --- JSON ------------------------------------------------------------------

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix JSON must be an array of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw std::invalid_argument("matrix JSON rows have unequal lengths");
    }
    for (Eigen::Index k = 0; k < c; ++k) {
      m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json transition_to_json(const TransitionMatrix& q) {
  return {{"c", q.size()}, {"rows", matrix_to_json(q.matrix())}};
}

TransitionMatrix transition_from_json(const nlohmann::json& j, double condition_bound) {
  const int c = j.at("c").get<int>();
  Eigen::MatrixXd q = matrix_from_json(j.at("rows"));
  if (q.rows() != c || q.cols() != c) {
    throw std::invalid_argument("transition JSON: 'rows' is not " + std::to_string(c) +
                                " x " + std::to_string(c));
  }
  return TransitionMatrix::validate(q, condition_bound);
}

}  // namespace dcic
