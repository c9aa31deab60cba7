#include "dcic/synth.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

namespace dcic::synth {

namespace {

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const Eigen::MatrixXd jittered =
      cov + 1e-10 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  llt.compute(jittered);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("covariance is not positive definite");
  }
  return llt.matrixL();
}

std::size_t categorical(const Eigen::VectorXd& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  // rounding left u beyond the last partial sum; take the last nonzero class
  for (Eigen::Index i = p.size() - 1; i >= 0; --i) {
    if (p(i) > 0.0) return static_cast<std::size_t>(i);
  }
  return 0;
}

}  // namespace

void GmmSpec::check() const {
  const auto c = means.size();
  if (c == 0) throw std::invalid_argument("GMM has no components");
  if (covariances.size() != c || static_cast<std::size_t>(priors.size()) != c) {
    throw std::invalid_argument("GMM component counts disagree");
  }
  const Eigen::Index d = dim();
  for (std::size_t i = 0; i < c; ++i) {
    const auto& s = covariances[i];
    if (means[i].size() != d || s.rows() != d || s.cols() != d) {
      throw std::invalid_argument("GMM component " + std::to_string(i + 1) +
                                  " has mismatched dimension");
    }
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + s.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("GMM covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10) {
      throw std::invalid_argument("GMM covariance is not PSD");
    }
  }
}

LocationScale LocationScale::identity(int c, Eigen::Index d) {
  LocationScale t;
  t.shift.assign(static_cast<std::size_t>(c), Eigen::VectorXd::Zero(d));
  t.scale.assign(static_cast<std::size_t>(c), Eigen::VectorXd::Ones(d));
  return t;
}

void LocationScale::check() const {
  if (shift.size() != scale.size()) {
    throw std::invalid_argument("location-scale class counts disagree");
  }
  for (std::size_t i = 0; i < scale.size(); ++i) {
    if (shift[i].size() != scale[i].size()) {
      throw std::invalid_argument("location-scale dimension mismatch");
    }
    if (!(scale[i].array() > 0.0).all() || !scale[i].allFinite() || !shift[i].allFinite()) {
      throw std::invalid_argument("location-scale scales must be positive and finite");
    }
  }
}

Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, Rng& rng) {
  const Eigen::Index d = scale.rows();
  if (scale.cols() != d || d == 0) throw std::invalid_argument("Wishart scale must be square");
  if (dof <= static_cast<double>(d - 1)) {
    throw std::invalid_argument("Wishart degrees of freedom must exceed d - 1");
  }
  const Eigen::MatrixXd l = cholesky_factor(scale);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd la = l * a;
  Eigen::MatrixXd w = la * la.transpose();
  return 0.5 * (w + w.transpose());
}

GmmSpec sample_gmm_spec(int c, Eigen::Index d, Rng& rng) {
  if (c < 2) throw std::invalid_argument("sample_gmm_spec: need c >= 2");
  if (d < 1) throw std::invalid_argument("sample_gmm_spec: need d >= 1");
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (int i = 0; i < c; ++i) {
    Eigen::VectorXd mu(d);
    for (Eigen::Index j = 0; j < d; ++j) mu(j) = rng.uniform(-kMeanHalfWidth, kMeanHalfWidth);
    means.push_back(std::move(mu));
  }
  const Eigen::MatrixXd scale = kWishartScale * Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < c; ++i) covs.push_back(sample_wishart(scale, kWishartDof, rng));
  return GmmSpec{std::move(means), std::move(covs), ClassPrior::uniform(c)};
}

Eigen::MatrixXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                Eigen::Index n, Rng& rng) {
  const Eigen::MatrixXd l = cholesky_factor(cov);
  const Eigen::Index d = mean.size();
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
  }
  Eigen::MatrixXd x = z * l.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

Dataset sample_dataset(const GmmSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  spec.check();
  const int c = spec.num_classes();
  const Eigen::Index d = spec.dim();
  std::vector<Label> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = static_cast<Label>(categorical(spec.priors.values(), rng));

  std::vector<Eigen::MatrixXd> factors;
  for (const auto& s : spec.covariances) factors.push_back(cholesky_factor(s));
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    x.row(i) = (spec.means[k] + factors[k] * z).transpose();
  }
  return Dataset(std::move(x), std::move(labels), c, LabelKind::clean);
}

LocationScale sample_location_scale(int c, Eigen::Index d, Rng& rng,
                                    const LocationScaleRanges& ranges) {
  LocationScale t;
  for (int i = 0; i < c; ++i) {
    Eigen::VectorXd shift(d);
    Eigen::VectorXd scale(d);
    for (Eigen::Index j = 0; j < d; ++j) shift(j) = rng.uniform(ranges.shift_lo, ranges.shift_hi);
    for (Eigen::Index j = 0; j < d; ++j) scale(j) = rng.uniform(ranges.scale_lo, ranges.scale_hi);
    t.shift.push_back(std::move(shift));
    t.scale.push_back(std::move(scale));
  }
  return t;
}

Dataset apply_location_scale(const Dataset& data, const LocationScale& t) {
  if (!data.has_labels()) {
    throw std::invalid_argument("apply_location_scale: transform is per-class, labels required");
  }
  t.check();
  if (static_cast<int>(t.scale.size()) != data.num_classes()) {
    throw std::invalid_argument("apply_location_scale: class count mismatch");
  }
  Eigen::MatrixXd x = data.features();
  const auto& y = data.labels();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto k = static_cast<std::size_t>(y[static_cast<std::size_t>(i)]);
    if (t.scale[k].size() != x.cols()) {
      throw std::invalid_argument("apply_location_scale: dimension mismatch");
    }
    x.row(i) = (x.row(i).transpose().cwiseProduct(t.scale[k]) + t.shift[k]).transpose();
  }
  return data.with_features(std::move(x));
}

Dataset flip_labels(const Dataset& data, const TransitionMatrix& q, Rng& rng) {
  if (!data.has_labels()) throw std::invalid_argument("flip_labels: clean labels required");
  if (q.size() != data.num_classes()) {
    throw std::invalid_argument("flip_labels: transition matrix size mismatch");
  }
  std::vector<Label> noisy(data.labels().size());
  const Eigen::MatrixXd& qm = q.matrix();
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    noisy[i] = static_cast<Label>(categorical(qm.row(data.labels()[i]).transpose(), rng));
  }
  return data.with_labels(std::move(noisy), LabelKind::noisy);
}

Dataset resample_by_prior(const Dataset& data, const ClassPrior& target, Eigen::Index n,
                          Rng& rng) {
  if (!data.has_labels()) throw std::invalid_argument("resample_by_prior: labels required");
  const int c = data.num_classes();
  if (target.size() != c) throw std::invalid_argument("resample_by_prior: prior size mismatch");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < data.labels().size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels()[i])].push_back(static_cast<Eigen::Index>(i));
  }
  for (int k = 0; k < c; ++k) {
    if (target[k] > 0.0 && by_class[static_cast<std::size_t>(k)].empty()) {
      throw std::invalid_argument("resample_by_prior: class " + std::to_string(k + 1) +
                                  " has target mass but no source samples");
    }
  }
  Eigen::MatrixXd x(n, data.dim());
  std::vector<Label> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = categorical(target.values(), rng);
    const auto& pool = by_class[k];
    const Eigen::Index row = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    x.row(i) = data.features().row(row);
    labels[static_cast<std::size_t>(i)] = static_cast<Label>(k);
  }
  return Dataset(std::move(x), std::move(labels), c, data.kind());
}

// --- JSON ------------------------------------------------------------------

nlohmann::json to_json(const GmmSpec& spec) {
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& m : spec.means) means.push_back(vector_to_json(m));
  for (const auto& s : spec.covariances) covs.push_back(matrix_to_json(s));
  return {{"means", means}, {"covariances", covs}, {"priors", vector_to_json(spec.priors.values())}};
}

nlohmann::json to_json(const LocationScale& t) {
  nlohmann::json shift = nlohmann::json::array();
  nlohmann::json scale = nlohmann::json::array();
  for (const auto& v : t.shift) shift.push_back(vector_to_json(v));
  for (const auto& v : t.scale) scale.push_back(vector_to_json(v));
  return {{"shift", shift}, {"scale", scale}};
}

GmmSpec gmm_spec_from_json(const nlohmann::json& j) {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& m : j.at("means")) means.push_back(vector_from_json(m));
  for (const auto& s : j.at("covariances")) covs.push_back(matrix_from_json(s));
  GmmSpec spec{std::move(means), std::move(covs), ClassPrior(vector_from_json(j.at("priors")))};
  spec.check();
  return spec;
}

LocationScale location_scale_from_json(const nlohmann::json& j) {
  LocationScale t;
  for (const auto& v : j.at("shift")) t.shift.push_back(vector_from_json(v));
  for (const auto& v : j.at("scale")) t.scale.push_back(vector_from_json(v));
  t.check();
  return t;
}

}  // namespace dcic::synth
