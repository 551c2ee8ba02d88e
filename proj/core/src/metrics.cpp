#include "gfp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfp/error.hpp"
#include "gfp/rng.hpp"

namespace gfp::metrics {

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
    throw ArgumentError("confusion matrix index out of range");
  counts_[static_cast<std::size_t>(truth) * k_ + predicted] += 1;
}

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

long ConfusionMatrix::trace() const {
  long t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

long ConfusionMatrix::row_sum(int truth) const {
  long s = 0;
  for (int j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

long ConfusionMatrix::col_sum(int predicted) const {
  long s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, predicted);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const long n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / n;
}

double ConfusionMatrix::precision(int cls) const {
  const long c = col_sum(cls);
  return c == 0 ? std::nan("") : static_cast<double>(at(cls, cls)) / c;
}

double ConfusionMatrix::recall(int cls) const {
  const long r = row_sum(cls);
  return r == 0 ? std::nan("") : static_cast<double>(at(cls, cls)) / r;
}

Eigen::MatrixXd GaussianStats::dense_covariance() const {
  if (!factored()) return covariance;
  Eigen::MatrixXd c = factor.transpose() * factor;
  c = 0.5 * (c + c.transpose());
  c.diagonal().array() += eps;
  return c;
}

double GaussianStats::covariance_trace() const {
  return factored() ? factor.squaredNorm() + eps * static_cast<double>(dim()) : covariance.trace();
}

GaussianStats gaussian_fit(const Eigen::MatrixXd& samples, CovarianceForm form) {
  if (samples.rows() < 2) throw ArgumentError("gaussian_fit needs at least two samples");
  GaussianStats g;
  g.n = samples.rows();
  g.mean = samples.colwise().mean().transpose();
  const double d = static_cast<double>(samples.cols());
  g.factor = (samples.rowwise() - g.mean.transpose()) / std::sqrt(static_cast<double>(g.n - 1));
  g.eps = 1e-6 * g.factor.squaredNorm() / d;
  const bool factored = form == CovarianceForm::Factored || (form == CovarianceForm::Auto && g.n - 1 < samples.cols());
  if (!factored) {
    g.covariance = g.factor.transpose() * g.factor;
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
    g.covariance.diagonal().array() += g.eps;
    g.factor.resize(0, 0);
  }
  return g;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

double sqrt_trace_sym(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

// Right singular vectors with non-negligible singular values.
struct Spectrum {
  Eigen::MatrixXd v;  // d x r
  Eigen::VectorXd s2; // squared singular values
};

Spectrum spectrum(const Eigen::MatrixXd& f) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(f, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = (sv.size() ? sv[0] : 0.0) * 1e-12 * static_cast<double>(std::max(f.rows(), f.cols()));
  long r = 0;
  while (r < sv.size() && sv[r] > tol) ++r;
  return {svd.matrixV().leftCols(r), sv.head(r).cwiseAbs2()};
}

// Trace of (S_a^1/2 S_b S_a^1/2)^1/2 for factored S = V diag(s2) V^T + eps I. Inside
// Q = span(V_a, V_b) both operators act as small r x r matrices; on the complement the
// product is eps_a eps_b I.
double cross_term_factored(const GaussianStats& a, const GaussianStats& b) {
  const Spectrum sa = spectrum(a.factor), sb = spectrum(b.factor);
  const long d = a.dim();
  Eigen::MatrixXd joint(d, sa.v.cols() + sb.v.cols());
  joint << sa.v, sb.v;
  long r = 0;
  Eigen::MatrixXd q;
  if (joint.cols() > 0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(joint, Eigen::ComputeThinU);
    const Eigen::VectorXd& sv = svd.singularValues();
    while (r < sv.size() && sv[r] > 1e-10 * sv[0]) ++r;
    q = svd.matrixU().leftCols(r);
  }
  double cross = static_cast<double>(d - r) * std::sqrt(a.eps * b.eps);
  if (r == 0) return cross;
  const Eigen::MatrixXd pa = q.transpose() * sa.v, pb = q.transpose() * sb.v;
  const Eigen::VectorXd root = (sa.s2.array() + a.eps).sqrt() - std::sqrt(a.eps);
  Eigen::MatrixXd ra = pa * root.asDiagonal() * pa.transpose();
  ra.diagonal().array() += std::sqrt(a.eps);
  Eigen::MatrixXd cb = pb * sb.s2.asDiagonal() * pb.transpose();
  cb.diagonal().array() += b.eps;
  return cross + sqrt_trace_sym(ra * cb * ra);
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim()) throw ShapeError("frechet_distance: dimension mismatch");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  double cross = 0.0;
  if (a.factored() && b.factored()) {
    cross = cross_term_factored(a, b);
  } else {
    const Eigen::MatrixXd ca = a.dense_covariance(), cb = b.dense_covariance();
    const Eigen::MatrixXd ra = sqrtm_psd(ca);
    cross = sqrt_trace_sym(ra * cb * ra);
  }
  const double fd = mean_term + a.covariance_trace() + b.covariance_trace() - 2.0 * cross;
  return std::max(0.0, fd);
}

FdRatio fd_ratio(const FeatureSet& features, std::uint64_t split_seed) {
  if (features.size() < 2) throw ArgumentError("fd_ratio needs at least two classes");
  const long d = features.begin()->second.cols();
  if (d < 1) throw ShapeError("fd_ratio: empty feature vectors");
  std::vector<GaussianStats> fits;
  for (const auto& [label, rows] : features) {
    if (rows.cols() != d) throw ShapeError("fd_ratio: feature dims differ between classes");
    if (rows.rows() < 4) throw ArgumentError("fd_ratio: class " + std::to_string(label) + " has fewer than 4 samples");
    fits.push_back(gaussian_fit(rows));
  }

  FdRatio r;
  int pairs = 0;
  for (std::size_t i = 0; i < fits.size(); ++i)
    for (std::size_t j = i + 1; j < fits.size(); ++j) {
      r.inter += frechet_distance(fits[i], fits[j]);
      ++pairs;
    }
  r.inter /= pairs;

  Rng rng(split_seed);
  for (const auto& [label, rows] : features) {
    std::vector<long> idx(rows.rows());
    std::iota(idx.begin(), idx.end(), 0L);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const long half = rows.rows() / 2;
    Eigen::MatrixXd a(half, d), b(half, d);
    for (long k = 0; k < half; ++k) {
      a.row(k) = rows.row(idx[k]);
      b.row(k) = rows.row(idx[half + k]);
    }
    r.intra += frechet_distance(gaussian_fit(a), gaussian_fit(b));
  }
  r.intra /= static_cast<double>(features.size());
  r.ratio = r.intra > 0.0 ? r.inter / r.intra : kInfiniteRatio;
  return r;
}

}  // namespace gfp::metrics
