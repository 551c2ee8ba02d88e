#include "gfp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfp/checkpoint.hpp"
#include "gfp/fingerprint_vis.hpp"
#include "gfp/image.hpp"

namespace gfp::baselines {
namespace {

void require_nonempty(const synth::LabeledDataset& d) {
  if (d.empty()) throw ArgumentError("training set is empty");
  d.validate();
}

Eigen::VectorXd flatten(const Tensor& t) {
  Eigen::VectorXd v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = t[i];
  return v;
}

Eigen::VectorXd gray_vector(const Tensor& image, const Dims& expected) {
  if (image.dims() != expected)
    throw ShapeError("image dims " + dims_to_string(image.dims()) + " do not match model dims " + dims_to_string(expected));
  return flatten(image::to_grayscale(image));
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) t[static_cast<std::size_t>(r) * m.cols() + c] = static_cast<float>(m(r, c));
  return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw FormatError("expected a rank-2 tensor, got " + dims_to_string(t.dims()));
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = t[static_cast<std::size_t>(r) * m.cols() + c];
  return m;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts)
    if (t.name == name) return t.value;
  throw FormatError("model file is missing tensor " + name);
}

Dims dims_from_json(const nlohmann::json& j) { return j.get<Dims>(); }

int vote(const Eigen::RowVectorXd& dist, const std::vector<int>& labels, int num_classes, int k) {
  const int n = static_cast<int>(dist.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  });
  std::vector<int> votes(num_classes, 0);
  std::vector<double> total(num_classes, 0.0);
  for (int i = 0; i < k; ++i) {
    ++votes[labels[idx[i]]];
    total[labels[idx[i]]] += std::sqrt(std::max(0.0, dist[idx[i]]));
  }
  int best = -1;
  for (int c = 0; c < num_classes; ++c) {
    if (votes[c] == 0) continue;
    if (best < 0 || votes[c] > votes[best] ||
        (votes[c] == votes[best] && total[c] / votes[c] < total[best] / votes[best]))
      best = c;
  }
  return best;
}

}  // namespace

KnnModel knn_fit(const synth::LabeledDataset& train) {
  require_nonempty(train);
  KnnModel m;
  m.image_dims = train.image_dims();
  m.num_classes = train.num_classes();
  const auto d = static_cast<Eigen::Index>(train.records.front().image.size());
  m.samples.resize(static_cast<Eigen::Index>(train.size()), d);
  for (std::size_t i = 0; i < train.size(); ++i) m.samples.row(i) = flatten(train.records[i].image).transpose();
  m.sq_norms = m.samples.rowwise().squaredNorm();
  m.labels = train.labels();
  return m;
}

std::vector<int> knn_classify_batch(const KnnModel& model, std::span<const Tensor> images, int k) {
  if (model.labels.empty()) throw ArgumentError("kNN model has no training samples");
  if (k < 1 || k > static_cast<int>(model.labels.size()))
    throw ArgumentError("k must be in [1, training size], got " + std::to_string(k));
  std::vector<int> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t m = std::min(kChunk, images.size() - start);
    Eigen::MatrixXd q(static_cast<Eigen::Index>(m), model.samples.cols());
    for (std::size_t i = 0; i < m; ++i) {
      const auto& img = images[start + i];
      if (img.dims() != model.image_dims)
        throw ShapeError("image dims " + dims_to_string(img.dims()) + " do not match model dims " + dims_to_string(model.image_dims));
      q.row(i) = flatten(img).transpose();
    }
    Eigen::MatrixXd dist = (-2.0 * q * model.samples.transpose()).rowwise() + model.sq_norms.transpose();
    dist.colwise() += q.rowwise().squaredNorm();
    for (std::size_t i = 0; i < m; ++i) out.push_back(vote(dist.row(i), model.labels, model.num_classes, k));
  }
  return out;
}

int knn_classify(const KnnModel& model, const Tensor& image, int k) {
  return knn_classify_batch(model, std::span<const Tensor>(&image, 1), k).front();
}

EigenModel eigenface_fit(const synth::LabeledDataset& train, int k) {
  require_nonempty(train);
  EigenModel m;
  m.image_dims = train.image_dims();
  const int n = static_cast<int>(train.size());
  Eigen::MatrixXd x(n, train.image_dims()[0] * train.image_dims()[1]);
  for (int i = 0; i < n; ++i) x.row(i) = gray_vector(train.records[i].image, m.image_dims).transpose();
  m.mean = x.colwise().mean().transpose();
  x.rowwise() -= m.mean.transpose();
  const auto d = x.cols();

  // Eigenvectors of the covariance directly, or through the n x n Gram matrix when n < d.
  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  if (n < d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
    evals = es.eigenvalues();
    evecs = x.transpose() * es.eigenvectors();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
    evals = es.eigenvalues();
    evecs = es.eigenvectors();
  }
  const double top = evals.size() ? std::max(evals.maxCoeff(), 0.0) : 0.0;
  const double tol = top * 1e-10 * static_cast<double>(std::max<Eigen::Index>(n, d));
  int rank = 0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) rank += evals[i] > tol;
  m.requested_k = k > 0 ? k : std::min(kDefaultEigenComponents, rank);
  const int use = std::min(m.requested_k, rank);
  m.basis.resize(d, use);
  // Eigen returns ascending eigenvalues; take the largest first.
  for (int j = 0; j < use; ++j) {
    Eigen::VectorXd v = evecs.col(evals.size() - 1 - j);
    m.basis.col(j) = v / v.norm();
  }
  const int classes = train.num_classes();
  m.centroids = Eigen::MatrixXd::Zero(classes, use);
  std::vector<int> counts(classes, 0);
  const Eigen::MatrixXd proj = x * m.basis;
  for (int i = 0; i < n; ++i) {
    m.centroids.row(train.records[i].label) += proj.row(i);
    ++counts[train.records[i].label];
  }
  for (int c = 0; c < classes; ++c)
    if (counts[c]) m.centroids.row(c) /= counts[c];
  return m;
}

Eigen::VectorXd eigenface_project(const EigenModel& model, const Tensor& image) {
  return model.basis.transpose() * (gray_vector(image, model.image_dims) - model.mean);
}

Tensor eigenface_reconstruct(const EigenModel& model, const Tensor& image) {
  const Eigen::VectorXd v = model.mean + model.basis * eigenface_project(model, image);
  Tensor out({model.image_dims[0], model.image_dims[1], 1});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

int eigenface_classify(const EigenModel& model, const Tensor& image) {
  const Eigen::VectorXd p = eigenface_project(model, image);
  int best = 0;
  double best_d = 0.0;
  for (int c = 0; c < model.centroids.rows(); ++c) {
    const double dd = (model.centroids.row(c).transpose() - p).squaredNorm();
    if (c == 0 || dd < best_d) {
      best = c;
      best_d = dd;
    }
  }
  return best;
}

Tensor prnu_residual(const Tensor& image, double sigma) {
  const Tensor den = image::gaussian_blur3(image, sigma);
  Tensor r = image;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= den[i];
  return r;
}

PrnuModel prnu_fit_residuals(const synth::LabeledDataset& train, std::span<const Tensor> residuals, double sigma) {
  require_nonempty(train);
  if (residuals.size() != train.size()) throw ArgumentError("one residual per training image required");
  PrnuModel m;
  m.sigma = sigma;
  const int classes = train.num_classes();
  std::vector<std::vector<double>> acc(classes, std::vector<double>(residuals.front().size(), 0.0));
  std::vector<int> counts(classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int y = train.records[i].label;
    ++counts[y];
    for (std::size_t j = 0; j < residuals[i].size(); ++j) acc[y][j] += residuals[i][j];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw ArgumentError("class " + train.classes[c] + " has no training images");
    Tensor f(residuals.front().dims());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = static_cast<float>(acc[c][j] / counts[c]);
    m.fingerprints.push_back(std::move(f));
  }
  return m;
}

PrnuModel prnu_fit(const synth::LabeledDataset& train, double sigma) {
  require_nonempty(train);
  std::vector<Tensor> res;
  res.reserve(train.size());
  for (const auto& r : train.records) res.push_back(prnu_residual(r.image, sigma));
  return prnu_fit_residuals(train, res, sigma);
}

int prnu_classify(const PrnuModel& model, const Tensor& image) {
  const Tensor w = prnu_residual(image, model.sigma);
  std::vector<float> scores(model.fingerprints.size(), 0.0f);
  try {
    for (std::size_t c = 0; c < scores.size(); ++c) scores[c] = static_cast<float>(vis::corr(w, model.fingerprints[c]));
  } catch (const NumericalError&) {
    std::fill(scores.begin(), scores.end(), 0.0f);
  }
  int best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = static_cast<int>(c);
  return best;
}

double accuracy(std::span<const int> predicted, const synth::LabeledDataset& data) {
  if (predicted.size() != data.size()) throw ArgumentError("one prediction per record required");
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) ok += predicted[i] == data.records[i].label;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

io::Bytes encode_eigen(const EigenModel& m) {
  return encode_checkpoint({{"basis", to_tensor(m.basis)},
                            {"centroids", to_tensor(m.centroids)},
                            {"mean", to_tensor(m.mean.transpose())}});
}

nlohmann::json eigen_sidecar(const EigenModel& m) {
  return {{"model", "eigenface"}, {"image_dims", m.image_dims}, {"requested_k", m.requested_k},
          {"components", m.basis.cols()}};
}

EigenModel decode_eigen(const io::Bytes& bytes, const nlohmann::json& sidecar) {
  const auto ts = decode_checkpoint(bytes);
  EigenModel m;
  m.image_dims = dims_from_json(sidecar.at("image_dims"));
  m.requested_k = sidecar.at("requested_k").get<int>();
  m.basis = to_matrix(find_tensor(ts, "basis"));
  m.centroids = to_matrix(find_tensor(ts, "centroids"));
  m.mean = to_matrix(find_tensor(ts, "mean")).row(0).transpose();
  if (m.image_dims.size() != 3 || m.mean.size() != static_cast<Eigen::Index>(m.image_dims[0]) * m.image_dims[1] ||
      m.basis.rows() != m.mean.size() || m.centroids.cols() != m.basis.cols())
    throw FormatError("eigenface model tensors are inconsistent");
  return m;
}

io::Bytes encode_prnu(const PrnuModel& m) {
  std::vector<NamedTensor> ts;
  for (std::size_t c = 0; c < m.fingerprints.size(); ++c) ts.push_back({"fingerprint." + std::to_string(c), m.fingerprints[c]});
  return encode_checkpoint(ts);
}

nlohmann::json prnu_sidecar(const PrnuModel& m) {
  return {{"model", "prnu"}, {"denoiser", {{"kind", "gaussian3x3"}, {"sigma", m.sigma}}},
          {"classes", m.fingerprints.size()}};
}

PrnuModel decode_prnu(const io::Bytes& bytes, const nlohmann::json& sidecar) {
  const auto ts = decode_checkpoint(bytes);
  PrnuModel m;
  m.sigma = sidecar.at("denoiser").at("sigma").get<double>();
  const auto n = sidecar.at("classes").get<std::size_t>();
  if (ts.size() != n) throw FormatError("prnu model tensor count does not match its sidecar");
  for (std::size_t c = 0; c < n; ++c) m.fingerprints.push_back(find_tensor(ts, "fingerprint." + std::to_string(c)));
  return m;
}

}  // namespace gfp::baselines
