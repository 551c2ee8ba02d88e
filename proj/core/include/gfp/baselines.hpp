#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfp/io.hpp"
#include "gfp/synth.hpp"
#include "json.hpp"

namespace gfp::baselines {

// Nearest neighbours on raw pixels.
struct KnnModel {
  Eigen::MatrixXd samples;  // one flattened training image per row
  Eigen::VectorXd sq_norms;
  std::vector<int> labels;
  int num_classes = 0;
  Dims image_dims;
};

KnnModel knn_fit(const synth::LabeledDataset& train);
// Majority vote over the k nearest training images (Euclidean). Vote ties go to the class with
// the smaller mean neighbour distance, then to the smaller class index.
int knn_classify(const KnnModel& model, const Tensor& image, int k = 1);
std::vector<int> knn_classify_batch(const KnnModel& model, std::span<const Tensor> images, int k = 1);

struct EigenModel {
  Dims image_dims;           // colour dims the model accepts
  Eigen::VectorXd mean;      // grayscale mean image, flattened
  Eigen::MatrixXd basis;     // d x k, orthonormal columns
  Eigen::MatrixXd centroids; // num_classes x k
  int requested_k = 0;       // k asked for; basis.cols() may be smaller when the rank is
};

inline constexpr int kDefaultEigenComponents = 64;

// PCA of the grayscale (channel mean) training images; k <= 0 selects min(64, rank).
// A k above the rank is truncated to the rank (see EigenModel::requested_k).
EigenModel eigenface_fit(const synth::LabeledDataset& train, int k = 0);
Eigen::VectorXd eigenface_project(const EigenModel& model, const Tensor& image);
// Grayscale reconstruction from the projection, [H,W,1].
Tensor eigenface_reconstruct(const EigenModel& model, const Tensor& image);
int eigenface_classify(const EigenModel& model, const Tensor& image);

inline constexpr double kPrnuSigma = 0.8;

struct PrnuModel {
  double sigma = kPrnuSigma;  // 3x3 Gaussian denoiser
  std::vector<Tensor> fingerprints;
};

// W(I) = I - denoise(I).
Tensor prnu_residual(const Tensor& image, double sigma = kPrnuSigma);
PrnuModel prnu_fit(const synth::LabeledDataset& train, double sigma = kPrnuSigma);
// Same, from precomputed residuals (one per record of `train`).
PrnuModel prnu_fit_residuals(const synth::LabeledDataset& train, std::span<const Tensor> residuals, double sigma);
// argmax_y corr(W(I), fingerprint_y); an image with a constant residual scores 0 against every class.
int prnu_classify(const PrnuModel& model, const Tensor& image);

double accuracy(std::span<const int> predicted, const synth::LabeledDataset& data);

// GFPC payload plus JSON sidecar content for each model.
io::Bytes encode_eigen(const EigenModel& m);
nlohmann::json eigen_sidecar(const EigenModel& m);
EigenModel decode_eigen(const io::Bytes& bytes, const nlohmann::json& sidecar);
io::Bytes encode_prnu(const PrnuModel& m);
nlohmann::json prnu_sidecar(const PrnuModel& m);
PrnuModel decode_prnu(const io::Bytes& bytes, const nlohmann::json& sidecar);

}  // namespace gfp::baselines
