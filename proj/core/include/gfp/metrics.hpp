#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

namespace gfp::metrics {

// Rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0) : k_(num_classes), counts_(static_cast<std::size_t>(k_) * k_, 0) {}

  void add(int truth, int predicted);
  int num_classes() const { return k_; }
  long at(int truth, int predicted) const { return counts_[static_cast<std::size_t>(truth) * k_ + predicted]; }
  long total() const;
  long trace() const;
  long row_sum(int truth) const;
  long col_sum(int predicted) const;
  double accuracy() const;
  // NaN when the class never appears in the denominator.
  double precision(int cls) const;
  double recall(int cls) const;

 private:
  int k_;
  std::vector<long> counts_;
};

// Covariance is held either densely or, for n - 1 < d, in factored form
// factor^T factor + eps I (factor = centered samples / sqrt(n - 1)).
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // d x d, includes eps I; empty in factored form
  Eigen::MatrixXd factor;
  double eps = 0.0;
  long n = 0;

  long dim() const { return mean.size(); }
  bool factored() const { return covariance.size() == 0; }
  Eigen::MatrixXd dense_covariance() const;
  double covariance_trace() const;
};

enum class CovarianceForm { Auto, Dense, Factored };

// Rows of `samples` are observations. Unbiased covariance plus eps*I with eps = 1e-6 * trace / d.
// Auto picks the factored form when there are fewer samples than dimensions.
GaussianStats gaussian_fit(const Eigen::MatrixXd& samples, CovarianceForm form = CovarianceForm::Auto);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), symmetric roots by
// eigendecomposition with negative eigenvalues clipped at zero. Two factored inputs are handled
// exactly inside the span of their factors, where everything off that span is a multiple of I.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Symmetric PSD square root (negative eigenvalues clipped).
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

// label -> feature rows for that class.
using FeatureSet = std::map<int, Eigen::MatrixXd>;

struct FdRatio {
  double inter = 0.0;  // mean FD over unordered class pairs
  double intra = 0.0;  // mean FD between random equal halves of each class
  double ratio = 0.0;  // +infinity when intra == 0
};

inline constexpr double kInfiniteRatio = std::numeric_limits<double>::infinity();

FdRatio fd_ratio(const FeatureSet& features, std::uint64_t split_seed);

}  // namespace gfp::metrics
