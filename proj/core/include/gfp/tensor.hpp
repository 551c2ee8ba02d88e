#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gfp/error.hpp"

namespace gfp {

using Dims = std::vector<int>;

std::string dims_to_string(const Dims& dims);
std::size_t dims_product(const Dims& dims);

// Dense row-major tensor. Images are stored as [H,W,C] or batched [N,H,W,C].
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(dims_product(dims_), fill);
  }
  BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != dims_product(dims_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_to_string(dims_));
  }

  template <class U>
  static BasicTensor cast(const BasicTensor<U>& other) {
    std::vector<T> data(other.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(other[i]);
    return BasicTensor(other.dims(), std::move(data));
  }

  const Dims& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int axis) const { return dims_.at(axis < 0 ? dims_.size() + axis : axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // [H,W,C] accessor; also valid on [1,H,W,C].
  T& at(int y, int x, int c) { return data_[index3(y, x, c)]; }
  const T& at(int y, int x, int c) const { return data_[index3(y, x, c)]; }

  BasicTensor reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size())
      throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    return BasicTensor(std::move(dims), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (T v : data_) s += v;
    return s;
  }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

  bool operator==(const BasicTensor& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  static void check_dims(const Dims& dims) {
    for (int d : dims)
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
  }
  std::size_t index3(int y, int x, int c) const {
    const int r = rank();
    const int h = dims_[r - 3], w = dims_[r - 2], ch = dims_[r - 1];
    (void)h;
    return (static_cast<std::size_t>(y) * w + x) * ch + c;
  }

  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Image helpers shared by every module: an image is a [H,W,C] tensor in [0,1].
inline int image_height(const Tensor& t) { return t.dim(-3); }
inline int image_width(const Tensor& t) { return t.dim(-2); }
inline int image_channels(const Tensor& t) { return t.dim(-1); }

}  // namespace gfp
