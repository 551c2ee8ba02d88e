#include "gfp/tensor.hpp"

namespace gfp {

std::string dims_to_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

std::size_t dims_product(const Dims& dims) {
  std::size_t p = 1;
  for (int d : dims) p *= static_cast<std::size_t>(d);
  return p;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace gfp
