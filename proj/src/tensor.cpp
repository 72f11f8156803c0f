#include "sdt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sdt/error.hpp"

namespace sdt {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) fail_usage("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  Tensor t = *this;
  t.reshape(std::move(shape));
  return t;
}

void Tensor::reshape(std::vector<int> shape) {
  if (shape_numel(shape) != data_.size()) {
    fail_usage("reshape " + shape_str() + " changes element count");
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2)) {
    fail_usage("concat_channels: incompatible shapes " + a.shape_str() +
               " and " + b.shape_str());
  }
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), len = a.dim(2);
  Tensor out({batch, ca + cb, len});
  const std::size_t sa = static_cast<std::size_t>(ca) * len;
  const std::size_t sb = static_cast<std::size_t>(cb) * len;
  for (int n = 0; n < batch; ++n) {
    double* dst = out.data() + n * (sa + sb);
    std::copy_n(a.data() + n * sa, sa, dst);
    std::copy_n(b.data() + n * sb, sb, dst + sa);
  }
  return out;
}

void split_channels(const Tensor& x, int first, Tensor& a, Tensor& b) {
  const int batch = x.dim(0), c = x.dim(1), len = x.dim(2);
  a = Tensor({batch, first, len});
  b = Tensor({batch, c - first, len});
  const std::size_t sa = static_cast<std::size_t>(first) * len;
  const std::size_t sb = static_cast<std::size_t>(c - first) * len;
  for (int n = 0; n < batch; ++n) {
    const double* src = x.data() + n * (sa + sb);
    std::copy_n(src, sa, a.data() + n * sa);
    std::copy_n(src + sa, sb, b.data() + n * sb);
  }
}

double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) fail_usage("add_inplace: size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace sdt
