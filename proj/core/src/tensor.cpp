#include "rfhit/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfhit {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("tensor value count " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::feature_map(int64_t batch, int64_t channels, int64_t height, int64_t width,
                           double fill) {
  return Tensor({batch, height, width, channels}, fill);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, value); }

int64_t Tensor::dim(int64_t i) const {
  if (i < 0 || i >= rank()) {
    throw std::out_of_range("dim " + std::to_string(i) + " of shape " + shape_string(shape_));
  }
  return shape_[static_cast<size_t>(i)];
}

double& Tensor::at(int64_t n, int64_t c, int64_t y, int64_t x) {
  return data_[static_cast<size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
}

double Tensor::at(int64_t n, int64_t c, int64_t y, int64_t x) const {
  return data_[static_cast<size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out;
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  }
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace rfhit
