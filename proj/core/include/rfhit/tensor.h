#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rfhit {

using Shape = std::vector<int64_t>;

std::string shape_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Rank-4 feature maps are stored token-major: dims are
/// (batch, height, width, channels), so a linear layer over channels is a
/// plain matrix product on a (batch*height*width) x channels view. The
/// logical batch x channels x height x width indexing is available through
/// at(n, c, y, x).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  /// Feature map with logical NCHW extents, stored NHWC.
  static Tensor feature_map(int64_t batch, int64_t channels, int64_t height,
                            int64_t width, double fill = 0.0);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Feature-map extents (rank 4 only).
  int64_t batch() const { return dim(0); }
  int64_t height() const { return dim(1); }
  int64_t width() const { return dim(2); }
  int64_t channels() const { return dim(3); }

  double& at(int64_t n, int64_t c, int64_t y, int64_t x);
  double at(int64_t n, int64_t c, int64_t y, int64_t x) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Same storage, new shape; numel must match.
  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  double sum() const;
  double max_abs() const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Throws std::invalid_argument naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace rfhit
