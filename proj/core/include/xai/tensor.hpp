#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xai/errors.hpp"

namespace xai {

// Dense n-dimensional array of 64-bit floats, row-major. Extents are >= 1;
// an empty shape with one element is a scalar, a default-constructed Tensor
// is the absent/null tensor (size 0).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor full(std::vector<int> shape, double value);

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::int64_t flat) { return data_[static_cast<std::size_t>(flat)]; }
  double operator[](std::int64_t flat) const { return data_[static_cast<std::size_t>(flat)]; }

  double& at(std::span<const int> idx);
  double at(std::span<const int> idx) const;

  // Convenience accessors for the common low ranks.
  double& at1(int i) { return data_[static_cast<std::size_t>(i)]; }
  double at1(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at2(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at2(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double& at3(int c, int h, int w) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  double at3(int c, int h, int w) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  double& at4(int a, int b, int c, int d) {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at4(int a, int b, int c, int d) const {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(std::span<const int> shape);

std::int64_t flat_index(std::span<const int> shape, std::span<const int> idx);
std::vector<int> unflatten_index(std::span<const int> shape, std::int64_t flat);

/// Sum with pairwise (binary-tree) accumulation. Exact for 2^k identical
/// addends, which the Grad-CAM/CAM equivalence relies on.
double pairwise_sum(std::span<const double> values);

/// 2-D convolution, zero padding, channels-first.
/// input [C,H,W], kernels [K,C,kh,kw], bias [K] (or null), output [K,H',W'].
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride, int pad);

/// Matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

enum class ReduceMode { Sum, Mean, Max };

struct ReduceResult {
  Tensor values;
  // For Max only: flat index into the input of each reduced maximum,
  // parallel to values.data().
  std::vector<std::int64_t> argmax;
};

/// Reduce over the given axes (removed from the shape). An empty axis list
/// returns the input unchanged.
ReduceResult reduce(const Tensor& input, std::vector<int> axes, ReduceMode mode);

/// Corner-aligned bilinear resample of a [H,W] map.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

// TNSR file format: 8-byte magic "TNSR\0\0\0\1", u32 LE rank, rank u32 LE
// extents, then row-major f64 LE values.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace xai
