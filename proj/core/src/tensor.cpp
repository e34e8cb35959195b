#include "xai/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace xai {

namespace {

std::int64_t checked_volume(std::span<const int> shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + std::to_string(e));
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(checked_volume(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  const std::int64_t n = checked_volume(shape_);
  if (n != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("shape " + shape_to_string(shape_) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

double& Tensor::at(std::span<const int> idx) {
  return data_[static_cast<std::size_t>(flat_index(shape_, idx))];
}

double Tensor::at(std::span<const int> idx) const {
  return data_[static_cast<std::size_t>(flat_index(shape_, idx))];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_to_string(std::span<const int> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::int64_t flat_index(std::span<const int> shape, std::span<const int> idx) {
  if (shape.size() != idx.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match tensor rank " +
                     std::to_string(shape.size()));
  }
  std::int64_t flat = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (idx[d] < 0 || idx[d] >= shape[d]) {
      throw ContractError("index " + std::to_string(idx[d]) + " out of range for extent " +
                          std::to_string(shape[d]) + " on axis " + std::to_string(d));
    }
    flat = flat * shape[d] + idx[d];
  }
  return flat;
}

std::vector<int> unflatten_index(std::span<const int> shape, std::int64_t flat) {
  std::vector<int> idx(shape.size(), 0);
  for (std::size_t d = shape.size(); d-- > 0;) {
    idx[d] = static_cast<int>(flat % shape[d]);
    flat /= shape[d];
  }
  return idx;
}

double pairwise_sum(std::span<const double> values) {
  // Fully pairwise so that summing 2^k identical values is exact.
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n == 1) return values[0];
  if (n == 2) return values[0] + values[1];
  const std::size_t half = n / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride, int pad) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d input must be rank 3 [C,H,W], got " + shape_to_string(input.shape()));
  }
  if (kernels.rank() != 4) {
    throw ShapeError("conv2d kernels must be rank 4 [K,C,kh,kw], got " +
                     shape_to_string(kernels.shape()));
  }
  const int C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const int K = kernels.extent(0), KC = kernels.extent(1);
  const int kh = kernels.extent(2), kw = kernels.extent(3);
  if (C != KC) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input.shape()) +
                     " vs kernels " + shape_to_string(kernels.shape()));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.extent(0) != K)) {
    throw ShapeError("conv2d bias must be [K]=[" + std::to_string(K) + "], got " +
                     shape_to_string(bias.shape()));
  }
  if (stride < 1) throw ContractError("conv2d stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ContractError("conv2d pad must be >= 0, got " + std::to_string(pad));
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw ContractError("conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                        " exceeds padded input " + std::to_string(H + 2 * pad) + "x" +
                        std::to_string(W + 2 * pad));
  }
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;

  Tensor out({K, OH, OW});
  for (int k = 0; k < K; ++k) {
    const double b = bias.empty() ? 0.0 : bias.at1(k);
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double acc = b;
        for (int c = 0; c < C; ++c) {
          for (int r = 0; r < kh; ++r) {
            const int ih = oh * stride - pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int s = 0; s < kw; ++s) {
              const int iw = ow * stride - pad + s;
              if (iw < 0 || iw >= W) continue;
              acc += input.at3(c, ih, iw) * kernels.at4(k, c, r, s);
            }
          }
        }
        out.at3(k, oh, ow) = acc;
      }
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1);
  const int k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeError("matmul inner dimensions differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a.at2(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        out.at2(i, j) += av * b.at2(p, j);
      }
    }
  }
  return out;
}

ReduceResult reduce(const Tensor& input, std::vector<int> axes, ReduceMode mode) {
  if (axes.empty()) return {input, {}};
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (int a : axes) {
    if (a < 0 || a >= input.rank()) {
      throw ContractError("reduce axis " + std::to_string(a) + " invalid for shape " +
                          shape_to_string(input.shape()));
    }
  }
  std::vector<bool> reduced(static_cast<std::size_t>(input.rank()), false);
  for (int a : axes) reduced[static_cast<std::size_t>(a)] = true;

  std::vector<int> out_shape;
  for (int d = 0; d < input.rank(); ++d) {
    if (!reduced[static_cast<std::size_t>(d)]) out_shape.push_back(input.extent(d));
  }

  std::int64_t out_size = 1;
  for (int e : out_shape) out_size *= e;
  std::int64_t group = input.size() / out_size;

  ReduceResult res;
  res.values = Tensor(out_shape);
  std::vector<double>& out = res.values.data();
  if (mode == ReduceMode::Max) {
    res.argmax.assign(static_cast<std::size_t>(out_size), -1);
    std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
  }

  const std::vector<int>& in_shape = input.shape();
  std::vector<int> idx(static_cast<std::size_t>(input.rank()), 0);
  for (std::int64_t flat = 0; flat < input.size(); ++flat) {
    std::int64_t out_flat = 0;
    for (int d = 0; d < input.rank(); ++d) {
      if (!reduced[static_cast<std::size_t>(d)]) {
        out_flat = out_flat * in_shape[static_cast<std::size_t>(d)] +
                   idx[static_cast<std::size_t>(d)];
      }
    }
    // out_flat above used input extents for non-reduced axes, which equal
    // the output extents in the same order.
    const double v = input[flat];
    if (mode == ReduceMode::Max) {
      if (v > out[static_cast<std::size_t>(out_flat)]) {
        out[static_cast<std::size_t>(out_flat)] = v;
        res.argmax[static_cast<std::size_t>(out_flat)] = flat;
      }
    } else {
      out[static_cast<std::size_t>(out_flat)] += v;
    }
    for (int d = input.rank(); d-- > 0;) {
      if (++idx[static_cast<std::size_t>(d)] < in_shape[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  if (mode == ReduceMode::Mean) {
    const double inv = 1.0 / static_cast<double>(group);
    for (double& v : out) v *= inv;
  }
  return res;
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  if (input.rank() != 2) {
    throw ShapeError("bilinear_resize expects [H,W], got " + shape_to_string(input.shape()));
  }
  if (out_h < 1 || out_w < 1) {
    throw ContractError("bilinear_resize output extents must be >= 1");
  }
  const int H = input.extent(0), W = input.extent(1);
  Tensor out({out_h, out_w});
  const double sy = (out_h > 1 && H > 1) ? static_cast<double>(H - 1) / (out_h - 1) : 0.0;
  const double sx = (out_w > 1 && W > 1) ? static_cast<double>(W - 1) / (out_w - 1) : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      const double top = input.at2(y0, x0) * (1.0 - wx) + input.at2(y0, x1) * wx;
      const double bot = input.at2(y1, x0) * (1.0 - wx) + input.at2(y1, x1) * wx;
      out.at2(oy, ox) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

namespace {

constexpr unsigned char kMagic[8] = {'T', 'N', 'S', 'R', 0, 0, 0, 1};

void write_u32le(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64le(std::ofstream& f, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32le(std::ifstream& f, std::size_t& offset, const std::string& what) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw ParseError("truncated TNSR file while reading " + what, offset);
  offset += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (!t.all_finite()) {
    throw NumericError("refusing to write non-finite values to " + path.string());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(kMagic), 8);
  write_u32le(f, static_cast<std::uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) write_u32le(f, static_cast<std::uint32_t>(t.extent(d)));
  for (double v : t.data()) write_f64le(f, v);
  if (!f) throw IoError("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::size_t offset = 0;
  unsigned char magic[8];
  f.read(reinterpret_cast<char*>(magic), 8);
  if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("bad TNSR magic in " + path.string(), 0);
  }
  offset = 8;
  const std::uint32_t rank = read_u32le(f, offset, "rank");
  if (rank > 8) throw ParseError("TNSR rank " + std::to_string(rank) + " too large", offset - 4);
  std::vector<int> shape(rank);
  std::int64_t n = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    const std::uint32_t e = read_u32le(f, offset, "extent");
    if (e == 0 || e > (1u << 24)) {
      throw ParseError("invalid TNSR extent " + std::to_string(e), offset - 4);
    }
    shape[d] = static_cast<int>(e);
    n *= e;
  }
  std::vector<double> data(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (f.gcount() != 8) throw ParseError("truncated TNSR payload in " + path.string(), offset);
    offset += 8;
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    data[static_cast<std::size_t>(i)] = std::bit_cast<double>(u);
  }
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) {
    throw NumericError("non-finite values in tensor file " + path.string());
  }
  return t;
}

}  // namespace xai
