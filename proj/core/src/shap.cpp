#include "xai/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>

#include "xai/errors.hpp"
#include "xai/rng.hpp"

namespace xai {

namespace {

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) {
    r *= static_cast<double>(n - i + 1) / static_cast<double>(i);
  }
  return r;
}

std::vector<std::uint8_t> mask_bits(std::uint32_t mask, int M) {
  std::vector<std::uint8_t> z(static_cast<std::size_t>(M), 0);
  for (int i = 0; i < M; ++i) z[static_cast<std::size_t>(i)] = (mask >> i) & 1u;
  return z;
}

}  // namespace

std::vector<double> exact_shapley(const CoalitionValueFn& value_fn, int M) {
  if (M < 1) throw ContractError("exact_shapley needs at least one feature");
  if (M > 20) {
    throw ContractError("exact_shapley enumerates 2^M coalitions and is limited to M <= 20 "
                        "(got M=" + std::to_string(M) + "); use kernel_shap instead");
  }
  const std::uint32_t total = 1u << M;
  std::vector<double> value(total);
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    value[mask] = value_fn(mask_bits(mask, M));
  }

  // weight(s) = s!(M-s-1)!/M! = 1 / (M * C(M-1, s))
  std::vector<double> weight(static_cast<std::size_t>(M), 0.0);
  for (int s = 0; s < M; ++s) {
    weight[static_cast<std::size_t>(s)] = 1.0 / (static_cast<double>(M) * binomial(M - 1, s));
  }

  std::vector<double> phi(static_cast<std::size_t>(M), 0.0);
  for (int i = 0; i < M; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t mask = 0; mask < total; ++mask) {
      if (mask & bit) continue;
      const int s = std::popcount(mask);
      acc += weight[static_cast<std::size_t>(s)] * (value[mask | bit] - value[mask]);
    }
    phi[static_cast<std::size_t>(i)] = acc;
  }
  return phi;
}

double shapley_kernel_weight(int M, int s) {
  return static_cast<double>(M - 1) / (binomial(M, s) * s * (M - s));
}

namespace {

// Gaussian elimination with partial pivoting; returns false when a pivot
// vanishes relative to the matrix scale.
bool solve_dense(std::vector<std::vector<double>>& A, std::vector<double>& b,
                 std::vector<double>& out) {
  const std::size_t n = b.size();
  double scale = 0.0;
  for (const auto& row : A) {
    for (double v : row) scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) return false;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
    }
    if (std::abs(A[pivot][col]) < 1e-12 * scale) return false;
    std::swap(A[col], A[pivot]);
    std::swap(b[col], b[pivot]);
    const double inv = 1.0 / A[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r][col] * inv;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  out.assign(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double acc = b[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= A[r][c] * out[c];
    out[r] = acc / A[r][r];
  }
  return true;
}

struct CoalitionRow {
  std::vector<std::uint8_t> z;
  double value = 0.0;
  double weight = 0.0;
};

}  // namespace

std::vector<double> kernel_shap_solve(const CoalitionValueFn& value_fn, int M,
                                      int num_coalitions, std::uint64_t seed, bool* exact_out,
                                      std::vector<std::string>* warnings) {
  if (M < 1) throw ContractError("kernel_shap needs at least one feature");
  const bool enumerable = M <= 22;
  const std::int64_t full_count = enumerable ? (std::int64_t(1) << M) - 2 : -1;
  const bool full = enumerable && num_coalitions >= full_count;
  if (!full && num_coalitions < M + 2) {
    throw ContractError("num_coalitions must be >= M+2 (" + std::to_string(M + 2) + "), got " +
                        std::to_string(num_coalitions));
  }

  std::map<std::vector<std::uint8_t>, double> memo;
  auto v = [&](const std::vector<std::uint8_t>& z) {
    auto it = memo.find(z);
    if (it != memo.end()) return it->second;
    const double val = value_fn(z);
    if (!std::isfinite(val)) throw NumericError("coalition value function returned non-finite");
    memo.emplace(z, val);
    return val;
  };

  const double base = v(std::vector<std::uint8_t>(static_cast<std::size_t>(M), 0));
  const double fx = v(std::vector<std::uint8_t>(static_cast<std::size_t>(M), 1));
  const double delta = fx - base;

  if (exact_out) *exact_out = full;
  if (M == 1) return {delta};

  std::vector<CoalitionRow> rows;
  if (full) {
    rows.reserve(static_cast<std::size_t>(full_count));
    for (std::uint32_t mask = 1; mask < (1u << M) - 1u; ++mask) {
      CoalitionRow row;
      row.z = mask_bits(mask, M);
      row.value = v(row.z);
      row.weight = shapley_kernel_weight(M, std::popcount(mask));
      rows.push_back(std::move(row));
    }
  } else {
    // Uniform coalitions from {0,1}^M minus the constraint rows, paired with
    // complements to reduce estimator variance.
    Rng rng(seed);
    rows.reserve(static_cast<std::size_t>(num_coalitions));
    while (static_cast<int>(rows.size()) < num_coalitions) {
      std::vector<std::uint8_t> z(static_cast<std::size_t>(M));
      int on = 0;
      do {
        on = 0;
        for (int i = 0; i < M; ++i) {
          z[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
          on += z[static_cast<std::size_t>(i)];
        }
      } while (on == 0 || on == M);

      CoalitionRow row;
      row.z = z;
      row.value = v(row.z);
      row.weight = shapley_kernel_weight(M, on);
      rows.push_back(std::move(row));
      if (static_cast<int>(rows.size()) >= num_coalitions) break;

      CoalitionRow comp;
      comp.z.resize(static_cast<std::size_t>(M));
      for (int i = 0; i < M; ++i) comp.z[static_cast<std::size_t>(i)] = 1 - z[static_cast<std::size_t>(i)];
      comp.value = v(comp.z);
      comp.weight = shapley_kernel_weight(M, M - on);
      rows.push_back(std::move(comp));
    }
  }

  // Efficiency is imposed exactly by eliminating the last attribution:
  // phi_last = delta - sum(others). Regress on u_i = z_i - z_last.
  const int n = M - 1;
  std::vector<std::vector<double>> A(static_cast<std::size_t>(n),
                                     std::vector<double>(static_cast<std::size_t>(n), 0.0));
  std::vector<double> b(static_cast<std::size_t>(n), 0.0);
  std::vector<double> u(static_cast<std::size_t>(n), 0.0);
  for (const CoalitionRow& row : rows) {
    const double zlast = row.z[static_cast<std::size_t>(M - 1)];
    for (int i = 0; i < n; ++i) {
      u[static_cast<std::size_t>(i)] = row.z[static_cast<std::size_t>(i)] - zlast;
    }
    const double target = row.value - base - zlast * delta;
    for (int p = 0; p < n; ++p) {
      const double up = u[static_cast<std::size_t>(p)];
      if (up == 0.0) continue;
      const double wup = row.weight * up;
      b[static_cast<std::size_t>(p)] += wup * target;
      for (int q = 0; q < n; ++q) {
        A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] +=
            wup * u[static_cast<std::size_t>(q)];
      }
    }
  }

  std::vector<double> sol;
  std::vector<std::vector<double>> A_copy = A;
  std::vector<double> b_copy = b;
  if (!solve_dense(A_copy, b_copy, sol)) {
    if (warnings) {
      warnings->push_back("singular weighted least squares system; ridge fallback with "
                          "jitter 1e-10 applied");
    }
    for (int i = 0; i < n; ++i) {
      A[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += 1e-10;
    }
    if (!solve_dense(A, b, sol)) {
      throw NumericError("weighted least squares system unsolvable even with ridge jitter");
    }
  }

  std::vector<double> phi(static_cast<std::size_t>(M), 0.0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    phi[static_cast<std::size_t>(i)] = sol[static_cast<std::size_t>(i)];
    sum += sol[static_cast<std::size_t>(i)];
  }
  phi[static_cast<std::size_t>(M - 1)] = delta - sum;
  return phi;
}

ShapExplanation kernel_shap(const Network& net, const Tensor& x, int class_index,
                            const SuperpixelMap& sp, const ShapConfig& cfg) {
  if (class_index < 0 || class_index >= net.num_classes()) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(net.num_classes()) + ")");
  }
  const int M = sp.num_segments;
  const CoalitionValueFn value_fn = [&](const std::vector<std::uint8_t>& z) {
    const Tensor h = apply_mask(x, sp, z, cfg.baseline);
    return forward(net, h).probs.at1(class_index);
  };

  ShapExplanation exp;
  exp.seed = cfg.seed;
  exp.phi = kernel_shap_solve(value_fn, M, cfg.num_coalitions, cfg.seed, &exp.exact,
                              &exp.warnings);
  exp.num_coalitions = cfg.num_coalitions;
  exp.base_value = value_fn(std::vector<std::uint8_t>(static_cast<std::size_t>(M), 0));
  exp.fx = value_fn(std::vector<std::uint8_t>(static_cast<std::size_t>(M), 1));

  exp.heatmap = Tensor({sp.height, sp.width});
  for (int y = 0; y < sp.height; ++y) {
    for (int xx = 0; xx < sp.width; ++xx) {
      exp.heatmap.at2(y, xx) = exp.phi[static_cast<std::size_t>(sp.at(y, xx))];
    }
  }
  return exp;
}

}  // namespace xai
