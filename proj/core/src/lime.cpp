#include "xai/lime.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "xai/errors.hpp"
#include "xai/rng.hpp"

namespace xai {

namespace {

// Intensity scale of the SLIC distance; small values let boundaries follow
// image edges rather than the spatial grid.
constexpr double kIntensityScale = 0.25;
constexpr int kSlicIterations = 10;

Tensor intensity_image(const Tensor& image) {
  if (image.rank() == 2) return image;
  if (image.rank() != 3) {
    throw ShapeError("segmentation expects [H,W] or [C,H,W], got " +
                     shape_to_string(image.shape()));
  }
  const int C = image.extent(0), H = image.extent(1), W = image.extent(2);
  Tensor out({H, W});
  const double inv = 1.0 / static_cast<double>(C);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        out.at2(y, x) += image.at3(c, y, x) * inv;
      }
    }
  }
  return out;
}

struct Center {
  double intensity = 0.0;
  double y = 0.0;
  double x = 0.0;
};

// Relabels to connected components, merging those below min_size into the
// largest adjacent component. Returns the component count.
int enforce_connectivity(std::vector<int>& labels, int H, int W, int min_size) {
  const int n = H * W;
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  std::vector<int> comp_size;
  std::deque<int> queue;
  for (int start = 0; start < n; ++start) {
    if (comp[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(comp_size.size());
    comp[static_cast<std::size_t>(start)] = id;
    int size = 0;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++size;
      const int py = p / W, px = p % W;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int qy = py + dy[d], qx = px + dx[d];
        if (qy < 0 || qy >= H || qx < 0 || qx >= W) continue;
        const int q = qy * W + qx;
        if (comp[static_cast<std::size_t>(q)] >= 0) continue;
        if (labels[static_cast<std::size_t>(q)] != labels[static_cast<std::size_t>(p)]) continue;
        comp[static_cast<std::size_t>(q)] = id;
        queue.push_back(q);
      }
    }
    comp_size.push_back(size);
  }

  // Merge small components into the adjacent component with the most pixels
  // (ties broken toward the smaller id).
  std::vector<int> remap(comp_size.size());
  std::iota(remap.begin(), remap.end(), 0);
  auto resolve = [&](int id) {
    while (remap[static_cast<std::size_t>(id)] != id) id = remap[static_cast<std::size_t>(id)];
    return id;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t id = 0; id < comp_size.size(); ++id) {
      const int rid = resolve(static_cast<int>(id));
      if (static_cast<std::size_t>(rid) != id) continue;
      if (comp_size[static_cast<std::size_t>(rid)] >= min_size) continue;
      int best = -1, best_size = -1;
      for (int p = 0; p < n; ++p) {
        if (resolve(comp[static_cast<std::size_t>(p)]) != rid) continue;
        const int py = p / W, px = p % W;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int qy = py + dy[d], qx = px + dx[d];
          if (qy < 0 || qy >= H || qx < 0 || qx >= W) continue;
          const int other = resolve(comp[static_cast<std::size_t>(qy * W + qx)]);
          if (other == rid) continue;
          const int osize = comp_size[static_cast<std::size_t>(other)];
          if (osize > best_size || (osize == best_size && other < best)) {
            best = other;
            best_size = osize;
          }
        }
      }
      if (best >= 0) {
        remap[static_cast<std::size_t>(rid)] = best;
        comp_size[static_cast<std::size_t>(best)] += comp_size[static_cast<std::size_t>(rid)];
        comp_size[static_cast<std::size_t>(rid)] = 0;
        changed = true;
      }
    }
  }

  // Compact ids in first-occurrence order.
  std::vector<int> compact(comp_size.size(), -1);
  int next = 0;
  for (int p = 0; p < n; ++p) {
    const int rid = resolve(comp[static_cast<std::size_t>(p)]);
    if (compact[static_cast<std::size_t>(rid)] < 0) compact[static_cast<std::size_t>(rid)] = next++;
    labels[static_cast<std::size_t>(p)] = compact[static_cast<std::size_t>(rid)];
  }
  return next;
}

SuperpixelMap grid_fallback(int H, int W, int target) {
  int rows = std::clamp(
      static_cast<int>(std::lround(std::sqrt(static_cast<double>(target) * H / W))), 1, H);
  int cols = std::clamp((target + rows - 1) / rows, 1, W);
  SuperpixelMap sp;
  sp.height = H;
  sp.width = W;
  sp.labels.resize(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int r = std::min(rows - 1, y * rows / H);
      const int c = std::min(cols - 1, x * cols / W);
      sp.labels[static_cast<std::size_t>(y) * W + x] = r * cols + c;
    }
  }
  sp.num_segments = rows * cols;
  return sp;
}

}  // namespace

SuperpixelMap segment_superpixels(const Tensor& image, int target_segments,
                                  std::uint64_t /*seed*/) {
  const Tensor gray = intensity_image(image);
  const int H = gray.extent(0), W = gray.extent(1);
  if (H < 2 || W < 2) {
    throw ContractError("segmentation needs at least a 2x2 image, got " +
                        shape_to_string(gray.shape()));
  }
  const int pixels = H * W;
  if (target_segments < 2 || target_segments > pixels) {
    throw ContractError("target_segments must be in [2, " + std::to_string(pixels) + "], got " +
                        std::to_string(target_segments));
  }

  const double interval = std::sqrt(static_cast<double>(pixels) / target_segments);
  const int ncy = std::clamp(static_cast<int>(std::lround(H / interval)), 1, H);
  const int ncx = std::clamp(static_cast<int>(std::lround(W / interval)), 1, W);

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(ncy) * ncx);
  for (int cy = 0; cy < ncy; ++cy) {
    for (int cx = 0; cx < ncx; ++cx) {
      Center c;
      c.y = (cy + 0.5) * H / ncy - 0.5;
      c.x = (cx + 0.5) * W / ncx - 0.5;
      c.intensity = gray.at2(static_cast<int>(std::lround(std::clamp(c.y, 0.0, H - 1.0))),
                             static_cast<int>(std::lround(std::clamp(c.x, 0.0, W - 1.0))));
      centers.push_back(c);
    }
  }

  std::vector<int> labels(static_cast<std::size_t>(pixels), -1);
  std::vector<double> best(static_cast<std::size_t>(pixels), 0.0);
  const int window = std::max(2, static_cast<int>(std::ceil(interval)) + 1);
  const double inv_interval2 = 1.0 / (interval * interval);
  const double inv_color2 = 1.0 / (kIntensityScale * kIntensityScale);

  for (int iter = 0; iter < kSlicIterations; ++iter) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y)) - window);
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(c.y)) + window);
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x)) - window);
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(c.x)) + window);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dI = gray.at2(y, x) - c.intensity;
          const double dy = y - c.y, dx = x - c.x;
          const double dist = dI * dI * inv_color2 + (dy * dy + dx * dx) * inv_interval2;
          const std::size_t p = static_cast<std::size_t>(y) * W + x;
          if (dist < best[p]) {
            best[p] = dist;
            labels[p] = static_cast<int>(k);
          }
        }
      }
    }
    // Window misses are possible once centers drift; assign by full scan.
    for (int p = 0; p < pixels; ++p) {
      if (labels[static_cast<std::size_t>(p)] >= 0) continue;
      const int y = p / W, x = p % W;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double dI = gray.at2(y, x) - centers[k].intensity;
        const double dy = y - centers[k].y, dx = x - centers[k].x;
        const double dist = dI * dI * inv_color2 + (dy * dy + dx * dx) * inv_interval2;
        if (dist < bd) {
          bd = dist;
          labels[static_cast<std::size_t>(p)] = static_cast<int>(k);
        }
      }
    }

    std::vector<double> sum_i(centers.size(), 0.0), sum_y(centers.size(), 0.0),
        sum_x(centers.size(), 0.0);
    std::vector<int> count(centers.size(), 0);
    for (int p = 0; p < pixels; ++p) {
      const int k = labels[static_cast<std::size_t>(p)];
      sum_i[static_cast<std::size_t>(k)] += gray[p];
      sum_y[static_cast<std::size_t>(k)] += p / W;
      sum_x[static_cast<std::size_t>(k)] += p % W;
      count[static_cast<std::size_t>(k)]++;
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (count[k] == 0) continue;
      centers[k].intensity = sum_i[k] / count[k];
      centers[k].y = sum_y[k] / count[k];
      centers[k].x = sum_x[k] / count[k];
    }
  }

  const int min_size = std::max(1, pixels / target_segments / 4);
  int segments = enforce_connectivity(labels, H, W, min_size);

  // Merge the smallest segments while above the contract's upper bound.
  while (segments > 2 * target_segments) {
    std::vector<int> sizes(static_cast<std::size_t>(segments), 0);
    for (int v : labels) sizes[static_cast<std::size_t>(v)]++;
    const int victim = static_cast<int>(
        std::min_element(sizes.begin(), sizes.end()) - sizes.begin());
    int best_nb = -1, best_size = -1;
    for (int p = 0; p < pixels; ++p) {
      if (labels[static_cast<std::size_t>(p)] != victim) continue;
      const int py = p / W, px = p % W;
      const int dys[4] = {-1, 1, 0, 0}, dxs[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int qy = py + dys[d], qx = px + dxs[d];
        if (qy < 0 || qy >= H || qx < 0 || qx >= W) continue;
        const int other = labels[static_cast<std::size_t>(qy) * W + qx];
        if (other == victim) continue;
        if (sizes[static_cast<std::size_t>(other)] > best_size ||
            (sizes[static_cast<std::size_t>(other)] == best_size && other < best_nb)) {
          best_nb = other;
          best_size = sizes[static_cast<std::size_t>(other)];
        }
      }
    }
    for (int& v : labels) {
      if (v == victim) v = best_nb;
    }
    std::vector<int> compact(static_cast<std::size_t>(segments), -1);
    int next = 0;
    for (int& v : labels) {
      if (compact[static_cast<std::size_t>(v)] < 0) compact[static_cast<std::size_t>(v)] = next++;
      v = compact[static_cast<std::size_t>(v)];
    }
    segments = next;
  }

  if (segments < std::max(2, target_segments / 2)) {
    return grid_fallback(H, W, target_segments);
  }

  SuperpixelMap sp;
  sp.height = H;
  sp.width = W;
  sp.labels = std::move(labels);
  sp.num_segments = segments;
  return sp;
}

Tensor apply_mask(const Tensor& x, const SuperpixelMap& sp, std::span<const std::uint8_t> z,
                  Baseline baseline) {
  if (x.rank() != 3) {
    throw ShapeError("apply_mask expects [C,H,W], got " + shape_to_string(x.shape()));
  }
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  if (sp.height != H || sp.width != W) {
    throw ShapeError("superpixel map " + std::to_string(sp.height) + "x" +
                     std::to_string(sp.width) + " does not match image " + std::to_string(H) +
                     "x" + std::to_string(W));
  }
  if (static_cast<int>(z.size()) != sp.num_segments) {
    throw ContractError("mask vector length " + std::to_string(z.size()) +
                        " does not match segment count " + std::to_string(sp.num_segments));
  }
  std::vector<double> fill(static_cast<std::size_t>(C), 0.0);
  if (baseline == Baseline::MeanColor) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) sum += x[c * hw + i];
      fill[static_cast<std::size_t>(c)] = sum / static_cast<double>(hw);
    }
  }
  Tensor out = x;
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      if (z[static_cast<std::size_t>(sp.at(y, xx))]) continue;
      for (int c = 0; c < C; ++c) out.at3(c, y, xx) = fill[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

namespace {

double kernel_weight(std::span<const std::uint8_t> z, double kernel_width) {
  std::int64_t on = 0;
  for (std::uint8_t b : z) on += b;
  const double S = static_cast<double>(z.size());
  // Cosine distance between the binary vector and the all-ones vector.
  const double d = on == 0 ? 1.0 : 1.0 - std::sqrt(static_cast<double>(on) / S);
  return std::exp(-(d * d) / (kernel_width * kernel_width));
}

void validate_config(const LimeConfig& cfg, int num_segments) {
  if (cfg.kernel_width <= 0.0) throw ContractError("kernel_width must be > 0");
  if (cfg.num_samples < num_segments) {
    throw ContractError("num_samples (" + std::to_string(cfg.num_samples) +
                        ") must be >= segment count (" + std::to_string(num_segments) + ")");
  }
  if (cfg.max_features < 1) throw ContractError("max_features must be >= 1");
}

}  // namespace

LimeSampleSet sample_neighborhood(const Tensor& x, const SuperpixelMap& sp,
                                  const LimeConfig& cfg, const PredictFn& predict) {
  validate_config(cfg, sp.num_segments);
  const int S = sp.num_segments;
  Rng rng(cfg.seed);

  LimeSampleSet set;
  set.num_segments = S;
  set.rows.reserve(static_cast<std::size_t>(cfg.num_samples) + 1);
  for (int i = 0; i < cfg.num_samples; ++i) {
    LimeSample row;
    row.z.resize(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) row.z[static_cast<std::size_t>(s)] = rng.bernoulli(0.5) ? 1 : 0;
    const Tensor h = apply_mask(x, sp, row.z, cfg.baseline);
    row.prediction = predict(h);
    if (!std::isfinite(row.prediction)) {
      throw NumericError("predictor returned a non-finite value at sample " + std::to_string(i));
    }
    row.weight = kernel_weight(row.z, cfg.kernel_width);
    set.rows.push_back(std::move(row));
  }
  LimeSample pivot;
  pivot.z.assign(static_cast<std::size_t>(S), 1);
  pivot.prediction = predict(x);
  if (!std::isfinite(pivot.prediction)) {
    throw NumericError("predictor returned a non-finite value on the unperturbed instance");
  }
  pivot.weight = 1.0;
  set.rows.push_back(std::move(pivot));
  return set;
}

namespace {

struct LassoFit {
  std::vector<double> beta;
  double intercept = 0.0;
};

// Weighted lasso coordinate descent on binary features. Only features in
// `active` are updated; the rest stay at zero.
LassoFit lasso_cd(const std::vector<LimeSample>& rows, int S, const std::vector<int>& active,
                  double lambda) {
  const std::size_t n = rows.size();
  LassoFit fit;
  fit.beta.assign(static_cast<std::size_t>(S), 0.0);

  double wsum = 0.0, wysum = 0.0;
  for (const LimeSample& r : rows) {
    wsum += r.weight;
    wysum += r.weight * r.prediction;
  }
  fit.intercept = wysum / wsum;

  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = rows[i].prediction - fit.intercept;

  std::vector<double> nu(static_cast<std::size_t>(S), 0.0);
  for (const LimeSample& r : rows) {
    for (int s : active) {
      if (r.z[static_cast<std::size_t>(s)]) nu[static_cast<std::size_t>(s)] += r.weight;
    }
  }

  for (int sweep = 0; sweep < 2000; ++sweep) {
    double max_delta = 0.0;

    double rbar = 0.0;
    for (std::size_t i = 0; i < n; ++i) rbar += rows[i].weight * residual[i];
    rbar /= wsum;
    if (rbar != 0.0) {
      fit.intercept += rbar;
      for (double& r : residual) r -= rbar;
      max_delta = std::abs(rbar);
    }

    for (int s : active) {
      const double beta_old = fit.beta[static_cast<std::size_t>(s)];
      double rho = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (rows[i].z[static_cast<std::size_t>(s)]) {
          rho += rows[i].weight * (residual[i] + beta_old);
        }
      }
      double beta_new = 0.0;
      if (rho > lambda) {
        beta_new = (rho - lambda) / nu[static_cast<std::size_t>(s)];
      } else if (rho < -lambda) {
        beta_new = (rho + lambda) / nu[static_cast<std::size_t>(s)];
      }
      const double delta = beta_new - beta_old;
      if (delta != 0.0) {
        fit.beta[static_cast<std::size_t>(s)] = beta_new;
        for (std::size_t i = 0; i < n; ++i) {
          if (rows[i].z[static_cast<std::size_t>(s)]) residual[i] -= delta;
        }
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta < 1e-12) break;
  }

  // Intercept re-centering leaves O(1e-18) dust on coefficients the
  // soft-threshold keeps at zero in exact arithmetic; snap it out.
  double yscale = 1.0;
  for (const LimeSample& r : rows) yscale = std::max(yscale, std::abs(r.prediction));
  for (double& b : fit.beta) {
    if (std::abs(b) < 1e-12 * yscale) b = 0.0;
  }
  return fit;
}

int nonzero_count(const std::vector<double>& beta) {
  int nnz = 0;
  for (double b : beta) nnz += (b != 0.0);
  return nnz;
}

}  // namespace

LimeExplanation fit_surrogate(const LimeSampleSet& samples, const SuperpixelMap& sp,
                              const LimeConfig& cfg) {
  const int S = samples.num_segments;
  if (static_cast<int>(samples.rows.size()) < S + 1) {
    throw ContractError("fit_surrogate needs at least S+1 samples, got " +
                        std::to_string(samples.rows.size()));
  }

  LimeExplanation exp;
  exp.config = cfg;

  // Features never toggled carry no information; their coefficients stay 0.
  std::vector<int> active;
  for (int s = 0; s < S; ++s) {
    bool saw0 = false, saw1 = false;
    for (const LimeSample& r : samples.rows) {
      (r.z[static_cast<std::size_t>(s)] ? saw1 : saw0) = true;
      if (saw0 && saw1) break;
    }
    if (saw0 && saw1) {
      active.push_back(s);
    } else {
      exp.warnings.push_back("superpixel " + std::to_string(s) +
                             " never toggled; coefficient forced to 0");
    }
  }

  double wsum = 0.0, wysum = 0.0;
  for (const LimeSample& r : samples.rows) {
    wsum += r.weight;
    wysum += r.weight * r.prediction;
  }
  const double ybar = wysum / wsum;

  double lambda_max = 0.0;
  for (int s : active) {
    double rho = 0.0;
    for (const LimeSample& r : samples.rows) {
      if (r.z[static_cast<std::size_t>(s)]) rho += r.weight * (r.prediction - ybar);
    }
    lambda_max = std::max(lambda_max, std::abs(rho));
  }

  LassoFit fit;
  if (cfg.lasso_lambda >= 0.0) {
    fit = lasso_cd(samples.rows, S, active, cfg.lasso_lambda);
    exp.lambda_used = cfg.lasso_lambda;
    if (nonzero_count(fit.beta) > cfg.max_features) {
      std::vector<int> order(static_cast<std::size_t>(S));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(fit.beta[static_cast<std::size_t>(a)]) >
               std::abs(fit.beta[static_cast<std::size_t>(b)]);
      });
      for (std::size_t k = static_cast<std::size_t>(cfg.max_features); k < order.size(); ++k) {
        fit.beta[static_cast<std::size_t>(order[k])] = 0.0;
      }
      exp.warnings.push_back("explicit lambda kept more than max_features coefficients; "
                             "smallest were truncated to 0");
    }
  } else {
    // Walk the path downward and keep the densest fit still within
    // max_features nonzero coefficients.
    double lambda = lambda_max;
    LassoFit last_good = lasso_cd(samples.rows, S, active, lambda);
    double last_lambda = lambda;
    for (int step = 0; step < 60 && lambda > lambda_max * 1e-12; ++step) {
      lambda *= 0.7;
      LassoFit candidate = lasso_cd(samples.rows, S, active, lambda);
      if (nonzero_count(candidate.beta) > cfg.max_features) break;
      last_good = std::move(candidate);
      last_lambda = lambda;
    }
    fit = std::move(last_good);
    exp.lambda_used = last_lambda;
  }

  exp.coefficients = fit.beta;
  exp.intercept = fit.intercept;

  double ss_res = 0.0, ss_tot = 0.0;
  for (const LimeSample& r : samples.rows) {
    double yhat = fit.intercept;
    for (int s : active) {
      if (r.z[static_cast<std::size_t>(s)]) yhat += fit.beta[static_cast<std::size_t>(s)];
    }
    ss_res += r.weight * (r.prediction - yhat) * (r.prediction - yhat);
    ss_tot += r.weight * (r.prediction - ybar) * (r.prediction - ybar);
  }
  exp.r2_raw = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  exp.r2 = std::clamp(exp.r2_raw, 0.0, 1.0);

  exp.heatmap = Tensor({sp.height, sp.width});
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      exp.heatmap.at2(y, x) = exp.coefficients[static_cast<std::size_t>(sp.at(y, x))];
    }
  }
  return exp;
}

LimeExplanation explain_lime(const Network& net, const Tensor& x, int class_index,
                             const LimeConfig& cfg) {
  if (class_index < 0 || class_index >= net.num_classes()) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(net.num_classes()) + ")");
  }
  const SuperpixelMap sp = segment_superpixels(x, cfg.target_segments, cfg.seed);
  const PredictFn predict = [&net, class_index](const Tensor& img) {
    return forward(net, img).probs.at1(class_index);
  };
  const LimeSampleSet samples = sample_neighborhood(x, sp, cfg, predict);
  return fit_surrogate(samples, sp, cfg);
}

}  // namespace xai
