#include "xai/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xai/errors.hpp"

namespace xai {

IoUResult iou(const SegmentationMask& pred, const SegmentationMask& gt) {
  if (!pred.mask.same_shape(gt.mask)) {
    throw ShapeError("mask shapes differ: " + shape_to_string(pred.mask.shape()) + " vs " +
                     shape_to_string(gt.mask.shape()));
  }
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < pred.mask.size(); ++i) {
    const bool a = pred.mask[i] != 0.0;
    const bool b = gt.mask[i] != 0.0;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

namespace {

void check_score_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("scores and labels differ in length");
  }
  if (scores.empty()) throw ContractError("no scored instances");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite score in metric input");
  }
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_score_labels(scores, labels);
  std::int64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg)++;
  if (pos == 0) throw ContractError("AUROC undefined: no positive instances");
  if (neg == 0) throw ContractError("AUROC undefined: no negative instances");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie blocks, then the Mann-Whitney statistic.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) pos_rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_score_labels(scores, labels);
  std::int64_t pos = 0;
  for (int y : labels) pos += (y != 0);
  if (pos == 0) throw ContractError("AUPRC undefined: no positive instances");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Descending sweep; tied scores form a single operating point.
  double area = 0.0;
  double prev_recall = 0.0;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) ++tp; else ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += precision * (recall - prev_recall);
    prev_recall = recall;
    i = j;
  }
  return area;
}

namespace {

// Quantile with linear interpolation between order statistics, on sorted v.
double quantile(const std::vector<double>& v, double q) {
  if (v.size() == 1) return v[0];
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

IoUStats stats_of(std::vector<double> values, int degenerate_count) {
  IoUStats s;
  s.degenerate_count = degenerate_count;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.min = values.front();
  s.max = values.back();
  return s;
}

}  // namespace

EvalReport aggregate(std::vector<IoURecord> records) {
  if (records.empty()) throw ContractError("aggregate requires at least one record");
  std::sort(records.begin(), records.end(), [](const IoURecord& a, const IoURecord& b) {
    return std::tie(a.instance_id, a.class_id, a.method, a.tau) <
           std::tie(b.instance_id, b.class_id, b.method, b.tau);
  });

  EvalReport report;
  std::map<std::string, std::vector<double>> by_method;
  std::map<std::string, int> by_method_degenerate;
  std::map<std::pair<std::string, int>, std::vector<double>> by_mc;
  std::map<std::pair<std::string, int>, int> by_mc_degenerate;
  std::vector<double> all;
  for (const IoURecord& r : records) {
    if (r.degenerate) {
      by_method_degenerate[r.method]++;
      by_mc_degenerate[{r.method, r.class_id}]++;
      continue;
    }
    by_method[r.method].push_back(r.iou);
    by_mc[{r.method, r.class_id}].push_back(r.iou);
    all.push_back(r.iou);
  }
  for (auto& [method, values] : by_method) {
    report.per_method[method] = stats_of(std::move(values), by_method_degenerate[method]);
  }
  for (auto& [key, values] : by_mc) {
    report.per_method_class[key] = stats_of(std::move(values), by_mc_degenerate[key]);
  }
  for (auto& [method, count] : by_method_degenerate) {
    if (!report.per_method.count(method)) report.per_method[method] = stats_of({}, count);
  }
  for (auto& [key, count] : by_mc_degenerate) {
    if (!report.per_method_class.count(key)) report.per_method_class[key] = stats_of({}, count);
  }
  report.overall_mean =
      all.empty() ? 0.0 : std::accumulate(all.begin(), all.end(), 0.0) / all.size();
  report.records = std::move(records);
  return report;
}

PredictionMetrics prediction_metrics(const std::vector<std::vector<double>>& scores,
                                     const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ContractError("prediction_metrics needs matching, nonempty scores and labels");
  }
  const std::size_t num_classes = labels[0].size();
  PredictionMetrics pm;
  pm.weight_scheme = "per-class weight = positive-instance count";
  double weight_sum = 0.0, auroc_sum = 0.0, auprc_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    PredictionClassMetrics m;
    m.class_id = static_cast<int>(c);
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][c];
      y[i] = labels[i][c];
      m.positives += labels[i][c] != 0;
    }
    try {
      m.auroc = auroc(s, y);
      m.auprc = auprc(s, y);
      m.valid = true;
      const double w = static_cast<double>(m.positives);
      weight_sum += w;
      auroc_sum += w * m.auroc;
      auprc_sum += w * m.auprc;
    } catch (const ContractError& e) {
      m.valid = false;
      m.note = std::string("class ") + std::to_string(c) + " excluded: " + e.what();
    }
    pm.per_class.push_back(std::move(m));
  }
  if (weight_sum > 0.0) {
    pm.weighted_auroc = auroc_sum / weight_sum;
    pm.weighted_auprc = auprc_sum / weight_sum;
  }
  return pm;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<IoURecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "instance_id,class_id,method,tau,iou,degenerate\n";
  for (const IoURecord& r : records) {
    f << r.instance_id << "," << r.class_id << "," << r.method << "," << format_double(r.tau)
      << "," << format_double(r.iou) << "," << (r.degenerate ? 1 : 0) << "\n";
  }
  if (!f) throw IoError("write failed for " + path.string());
}

void write_summary_json(const std::filesystem::path& path, const EvalReport& report,
                        double tau) {
  using nlohmann::json;
  json doc;
  doc["format_version"] = 1;
  doc["tau"] = format_double(tau);
  doc["overall_mean_iou"] = format_double(report.overall_mean);

  auto stats_json = [](const IoUStats& s) {
    json j;
    j["mean"] = format_double(s.mean);
    j["median"] = format_double(s.median);
    j["q1"] = format_double(s.q1);
    j["q3"] = format_double(s.q3);
    j["min"] = format_double(s.min);
    j["max"] = format_double(s.max);
    j["count"] = s.count;
    j["degenerate_count"] = s.degenerate_count;
    return j;
  };

  json methods = json::object();
  for (const auto& [method, stats] : report.per_method) {
    methods[method] = stats_json(stats);
  }
  doc["per_method"] = std::move(methods);

  json per_class = json::array();
  for (const auto& [key, stats] : report.per_method_class) {
    json j = stats_json(stats);
    j["method"] = key.first;
    j["class_id"] = key.second;
    per_class.push_back(std::move(j));
  }
  doc["per_method_class"] = std::move(per_class);

  json pred;
  pred["weight_scheme"] = report.prediction.weight_scheme;
  pred["weighted_auroc"] = format_double(report.prediction.weighted_auroc);
  pred["weighted_auprc"] = format_double(report.prediction.weighted_auprc);
  json classes = json::array();
  for (const PredictionClassMetrics& m : report.prediction.per_class) {
    json j;
    j["class_id"] = m.class_id;
    j["positives"] = m.positives;
    j["valid"] = m.valid;
    if (m.valid) {
      j["auroc"] = format_double(m.auroc);
      j["auprc"] = format_double(m.auprc);
    } else {
      j["note"] = m.note;
    }
    classes.push_back(std::move(j));
  }
  pred["per_class"] = std::move(classes);
  doc["prediction"] = std::move(pred);

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

}  // namespace xai
