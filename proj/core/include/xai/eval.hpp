#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xai/heatmap.hpp"

namespace xai {

struct IoUResult {
  double value = 0.0;
  bool degenerate = false;  // both masks empty
};

/// |pred AND gt| / |pred OR gt|. Both-empty is 0 with the degenerate flag.
IoUResult iou(const SegmentationMask& pred, const SegmentationMask& gt);

/// Mann-Whitney rank AUROC with midranks for ties. Throws if either class is
/// absent, naming the missing side.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Step-interpolated area under the precision-recall curve. Throws if no
/// positives are present.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct IoURecord {
  std::string instance_id;
  int class_id = 0;
  std::string method;
  double tau = 0.0;
  double iou = 0.0;
  bool degenerate = false;
};

struct IoUStats {
  double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
  int count = 0;             // records contributing to the statistics
  int degenerate_count = 0;  // excluded from the statistics, counted here
};

struct PredictionClassMetrics {
  int class_id = 0;
  int positives = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  bool valid = false;  // false when a class is missing (e.g. no positives)
  std::string note;
};

struct PredictionMetrics {
  std::vector<PredictionClassMetrics> per_class;
  double weighted_auroc = 0.0;
  double weighted_auprc = 0.0;
  std::string weight_scheme;
};

struct EvalReport {
  std::vector<IoURecord> records;
  std::map<std::string, IoUStats> per_method;
  std::map<std::pair<std::string, int>, IoUStats> per_method_class;
  double overall_mean = 0.0;
  PredictionMetrics prediction;
};

/// Per-class and per-method mean/median/quartiles (linear interpolation
/// between order statistics). Degenerate records are excluded from the
/// statistics but counted. Records are re-sorted into the canonical
/// (instance, class, method, tau) order so reports are byte-stable.
EvalReport aggregate(std::vector<IoURecord> records);

/// Per-class AUROC/AUPRC over a score matrix [instance][class], weighted
/// averages weighted by positive-instance count. Classes with a single label
/// value are reported invalid with a note instead of failing the run.
PredictionMetrics prediction_metrics(const std::vector<std::vector<double>>& scores,
                                     const std::vector<std::vector<int>>& labels);

/// Fixed 9-significant-digit decimal formatting used by all report files.
std::string format_double(double v);

void write_records_csv(const std::filesystem::path& path, const std::vector<IoURecord>& records);
void write_summary_json(const std::filesystem::path& path, const EvalReport& report, double tau);

}  // namespace xai
