#pragma once

#include <filesystem>
#include <string>

#include "xai/tensor.hpp"

namespace xai {

enum class NormalizeMode { MinMax, PositiveOnly };

/// Per-pixel relevance scores at input resolution, signed, with provenance.
struct Heatmap {
  Tensor scores;  // [H,W]
  std::string method;
  int class_index = -1;
  std::string normalization;  // "" raw, "minmax", "positive-only"
  bool degenerate = false;    // constant scores at normalize time
};

enum class MaskSource { Predicted, GroundTruth };

/// Binary per-pixel mask; values are exactly 0.0 or 1.0.
struct SegmentationMask {
  Tensor mask;  // [H,W]
  MaskSource source = MaskSource::Predicted;

  std::int64_t count() const;
};

/// MinMax: affine rescale onto [0,1]. PositiveOnly: clamp negatives to zero,
/// then minmax the clamped map. A constant input yields all zeros with the
/// degenerate flag set.
Heatmap normalize(const Heatmap& h, NormalizeMode mode);

/// mask = 1 where normalized score >= tau. tau must be in [0,1].
SegmentationMask threshold(const Heatmap& h, double tau);

NormalizeMode default_normalization(const std::string& method);
std::string normalize_mode_name(NormalizeMode mode);

// Binary PGM (P5, 8-bit) IO. Masks are written as 0/255 and read back with
// the >=128 rule; images are byte values scaled onto [0,1].
void save_mask(const std::filesystem::path& path, const SegmentationMask& mask);
SegmentationMask load_mask(const std::filesystem::path& path,
                           MaskSource source = MaskSource::GroundTruth);

void save_pgm(const std::filesystem::path& path, const Tensor& image);  // values in [0,1]
Tensor load_pgm(const std::filesystem::path& path);

/// Min-max normalized 8-bit preview of arbitrary scores.
void save_preview(const std::filesystem::path& path, const Tensor& scores);

}  // namespace xai
