#include "xai/heatmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "xai/errors.hpp"

namespace xai {

std::int64_t SegmentationMask::count() const {
  std::int64_t n = 0;
  for (double v : mask.data()) n += (v != 0.0);
  return n;
}

Heatmap normalize(const Heatmap& h, NormalizeMode mode) {
  if (h.scores.rank() != 2) {
    throw ShapeError("heatmap scores must be [H,W], got " + shape_to_string(h.scores.shape()));
  }
  if (!h.scores.all_finite()) {
    throw NumericError("heatmap for method '" + h.method + "' contains non-finite scores");
  }
  Heatmap out = h;
  out.normalization = normalize_mode_name(mode);
  std::vector<double>& v = out.scores.data();
  if (mode == NormalizeMode::PositiveOnly) {
    for (double& x : v) x = std::max(x, 0.0);
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi == lo) {
    std::fill(v.begin(), v.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  const double range = hi - lo;
  for (double& x : v) x = (x - lo) / range;
  return out;
}

SegmentationMask threshold(const Heatmap& h, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ContractError("tau must be in [0,1], got " + std::to_string(tau));
  }
  if (h.scores.rank() != 2) {
    throw ShapeError("heatmap scores must be [H,W], got " + shape_to_string(h.scores.shape()));
  }
  SegmentationMask m;
  m.source = MaskSource::Predicted;
  m.mask = Tensor(h.scores.shape());
  for (std::int64_t i = 0; i < h.scores.size(); ++i) {
    m.mask[i] = h.scores[i] >= tau ? 1.0 : 0.0;
  }
  return m;
}

NormalizeMode default_normalization(const std::string& method) {
  // Grad-CAM maps are nonnegative by construction; the signed methods keep
  // only positive evidence before thresholding.
  if (method == "gradcam") return NormalizeMode::MinMax;
  return NormalizeMode::PositiveOnly;
}

std::string normalize_mode_name(NormalizeMode mode) {
  return mode == NormalizeMode::MinMax ? "minmax" : "positive-only";
}

namespace {

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<unsigned char> bytes;
};

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string read_token(std::ifstream& f, std::size_t& offset) {
  std::string tok;
  int c;
  while ((c = f.get()) != EOF) {
    ++offset;
    if (c == '#') {
      while ((c = f.get()) != EOF) {
        ++offset;
        if (c == '\n') break;
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) {
        f.unget();
        --offset;
        return tok;
      }
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_header_int(std::ifstream& f, std::size_t& offset, const std::string& what, int lo,
                     int hi) {
  const std::size_t at = offset;
  const std::string tok = read_token(f, offset);
  if (tok.empty()) throw ParseError("missing PGM " + what, at);
  int value = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw ParseError("malformed PGM " + what + " '" + tok + "'", at);
    value = value * 10 + (c - '0');
    if (value > hi) throw ParseError("PGM " + what + " out of range", at);
  }
  if (value < lo) throw ParseError("PGM " + what + " out of range", at);
  return value;
}

PgmImage load_pgm_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::size_t offset = 0;
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (!f || m0 != 'P' || m1 != '5') {
    throw ParseError("not a binary PGM (wrong magic) in " + path.string(), 0);
  }
  offset = 2;
  PgmImage img;
  img.width = parse_header_int(f, offset, "width", 1, 1 << 20);
  img.height = parse_header_int(f, offset, "height", 1, 1 << 20);
  img.maxval = parse_header_int(f, offset, "maxval", 1, 255);
  const int sep = f.get();
  ++offset;
  if (sep == EOF || !std::isspace(sep)) {
    throw ParseError("missing whitespace after PGM maxval", offset - 1);
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.bytes.resize(n);
  f.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n) {
    throw ParseError("truncated PGM payload in " + path.string(),
                     offset + static_cast<std::size_t>(f.gcount()));
  }
  return img;
}

void save_pgm_bytes(const std::filesystem::path& path, int width, int height,
                    const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_mask(const std::filesystem::path& path, const SegmentationMask& mask) {
  if (mask.mask.rank() != 2) {
    throw ShapeError("mask must be [H,W], got " + shape_to_string(mask.mask.shape()));
  }
  const int H = mask.mask.extent(0), W = mask.mask.extent(1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W);
  for (std::int64_t i = 0; i < mask.mask.size(); ++i) {
    bytes[static_cast<std::size_t>(i)] = mask.mask[i] != 0.0 ? 255 : 0;
  }
  save_pgm_bytes(path, W, H, bytes);
}

SegmentationMask load_mask(const std::filesystem::path& path, MaskSource source) {
  const PgmImage img = load_pgm_bytes(path);
  SegmentationMask m;
  m.source = source;
  m.mask = Tensor({img.height, img.width});
  for (std::size_t i = 0; i < img.bytes.size(); ++i) {
    m.mask[static_cast<std::int64_t>(i)] = img.bytes[i] >= 128 ? 1.0 : 0.0;
  }
  return m;
}

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) {
    throw ShapeError("image must be [H,W], got " + shape_to_string(image.shape()));
  }
  const int H = image.extent(0), W = image.extent(1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W);
  for (std::int64_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  save_pgm_bytes(path, W, H, bytes);
}

Tensor load_pgm(const std::filesystem::path& path) {
  const PgmImage img = load_pgm_bytes(path);
  Tensor t({img.height, img.width});
  const double inv = 1.0 / static_cast<double>(img.maxval);
  for (std::size_t i = 0; i < img.bytes.size(); ++i) {
    t[static_cast<std::int64_t>(i)] = img.bytes[i] * inv;
  }
  return t;
}

void save_preview(const std::filesystem::path& path, const Tensor& scores) {
  Heatmap h;
  h.scores = scores;
  h.method = "preview";
  save_pgm(path, normalize(h, NormalizeMode::MinMax).scores);
}

}  // namespace xai
