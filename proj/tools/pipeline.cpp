#include "pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xai/errors.hpp"
#include "xai/heatmap.hpp"
#include "xai/rng.hpp"

namespace xai::pipeline {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const fs::path labels_path = dir / "labels.csv";
  std::ifstream labels_file(labels_path);
  if (!labels_file) throw IoError("cannot open dataset labels " + labels_path.string());

  Dataset ds;
  ds.root = dir;
  std::string line;
  if (!std::getline(labels_file, line)) throw ParseError("empty labels.csv", 0);
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "instance_id") {
    throw ParseError("labels.csv must start with instance_id,label0,...", 0);
  }
  ds.num_classes = static_cast<int>(header.size()) - 1;

  std::map<std::string, std::size_t> index;
  while (std::getline(labels_file, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("labels.csv row with wrong field count: " + line, 0);
    }
    DatasetEntry entry;
    entry.id = fields[0];
    for (int c = 0; c < ds.num_classes; ++c) {
      entry.labels.push_back(fields[static_cast<std::size_t>(c) + 1] == "1" ? 1 : 0);
    }
    entry.mask_paths.resize(static_cast<std::size_t>(ds.num_classes));
    index[entry.id] = ds.entries.size();
    ds.entries.push_back(std::move(entry));
  }

  const fs::path manifest_path = dir / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open dataset manifest " + manifest_path.string());
  std::getline(manifest, line);  // header
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != static_cast<std::size_t>(ds.num_classes) + 2) {
      throw ParseError("manifest.csv row with wrong field count: " + line, 0);
    }
    auto it = index.find(fields[0]);
    if (it == index.end()) {
      throw ContractError("manifest.csv references unknown instance " + fields[0]);
    }
    DatasetEntry& entry = ds.entries[it->second];
    entry.image = dir / fields[1];
    for (int c = 0; c < ds.num_classes; ++c) {
      const std::string& rel = fields[static_cast<std::size_t>(c) + 2];
      if (!rel.empty()) entry.mask_paths[static_cast<std::size_t>(c)] = dir / rel;
    }
  }
  for (const DatasetEntry& entry : ds.entries) {
    if (entry.image.empty()) {
      throw ContractError("instance " + entry.id + " is missing from manifest.csv");
    }
  }
  return ds;
}

Tensor load_instance_image(const DatasetEntry& entry, int channels) {
  Tensor gray = load_pgm(entry.image);
  Tensor out({channels, gray.extent(0), gray.extent(1)});
  const std::int64_t hw = gray.size();
  for (int c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < hw; ++i) out[c * hw + i] = gray[i];
  }
  return out;
}

Network build_toy_cnn(int image_size, int num_classes, std::uint64_t seed) {
  if (image_size % 2 != 0) {
    throw ContractError("toy CNN needs an even image size, got " +
                        std::to_string(image_size));
  }
  Rng rng(seed);
  auto xavier = [&rng](std::vector<int> shape, int fan_in, int fan_out) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
    return t;
  };

  std::vector<Layer> layers;
  auto conv_block = [&](int in_ch, int out_ch, bool pool) {
    Layer conv;
    conv.kind = LayerKind::Conv2D;
    conv.weight = xavier({out_ch, in_ch, 3, 3}, in_ch * 9, out_ch * 9);
    conv.bias = Tensor({out_ch});
    conv.stride = 1;
    conv.pad = 1;
    layers.push_back(std::move(conv));
    Layer relu;
    relu.kind = LayerKind::ReLU;
    layers.push_back(relu);
    if (pool) {
      Layer mp;
      mp.kind = LayerKind::MaxPool2D;
      mp.window = 2;
      mp.stride = 2;
      layers.push_back(mp);
    }
  };
  // A single pooling stage keeps the final convolution at half the input
  // resolution, which the upsampled Grad-CAM maps benefit from directly.
  conv_block(1, 8, true);
  conv_block(8, 16, false);
  conv_block(16, 16, false);

  Layer flat;
  flat.kind = LayerKind::Flatten;
  layers.push_back(flat);

  const int feat = 16 * (image_size / 2) * (image_size / 2);
  Layer head;
  head.kind = LayerKind::Dense;
  head.weight = xavier({num_classes, feat}, feat, num_classes);
  head.bias = Tensor({num_classes});
  layers.push_back(std::move(head));

  return Network(std::move(layers), {1, image_size, image_size}, num_classes);
}

std::string format_tau(double tau) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", tau);
  return buf;
}

std::string explain_stem(const std::string& instance_id, int class_id,
                         const std::string& method) {
  return instance_id + "_c" + std::to_string(class_id) + "_" + method;
}

std::uint64_t task_seed(std::uint64_t base_seed, const std::string& instance_id, int class_id,
                        int method_id) {
  std::uint64_t s = mix_seed(base_seed, stable_hash(instance_id));
  s = mix_seed(s, static_cast<std::uint64_t>(class_id));
  return mix_seed(s, static_cast<std::uint64_t>(method_id));
}

int method_id(const std::string& method) {
  if (method == "lime") return 0;
  if (method == "shap") return 1;
  if (method == "gradcam") return 2;
  if (method == "lrp") return 3;
  throw ContractError("unknown method '" + method +
                      "'; supported methods: lime, shap, gradcam, lrp");
}

void write_provenance(const fs::path& dir, const std::string& command,
                      const std::map<std::string, std::string>& flags) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["command"] = command;
  doc["tnsr_format_version"] = 1;
  doc["model_format_version"] = 1;
  nlohmann::json jflags = nlohmann::json::object();
  for (const auto& [key, value] : flags) jflags[key] = value;
  doc["flags"] = std::move(jflags);
  // Command-specific name: explain and evaluate share an output directory.
  std::ofstream f(dir / ("provenance_" + command + ".json"), std::ios::trunc);
  if (!f) throw IoError("cannot write provenance in " + dir.string());
  f << doc.dump(2) << "\n";
}

}  // namespace xai::pipeline
