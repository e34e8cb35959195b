#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xai/netgraph.hpp"
#include "xai/tensor.hpp"

namespace xai::pipeline {

namespace fs = std::filesystem;

struct DatasetEntry {
  std::string id;
  fs::path image;                    // absolute path
  std::vector<int> labels;           // one per class
  std::vector<fs::path> mask_paths;  // per class; empty path when absent
};

struct Dataset {
  fs::path root;
  int num_classes = 0;
  std::vector<DatasetEntry> entries;
};

/// Reads labels.csv and manifest.csv written by gen-data.
Dataset load_dataset(const fs::path& dir);

/// 8-bit gray mapped onto [0,1], replicated to the requested channel count.
Tensor load_instance_image(const DatasetEntry& entry, int channels = 1);

/// Fixed desk-scale conv net: three 3x3 conv blocks with pooling, then a
/// flatten+dense head. Xavier-uniform weights from the seed.
Network build_toy_cnn(int image_size, int num_classes, std::uint64_t seed);

/// "0.50"-style fixed formatting used in mask filenames and summaries.
std::string format_tau(double tau);

/// <instance>_c<class>_<method> stem used by every explain output file.
std::string explain_stem(const std::string& instance_id, int class_id,
                         const std::string& method);

std::uint64_t task_seed(std::uint64_t base_seed, const std::string& instance_id, int class_id,
                        int method_id);

int method_id(const std::string& method);  // throws listing the four names

/// provenance.json: full flag set, seed and format versions; byte-stable.
void write_provenance(const fs::path& dir, const std::string& command,
                      const std::map<std::string, std::string>& flags);

}  // namespace xai::pipeline
