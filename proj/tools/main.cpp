// Batch command-line surface for the interpretability pipeline:
// gen-data -> train -> explain -> evaluate.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pipeline.hpp"
#include "xai/errors.hpp"
#include "xai/eval.hpp"
#include "xai/gradcam.hpp"
#include "xai/heatmap.hpp"
#include "xai/lime.hpp"
#include "xai/lrp.hpp"
#include "xai/netgraph.hpp"
#include "xai/rng.hpp"
#include "xai/shap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xai;
using namespace xai::pipeline;

namespace {

// Exit codes: 0 success, 1 usage, 2 data/contract, 3 numeric failure.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

fs::path resolve_model_path(const std::string& flag) {
  fs::path p(flag);
  if (fs::is_directory(p)) p /= "model.json";
  if (!fs::exists(p)) throw IoError("model manifest not found at " + p.string());
  return p;
}

Dataset load_dataset_checked(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir);
  return load_dataset(dir);
}

std::vector<double> parse_taus(double tau, const std::string& tau_grid, bool* grid_used) {
  if (grid_used) *grid_used = !tau_grid.empty();
  if (tau_grid.empty()) return {tau};
  std::vector<double> taus;
  for (const std::string& tok : split_list(tau_grid)) {
    try {
      taus.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("cannot parse --tau-grid entry '" + tok + "'");
    }
  }
  if (taus.empty()) throw UsageError("--tau-grid is empty");
  return taus;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataFlags {
  int n = 100;
  int image_size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

void run_gen_data(const GenDataFlags& flags) {
  ensure_dir(flags.out);
  const fs::path root(flags.out);
  ensure_dir(root / "images");
  ensure_dir(root / "masks");

  BlobDataset ds = generate_blob_dataset(flags.n, flags.image_size, flags.seed);

  std::ofstream labels(root / "labels.csv", std::ios::trunc);
  std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
  labels << "instance_id";
  for (int c = 0; c < ds.num_classes; ++c) labels << ",label" << c;
  labels << "\n";
  manifest << "instance_id,image";
  for (int c = 0; c < ds.num_classes; ++c) manifest << ",mask" << c;
  manifest << "\n";

  for (const BlobSample& s : ds.samples) {
    Tensor gray({ds.image_size, ds.image_size});
    gray.data() = s.image.data();
    const std::string image_rel = "images/" + s.id + ".pgm";
    save_pgm(root / image_rel, gray);

    labels << s.id;
    manifest << s.id << "," << image_rel;
    for (int c = 0; c < ds.num_classes; ++c) {
      labels << "," << s.labels[static_cast<std::size_t>(c)];
      if (s.labels[static_cast<std::size_t>(c)]) {
        const std::string mask_rel = "masks/" + s.id + "_c" + std::to_string(c) + ".pgm";
        SegmentationMask mask;
        mask.mask = s.masks[static_cast<std::size_t>(c)];
        mask.source = MaskSource::GroundTruth;
        save_mask(root / mask_rel, mask);
        manifest << "," << mask_rel;
      } else {
        manifest << ",";
      }
    }
    labels << "\n";
    manifest << "\n";
  }
  labels.close();
  manifest.close();
  if (!labels || !manifest) throw IoError("failed writing dataset CSVs under " + flags.out);

  write_provenance(root, "gen-data",
                   {{"n", std::to_string(flags.n)},
                    {"image-size", std::to_string(flags.image_size)},
                    {"seed", std::to_string(flags.seed)},
                    {"out", flags.out}});
  std::printf("wrote %d instances under %s\n", flags.n, flags.out.c_str());
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string data;
  std::string out;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

void run_train(const TrainFlags& flags) {
  const Dataset ds = load_dataset_checked(flags.data);
  if (ds.entries.empty()) throw ContractError("dataset has no instances");

  std::vector<LabeledSample> samples;
  samples.reserve(ds.entries.size());
  for (const DatasetEntry& entry : ds.entries) {
    LabeledSample s;
    s.image = load_instance_image(entry);
    s.labels.assign(entry.labels.begin(), entry.labels.end());
    samples.push_back(std::move(s));
  }
  const int image_size = samples.front().image.extent(1);

  Network net = build_toy_cnn(image_size, ds.num_classes, flags.seed);
  TrainConfig cfg;
  cfg.epochs = flags.epochs;
  cfg.batch_size = flags.batch_size;
  cfg.learning_rate = flags.learning_rate;
  cfg.seed = flags.seed;
  TrainResult result = train(net, samples, cfg);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    std::printf("epoch %zu loss %.6f\n", e, result.epoch_losses[e]);
  }

  ensure_dir(flags.out);
  save_model(result.net, flags.out);

  json sidecar;
  sidecar["format_version"] = 1;
  sidecar["seed"] = flags.seed;
  sidecar["epochs"] = flags.epochs;
  sidecar["batch_size"] = flags.batch_size;
  sidecar["learning_rate"] = flags.learning_rate;
  sidecar["final_loss"] =
      result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  sidecar["epoch_losses"] = result.epoch_losses;
  std::ofstream f(fs::path(flags.out) / "training.json", std::ios::trunc);
  f << sidecar.dump(2) << "\n";
  if (!f) throw IoError("cannot write training sidecar under " + flags.out);

  write_provenance(flags.out, "train",
                   {{"data", flags.data},
                    {"out", flags.out},
                    {"epochs", std::to_string(flags.epochs)},
                    {"batch", std::to_string(flags.batch_size)},
                    {"lr", format_double(flags.learning_rate)},
                    {"seed", std::to_string(flags.seed)}});
}

// ---------------------------------------------------------------------------
// explain

struct ExplainFlags {
  std::string model;
  std::string data;
  std::string out;
  std::string methods = "lime,shap,gradcam,lrp";
  std::string classes = "positive";
  double tau = 0.5;
  std::string tau_grid;
  std::uint64_t seed = 0;
  int workers = 1;
  double epsilon = 1e-6;
  int samples = 1000;
  int coalitions = 2000;
  int segments = 50;
  std::string target_layer = "last-conv";
  bool lrp_dump = false;
};

struct ExplainTask {
  const DatasetEntry* entry;
  int class_id;
  std::string method;
};

struct MethodOutput {
  Tensor scores;
  json meta;                                   // method-specific fields
  std::vector<std::pair<int, double>> coefs;   // (superpixel_id, value)
  bool has_coefs = false;
  std::vector<double> alpha;
  bool has_alpha = false;
};

int parse_target_layer(const std::string& flag) {
  if (flag == "last-conv") return kLastConv;
  try {
    return std::stoi(flag);
  } catch (const std::exception&) {
    throw UsageError("--target-layer must be 'last-conv' or a layer index, got '" + flag + "'");
  }
}

MethodOutput compute_explanation(const Network& net, const Tensor& x, int class_id,
                                 const std::string& method, const ExplainFlags& flags,
                                 std::uint64_t seed, const fs::path& dump_dir) {
  MethodOutput out;
  if (method == "gradcam") {
    GradCamMap map = grad_cam(net, x, class_id, parse_target_layer(flags.target_layer));
    out.scores = map.heatmap;
    out.alpha = map.alpha;
    out.has_alpha = true;
    out.meta["target_layer"] = map.target_layer;
  } else if (method == "lrp") {
    LrpConfig cfg{flags.epsilon};
    RelevanceMap map = lrp(net, x, class_id, cfg);
    out.scores = map.input_heatmap;
    out.meta["epsilon"] = flags.epsilon;
    out.meta["total_leakage"] = map.total_leakage;
    if (flags.lrp_dump) dump_relevances(map, dump_dir);
  } else if (method == "lime") {
    LimeConfig cfg;
    cfg.num_samples = flags.samples;
    cfg.target_segments = flags.segments;
    cfg.seed = seed;
    LimeExplanation exp = explain_lime(net, x, class_id, cfg);
    out.scores = exp.heatmap;
    out.has_coefs = true;
    for (std::size_t s = 0; s < exp.coefficients.size(); ++s) {
      out.coefs.emplace_back(static_cast<int>(s), exp.coefficients[s]);
    }
    out.meta["surrogate_family"] = LimeConfig::kSurrogateFamily;
    out.meta["r2"] = exp.r2;
    out.meta["r2_raw"] = exp.r2_raw;
    out.meta["lambda_used"] = exp.lambda_used;
    out.meta["intercept"] = exp.intercept;
    out.meta["num_samples"] = flags.samples;
    out.meta["segments"] = static_cast<int>(exp.coefficients.size());
    if (!exp.warnings.empty()) out.meta["warnings"] = exp.warnings;
  } else if (method == "shap") {
    SuperpixelMap sp = segment_superpixels(x, flags.segments, seed);
    ShapConfig cfg;
    cfg.num_coalitions = flags.coalitions;
    cfg.target_segments = flags.segments;
    cfg.seed = seed;
    ShapExplanation exp = kernel_shap(net, x, class_id, sp, cfg);
    out.scores = exp.heatmap;
    out.has_coefs = true;
    for (std::size_t s = 0; s < exp.phi.size(); ++s) {
      out.coefs.emplace_back(static_cast<int>(s), exp.phi[s]);
    }
    out.meta["base_value"] = exp.base_value;
    out.meta["fx"] = exp.fx;
    out.meta["exact"] = exp.exact;
    out.meta["num_coalitions"] = exp.num_coalitions;
    if (!exp.warnings.empty()) out.meta["warnings"] = exp.warnings;
  } else {
    throw UsageError("unknown method '" + method + "'; supported methods: lime, shap, gradcam, lrp");
  }
  return out;
}

void run_explain(const ExplainFlags& flags) {
  const std::vector<std::string> methods = split_list(flags.methods);
  if (methods.empty()) throw UsageError("--methods is empty");
  const std::set<std::string> known = {"lime", "shap", "gradcam", "lrp"};
  for (const std::string& m : methods) {
    if (!known.count(m)) {
      throw UsageError("unknown method '" + m + "'; supported methods: lime, shap, gradcam, lrp");
    }
  }
  const std::vector<double> taus = parse_taus(flags.tau, flags.tau_grid, nullptr);

  const Network net = load_model(resolve_model_path(flags.model));
  const Dataset ds = load_dataset_checked(flags.data);
  ensure_dir(flags.out);
  const fs::path out_root(flags.out);

  std::vector<int> explicit_classes;
  if (flags.classes != "positive") {
    for (const std::string& tok : split_list(flags.classes)) {
      int cls = 0;
      try {
        cls = std::stoi(tok);
      } catch (const std::exception&) {
        throw UsageError("cannot parse --classes entry '" + tok + "'");
      }
      if (cls < 0 || cls >= net.num_classes()) {
        throw ContractError("class index " + std::to_string(cls) + " out of range [0," +
                            std::to_string(net.num_classes()) + ")");
      }
      explicit_classes.push_back(cls);
    }
    if (explicit_classes.empty()) throw UsageError("--classes is empty");
  }

  std::vector<ExplainTask> tasks;
  for (const DatasetEntry& entry : ds.entries) {
    std::vector<int> classes = explicit_classes;
    if (classes.empty()) {
      for (int c = 0; c < ds.num_classes; ++c) {
        if (entry.labels[static_cast<std::size_t>(c)]) classes.push_back(c);
      }
    }
    for (int cls : classes) {
      for (const std::string& m : methods) tasks.push_back({&entry, cls, m});
    }
  }

  auto run_task = [&](const ExplainTask& task) {
    const Tensor x = load_instance_image(*task.entry, net.input_shape()[0]);
    const std::uint64_t seed =
        task_seed(flags.seed, task.entry->id, task.class_id, method_id(task.method));
    const std::string stem = explain_stem(task.entry->id, task.class_id, task.method);
    MethodOutput out = compute_explanation(net, x, task.class_id, task.method, flags, seed,
                                           out_root / (stem + "_layers"));

    save_tensor(out_root / (stem + ".tnsr"), out.scores);
    save_preview(out_root / (stem + ".pgm"), out.scores);

    Heatmap h;
    h.scores = out.scores;
    h.method = task.method;
    h.class_index = task.class_id;
    const NormalizeMode mode = default_normalization(task.method);
    const Heatmap normalized = normalize(h, mode);

    json masks = json::object();
    for (double tau : taus) {
      const std::string mask_rel = stem + "_tau" + format_tau(tau) + ".pgm";
      save_mask(out_root / mask_rel, threshold(normalized, tau));
      masks[format_tau(tau)] = mask_rel;
    }

    if (out.has_coefs) {
      std::ofstream f(out_root / (stem + "_coef.csv"), std::ios::trunc);
      f << "superpixel_id,coefficient\n";
      for (const auto& [s, v] : out.coefs) f << s << "," << format_double(v) << "\n";
    }
    if (out.has_alpha) {
      std::ofstream f(out_root / (stem + "_alpha.csv"), std::ios::trunc);
      f << "channel,alpha\n";
      for (std::size_t k = 0; k < out.alpha.size(); ++k) {
        f << k << "," << format_double(out.alpha[k]) << "\n";
      }
    }

    json meta = std::move(out.meta);
    meta["xai_explanation"] = true;
    meta["instance_id"] = task.entry->id;
    meta["class_id"] = task.class_id;
    meta["method"] = task.method;
    meta["seed"] = seed;
    meta["normalization"] = normalize_mode_name(mode);
    meta["degenerate"] = normalized.degenerate;
    meta["finite"] = out.scores.all_finite();
    meta["heatmap"] = stem + ".tnsr";
    meta["preview"] = stem + ".pgm";
    meta["masks"] = std::move(masks);
    std::ofstream f(out_root / (stem + ".json"), std::ios::trunc);
    f << meta.dump(2) << "\n";
    if (!f) throw IoError("cannot write explanation metadata for " + stem);
  };

  const int workers = std::max(1, flags.workers);
  if (workers == 1 || tasks.size() <= 1) {
    for (const ExplainTask& task : tasks) run_task(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) break;
        try {
          run_task(tasks[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          stop.store(true);
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(workers), tasks.size());
    for (std::size_t i = 0; i < count; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  write_provenance(out_root, "explain",
                   {{"model", flags.model},
                    {"data", flags.data},
                    {"out", flags.out},
                    {"methods", flags.methods},
                    {"classes", flags.classes},
                    {"tau", format_double(flags.tau)},
                    {"tau-grid", flags.tau_grid},
                    {"seed", std::to_string(flags.seed)},
                    {"workers", std::to_string(flags.workers)},
                    {"epsilon", format_double(flags.epsilon)},
                    {"samples", std::to_string(flags.samples)},
                    {"coalitions", std::to_string(flags.coalitions)},
                    {"segments", std::to_string(flags.segments)},
                    {"target-layer", flags.target_layer},
                    {"lrp-dump", flags.lrp_dump ? "1" : "0"}});
  std::printf("explained %zu (instance, class, method) tasks into %s\n", tasks.size(),
              flags.out.c_str());
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateFlags {
  std::string model;
  std::string data;
  std::string out;  // directory holding explain outputs; receives reports
  double tau = 0.5;
  std::string tau_grid;
  int workers = 1;
};

struct DiscoveredExplanation {
  std::string instance_id;
  int class_id = 0;
  std::string method;
  std::string normalization;
  fs::path heatmap;  // may not exist; see mask fallback
  std::map<std::string, std::string> mask_files;
};

void run_evaluate(const EvaluateFlags& flags) {
  const std::vector<double> taus = parse_taus(flags.tau, flags.tau_grid, nullptr);
  const Network net = load_model(resolve_model_path(flags.model));
  const Dataset ds = load_dataset_checked(flags.data);
  if (!fs::is_directory(flags.out)) {
    throw IoError("output directory with explanations not found: " + flags.out);
  }
  const fs::path out_root(flags.out);

  // Prediction metrics over the whole dataset; results land in preallocated
  // slots so worker scheduling cannot affect them.
  std::vector<std::vector<double>> scores(ds.entries.size());
  std::vector<std::vector<int>> labels(ds.entries.size());
  {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= ds.entries.size()) break;
        try {
          const ForwardResult fwd =
              forward(net, load_instance_image(ds.entries[i], net.input_shape()[0]));
          scores[i] = fwd.probs.data();
          labels[i] = ds.entries[i].labels;
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
        }
      }
    };
    const std::size_t count = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(1, flags.workers)), ds.entries.size());
    if (count <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t i = 0; i < count; ++i) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
  }

  // Discover explanation metadata.
  std::vector<DiscoveredExplanation> explanations;
  std::vector<fs::path> meta_files;
  for (const fs::directory_entry& de : fs::directory_iterator(out_root)) {
    if (de.path().extension() == ".json") meta_files.push_back(de.path());
  }
  std::sort(meta_files.begin(), meta_files.end());
  for (const fs::path& path : meta_files) {
    std::ifstream f(path);
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::parse_error&) {
      continue;
    }
    if (!doc.is_object() || !doc.value("xai_explanation", false)) continue;
    DiscoveredExplanation e;
    e.instance_id = doc.at("instance_id").get<std::string>();
    e.class_id = doc.at("class_id").get<int>();
    e.method = doc.at("method").get<std::string>();
    e.normalization = doc.value("normalization", "");
    e.heatmap = out_root / doc.at("heatmap").get<std::string>();
    if (doc.contains("masks")) {
      for (const auto& [tau_key, rel] : doc["masks"].items()) {
        e.mask_files[tau_key] = rel.get<std::string>();
      }
    }
    explanations.push_back(std::move(e));
  }
  if (explanations.empty()) {
    throw ContractError("no explanation metadata found under " + flags.out);
  }

  // Pair with ground truth.
  std::map<std::string, const DatasetEntry*> by_id;
  for (const DatasetEntry& entry : ds.entries) by_id[entry.id] = &entry;
  std::vector<std::string> mismatches;
  for (const DiscoveredExplanation& e : explanations) {
    auto it = by_id.find(e.instance_id);
    if (it == by_id.end() ||
        it->second->mask_paths[static_cast<std::size_t>(e.class_id)].empty()) {
      mismatches.push_back(e.instance_id + " (class " + std::to_string(e.class_id) + ")");
    }
  }
  if (!mismatches.empty()) {
    std::string msg = "unmatched instance ids between explanations and ground truth:";
    for (std::size_t i = 0; i < std::min<std::size_t>(10, mismatches.size()); ++i) {
      msg += " " + mismatches[i];
    }
    throw ContractError(msg);
  }

  std::vector<IoURecord> records;
  for (const DiscoveredExplanation& e : explanations) {
    const DatasetEntry& entry = *by_id.at(e.instance_id);
    const SegmentationMask gt =
        load_mask(entry.mask_paths[static_cast<std::size_t>(e.class_id)]);
    Heatmap normalized;
    bool have_heatmap = false;
    if (fs::exists(e.heatmap)) {
      Heatmap h;
      h.scores = load_tensor(e.heatmap);
      h.method = e.method;
      h.class_index = e.class_id;
      const NormalizeMode mode = e.normalization == "minmax" ? NormalizeMode::MinMax
                                                             : NormalizeMode::PositiveOnly;
      normalized = normalize(h, mode);
      have_heatmap = true;
    }
    for (double tau : taus) {
      SegmentationMask pred;
      if (have_heatmap) {
        pred = threshold(normalized, tau);
      } else {
        auto it = e.mask_files.find(format_tau(tau));
        if (it == e.mask_files.end()) {
          throw ContractError("no heatmap and no tau=" + format_tau(tau) + " mask for " +
                              explain_stem(e.instance_id, e.class_id, e.method));
        }
        pred = load_mask(out_root / it->second, MaskSource::Predicted);
      }
      const IoUResult r = iou(pred, gt);
      records.push_back({e.instance_id, e.class_id, e.method, tau, r.value, r.degenerate});
    }
  }

  const PredictionMetrics pm = prediction_metrics(scores, labels);
  EvalReport all = aggregate(records);
  all.prediction = pm;
  write_records_csv(out_root / "records.csv", all.records);

  for (double tau : taus) {
    std::vector<IoURecord> slice;
    for (const IoURecord& r : records) {
      if (r.tau == tau) slice.push_back(r);
    }
    EvalReport report = aggregate(std::move(slice));
    report.prediction = pm;
    write_summary_json(out_root / ("summary_tau" + format_tau(tau) + ".json"), report, tau);
  }

  write_provenance(out_root, "evaluate",
                   {{"model", flags.model},
                    {"data", flags.data},
                    {"out", flags.out},
                    {"tau", format_double(flags.tau)},
                    {"tau-grid", flags.tau_grid},
                    {"workers", std::to_string(flags.workers)}});
  std::printf("evaluated %zu records into %s\n", records.size(), flags.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interpretability pipeline: dataset generation, toy training, heatmap "
               "explanation and IoU evaluation"};
  app.require_subcommand(1);

  GenDataFlags gen_flags;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a blob dataset with expert masks");
  gen->add_option("--n", gen_flags.n, "number of instances");
  gen->add_option("--image-size", gen_flags.image_size, "square image extent");
  gen->add_option("--seed", gen_flags.seed, "dataset seed");
  gen->add_option("--out", gen_flags.out, "output directory")->required();
  gen->callback([&]() { run_gen_data(gen_flags); });

  TrainFlags train_flags;
  CLI::App* tr = app.add_subcommand("train", "train the toy CNN on a generated dataset");
  tr->add_option("--data", train_flags.data, "dataset directory")->required();
  tr->add_option("--out", train_flags.out, "model output directory")->required();
  tr->add_option("--epochs", train_flags.epochs, "training epochs");
  tr->add_option("--batch", train_flags.batch_size, "minibatch size");
  tr->add_option("--lr", train_flags.learning_rate, "Adam learning rate");
  tr->add_option("--seed", train_flags.seed, "training seed");
  tr->callback([&]() { run_train(train_flags); });

  ExplainFlags explain_flags;
  CLI::App* ex = app.add_subcommand("explain", "produce heatmaps for instances and classes");
  ex->add_option("--model", explain_flags.model, "model directory or manifest path")->required();
  ex->add_option("--data", explain_flags.data, "dataset directory")->required();
  ex->add_option("--out", explain_flags.out, "output directory")->required();
  ex->add_option("--methods", explain_flags.methods, "comma list of lime,shap,gradcam,lrp");
  ex->add_option("--classes", explain_flags.classes,
                 "'positive' or a comma list of class indices");
  CLI::Option* ex_tau = ex->add_option("--tau", explain_flags.tau, "threshold for emitted masks");
  ex->add_option("--tau-grid", explain_flags.tau_grid, "comma list of thresholds")
      ->excludes(ex_tau);
  ex->add_option("--seed", explain_flags.seed, "explanation seed");
  ex->add_option("--workers", explain_flags.workers, "parallel workers over tasks");
  ex->add_option("--epsilon", explain_flags.epsilon, "LRP stabilizer");
  ex->add_option("--samples", explain_flags.samples, "LIME perturbation samples");
  ex->add_option("--coalitions", explain_flags.coalitions, "KernelSHAP coalition budget");
  ex->add_option("--segments", explain_flags.segments, "target superpixel count");
  ex->add_option("--target-layer", explain_flags.target_layer,
                 "'last-conv' or a Conv2D layer index");
  ex->add_flag("--lrp-dump", explain_flags.lrp_dump, "dump per-layer LRP relevances");
  ex->callback([&]() { run_explain(explain_flags); });

  EvaluateFlags eval_flags;
  CLI::App* ev = app.add_subcommand("evaluate", "IoU records, aggregates and prediction metrics");
  ev->add_option("--model", eval_flags.model, "model directory or manifest path")->required();
  ev->add_option("--data", eval_flags.data, "dataset directory")->required();
  ev->add_option("--out", eval_flags.out, "directory holding explain outputs")->required();
  CLI::Option* ev_tau = ev->add_option("--tau", eval_flags.tau, "threshold to evaluate");
  ev->add_option("--tau-grid", eval_flags.tau_grid, "comma list of thresholds")
      ->excludes(ev_tau);
  ev->add_option("--workers", eval_flags.workers, "parallel workers for model forwards");
  ev->callback([&]() { run_evaluate(eval_flags); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 2;
  }
  return 0;
}
