#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "test_helpers.hpp"
#include "xai/heatmap.hpp"
#include "xai/netgraph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xai;

namespace {

int run_cli(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(XAI_CLI_PATH) + " " + args;
  if (!log.empty()) {
    cmd += " > " + log.string() + " 2>&1";
  } else {
    cmd += " > /dev/null 2>&1";
  }
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Byte map of every regular file under dir (relative path -> contents),
// optionally filtered by extension.
std::map<std::string, std::string> dir_bytes(const fs::path& dir,
                                             const std::string& ext_filter = "") {
  std::map<std::string, std::string> out;
  for (const fs::directory_entry& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!ext_filter.empty() && e.path().extension() != ext_filter) continue;
    out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

int count_lines(const fs::path& path) {
  std::ifstream f(path);
  int n = 0;
  std::string line;
  while (std::getline(f, line)) ++n;
  return n;
}

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ext) ++n;
  }
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("gen-data writes n instances with manifest and is byte-deterministic") {
  const fs::path dir = fresh_dir("xai_cli_gendata");
  REQUIRE(run_cli("gen-data --n 12 --image-size 16 --seed 5 --out " + dir.string()) == 0);
  CHECK(count_files(dir / "images", ".pgm") == 12);
  CHECK(count_lines(dir / "labels.csv") == 13);    // header + 12
  CHECK(count_lines(dir / "manifest.csv") == 13);
  CHECK(fs::exists(dir / "provenance_gen-data.json"));

  const auto first = dir_bytes(dir);
  fs::remove_all(dir);
  fs::create_directories(dir);
  REQUIRE(run_cli("gen-data --n 12 --image-size 16 --seed 5 --out " + dir.string()) == 0);
  CHECK(dir_bytes(dir) == first);
  fs::remove_all(dir);
}

TEST_CASE("gen-data masks exist exactly for positive labels") {
  const fs::path dir = fresh_dir("xai_cli_gendata_masks");
  REQUIRE(run_cli("gen-data --n 20 --image-size 16 --seed 9 --out " + dir.string()) == 0);
  std::ifstream labels(dir / "labels.csv");
  std::string line;
  std::getline(labels, line);  // header
  while (std::getline(labels, line)) {
    std::stringstream ss(line);
    std::string id, bit;
    std::getline(ss, id, ',');
    for (int c = 0; c < 4; ++c) {
      std::getline(ss, bit, ',');
      const fs::path mask = dir / "masks" / (id + "_c" + std::to_string(c) + ".pgm");
      CHECK(fs::exists(mask) == (bit == "1"));
      if (bit == "1") {
        CHECK(load_mask(mask).count() > 0);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("train writes a model with sidecar and reruns bit-identically") {
  const fs::path data = fresh_dir("xai_cli_train_data");
  REQUIRE(run_cli("gen-data --n 10 --image-size 16 --seed 3 --out " + data.string()) == 0);

  const fs::path model = fresh_dir("xai_cli_train_model");
  const std::string train_cmd = "train --data " + data.string() + " --out " + model.string() +
                                " --epochs 2 --batch 4 --lr 0.001 --seed 11";
  REQUIRE(run_cli(train_cmd) == 0);
  CHECK(fs::exists(model / "model.json"));
  CHECK(fs::exists(model / "provenance_train.json"));

  const json sidecar = json::parse(read_file(model / "training.json"));
  CHECK(sidecar.at("seed") == 11);
  CHECK(sidecar.at("epochs") == 2);
  CHECK(sidecar.at("final_loss").is_number());

  const auto first = dir_bytes(model);
  fs::remove_all(model);
  fs::create_directories(model);
  REQUIRE(run_cli(train_cmd) == 0);
  CHECK(dir_bytes(model) == first);

  fs::remove_all(data);
  fs::remove_all(model);
}

TEST_CASE("train on a missing data directory exits with code 2") {
  CHECK(run_cli("train --data /nonexistent_xai_dir --out /tmp/xai_nope") == 2);
}

TEST_CASE("training divergence exits with code 3") {
  const fs::path data = fresh_dir("xai_cli_diverge_data");
  REQUIRE(run_cli("gen-data --n 6 --image-size 16 --seed 2 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_diverge_model");
  CHECK(run_cli("train --data " + data.string() + " --out " + model.string() +
                " --epochs 3 --lr 1e300 --seed 1") == 3);
  fs::remove_all(data);
  fs::remove_all(model);
}

TEST_CASE("explain produces one heatmap set per task and reruns bit-identically") {
  const fs::path data = fresh_dir("xai_cli_explain_data");
  REQUIRE(run_cli("gen-data --n 2 --image-size 16 --seed 21 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_explain_model");
  REQUIRE(run_cli("train --data " + data.string() + " --out " + model.string() +
                  " --epochs 1 --seed 21") == 0);

  const fs::path out = fresh_dir("xai_cli_explain_out");
  const std::string cmd = "explain --model " + model.string() + " --data " + data.string() +
                          " --out " + out.string() +
                          " --methods gradcam,lrp --classes 0 --seed 4";
  REQUIRE(run_cli(cmd) == 0);
  // 2 instances x 1 class x 2 methods.
  CHECK(count_files(out, ".tnsr") == 4);
  CHECK(fs::exists(out / "img_00000_c0_gradcam.pgm"));
  CHECK(fs::exists(out / "img_00000_c0_gradcam_tau0.50.pgm"));
  CHECK(fs::exists(out / "img_00000_c0_gradcam_alpha.csv"));
  CHECK(fs::exists(out / "img_00001_c0_lrp.json"));

  const auto first = dir_bytes(out, ".tnsr");
  fs::remove_all(out);
  fs::create_directories(out);
  REQUIRE(run_cli(cmd) == 0);
  CHECK(dir_bytes(out, ".tnsr") == first);

  fs::remove_all(data);
  fs::remove_all(model);
  fs::remove_all(out);
}

TEST_CASE("unknown method exits 1 and lists the supported names") {
  const fs::path data = fresh_dir("xai_cli_badmethod_data");
  REQUIRE(run_cli("gen-data --n 2 --image-size 16 --seed 1 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_badmethod_model");
  REQUIRE(run_cli("train --data " + data.string() + " --out " + model.string() +
                  " --epochs 1 --seed 1") == 0);
  const fs::path log = fs::temp_directory_path() / "xai_cli_badmethod.log";
  CHECK(run_cli("explain --model " + model.string() + " --data " + data.string() +
                    " --out /tmp/xai_badmethod_out --methods gradcam,teleport",
                log) == 1);
  const std::string text = read_file(log);
  CHECK(text.find("lime") != std::string::npos);
  CHECK(text.find("shap") != std::string::npos);
  CHECK(text.find("gradcam") != std::string::npos);
  CHECK(text.find("lrp") != std::string::npos);
  fs::remove_all(data);
  fs::remove_all(model);
  fs::remove(log);
}

TEST_CASE("class index out of range exits 2") {
  const fs::path data = fresh_dir("xai_cli_badclass_data");
  REQUIRE(run_cli("gen-data --n 2 --image-size 16 --seed 1 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_badclass_model");
  REQUIRE(run_cli("train --data " + data.string() + " --out " + model.string() +
                  " --epochs 1 --seed 1") == 0);
  CHECK(run_cli("explain --model " + model.string() + " --data " + data.string() +
                " --out /tmp/xai_badclass_out --methods gradcam --classes 9") == 2);
  fs::remove_all(data);
  fs::remove_all(model);
}

TEST_CASE("serial and parallel explain produce identical artifact bytes") {
  const fs::path data = fresh_dir("xai_cli_par_data");
  REQUIRE(run_cli("gen-data --n 6 --image-size 16 --seed 31 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_par_model");
  REQUIRE(run_cli("train --data " + data.string() + " --out " + model.string() +
                  " --epochs 1 --seed 31") == 0);

  const fs::path serial = fresh_dir("xai_cli_par_serial");
  const fs::path parallel = fresh_dir("xai_cli_par_parallel");
  const std::string base = "explain --model " + model.string() + " --data " + data.string() +
                           " --methods gradcam,lime --classes positive --seed 8 --samples 40 "
                           "--segments 8";
  REQUIRE(run_cli(base + " --out " + serial.string() + " --workers 1") == 0);
  REQUIRE(run_cli(base + " --out " + parallel.string() + " --workers 3") == 0);
  for (const std::string ext : {".tnsr", ".pgm", ".csv"}) {
    CHECK(dir_bytes(serial, ext) == dir_bytes(parallel, ext));
  }
  fs::remove_all(data);
  fs::remove_all(model);
  fs::remove_all(serial);
  fs::remove_all(parallel);
}

namespace {

// Hand-built evaluation fixture: a tiny dataset, a zero-weight model and
// pre-made predicted masks exercising the heatmap-free fallback path.
struct EvalFixture {
  fs::path data;
  fs::path model;
  fs::path out;
};

EvalFixture build_eval_fixture(const std::string& tag,
                               const std::vector<std::vector<double>>& pred_masks) {
  EvalFixture fx;
  fx.data = fresh_dir("xai_cli_eval_data_" + tag);
  fx.model = fresh_dir("xai_cli_eval_model_" + tag);
  fx.out = fresh_dir("xai_cli_eval_out_" + tag);

  fs::create_directories(fx.data / "images");
  fs::create_directories(fx.data / "masks");

  // Ground-truth masks: a: 2x2 top-left block, b: {(0,0),(1,0)}, c: {(3,3)}.
  const std::vector<std::vector<double>> gt = {
      {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1},
  };
  const std::vector<std::string> ids = {"inst_a", "inst_b", "inst_c"};

  std::ofstream labels(fx.data / "labels.csv");
  std::ofstream manifest(fx.data / "manifest.csv");
  labels << "instance_id,label0\n";
  manifest << "instance_id,image,mask0\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    save_pgm(fx.data / "images" / (ids[i] + ".pgm"), Tensor({4, 4}));
    SegmentationMask m;
    m.mask = Tensor({4, 4}, gt[i]);
    save_mask(fx.data / "masks" / (ids[i] + "_c0.pgm"), m);
    labels << ids[i] << ",1\n";
    manifest << ids[i] << ",images/" << ids[i] << ".pgm,masks/" << ids[i] << "_c0.pgm\n";
  }
  labels.close();
  manifest.close();

  std::vector<Layer> net_layers;
  Layer flat;
  flat.kind = LayerKind::Flatten;
  net_layers.push_back(flat);
  Layer dense;
  dense.kind = LayerKind::Dense;
  dense.weight = Tensor({1, 16});
  dense.bias = Tensor({1});
  net_layers.push_back(dense);
  save_model(Network(std::move(net_layers), {1, 4, 4}, 1), fx.model);

  for (std::size_t i = 0; i < ids.size(); ++i) {
    SegmentationMask pred;
    pred.mask = Tensor({4, 4}, pred_masks[i]);
    const std::string stem = ids[i] + "_c0_gradcam";
    save_mask(fx.out / (stem + "_tau0.50.pgm"), pred);
    json meta;
    meta["xai_explanation"] = true;
    meta["instance_id"] = ids[i];
    meta["class_id"] = 0;
    meta["method"] = "gradcam";
    meta["normalization"] = "minmax";
    meta["heatmap"] = stem + ".tnsr";  // intentionally absent
    meta["masks"] = {{"0.50", stem + "_tau0.50.pgm"}};
    std::ofstream f(fx.out / (stem + ".json"));
    f << meta.dump(2) << "\n";
  }
  return fx;
}

}  // namespace

TEST_CASE("evaluate on a hand-built fixture reports mean IoU 4/9") {
  // Predictions: a == gt (IoU 1), b is the top row pair (IoU 1/3), c misses (IoU 0).
  EvalFixture fx = build_eval_fixture(
      "mean", {{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
               {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
               {0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0}});
  REQUIRE(run_cli("evaluate --model " + fx.model.string() + " --data " + fx.data.string() +
                  " --out " + fx.out.string() + " --tau 0.5") == 0);
  const json summary = json::parse(read_file(fx.out / "summary_tau0.50.json"));
  const double mean = std::stod(summary["per_method"]["gradcam"]["mean"].get<std::string>());
  CHECK(mean == doctest::Approx(4.0 / 9.0).epsilon(1e-9));
  CHECK(count_lines(fx.out / "records.csv") == 4);  // header + 3
  fs::remove_all(fx.data);
  fs::remove_all(fx.model);
  fs::remove_all(fx.out);
}

TEST_CASE("evaluate with perfect and empty predictions hits the trivial bounds") {
  EvalFixture perfect = build_eval_fixture(
      "perfect", {{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                  {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                  {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}});
  REQUIRE(run_cli("evaluate --model " + perfect.model.string() + " --data " +
                  perfect.data.string() + " --out " + perfect.out.string() + " --tau 0.5") == 0);
  json summary = json::parse(read_file(perfect.out / "summary_tau0.50.json"));
  CHECK(std::stod(summary["per_method"]["gradcam"]["mean"].get<std::string>()) == 1.0);

  EvalFixture empty = build_eval_fixture(
      "empty", {std::vector<double>(16, 0), std::vector<double>(16, 0),
                std::vector<double>(16, 0)});
  REQUIRE(run_cli("evaluate --model " + empty.model.string() + " --data " + empty.data.string() +
                  " --out " + empty.out.string() + " --tau 0.5") == 0);
  summary = json::parse(read_file(empty.out / "summary_tau0.50.json"));
  CHECK(std::stod(summary["per_method"]["gradcam"]["mean"].get<std::string>()) == 0.0);

  for (EvalFixture* fx : {&perfect, &empty}) {
    fs::remove_all(fx->data);
    fs::remove_all(fx->model);
    fs::remove_all(fx->out);
  }
}

TEST_CASE("evaluate reports unmatched instance ids") {
  EvalFixture fx = build_eval_fixture(
      "unmatched", {{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                    {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                    {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}});
  // Remove one ground-truth mask and its manifest reference.
  fs::remove(fx.data / "masks" / "inst_b_c0.pgm");
  std::ofstream manifest(fx.data / "manifest.csv", std::ios::trunc);
  manifest << "instance_id,image,mask0\n";
  manifest << "inst_a,images/inst_a.pgm,masks/inst_a_c0.pgm\n";
  manifest << "inst_b,images/inst_b.pgm,\n";
  manifest << "inst_c,images/inst_c.pgm,masks/inst_c_c0.pgm\n";
  manifest.close();

  const fs::path log = fs::temp_directory_path() / "xai_cli_unmatched.log";
  CHECK(run_cli("evaluate --model " + fx.model.string() + " --data " + fx.data.string() +
                    " --out " + fx.out.string() + " --tau 0.5",
                log) == 2);
  CHECK(read_file(log).find("inst_b") != std::string::npos);
  fs::remove_all(fx.data);
  fs::remove_all(fx.model);
  fs::remove_all(fx.out);
  fs::remove(log);
}

TEST_CASE("tau-grid emits one summary per threshold") {
  EvalFixture fx = build_eval_fixture(
      "taugrid", {{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                  {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                  {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}});
  // Fixture masks only exist at tau 0.50 and the heatmap files are absent,
  // so write real heatmaps next to them for the sweep.
  for (const std::string id : {"inst_a", "inst_b", "inst_c"}) {
    Tensor scores({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) scores[i] = static_cast<double>(i) / 15.0;
    save_tensor(fx.out / (id + "_c0_gradcam.tnsr"), scores);
  }
  REQUIRE(run_cli("evaluate --model " + fx.model.string() + " --data " + fx.data.string() +
                  " --out " + fx.out.string() + " --tau-grid 0.25,0.75") == 0);
  CHECK(fs::exists(fx.out / "summary_tau0.25.json"));
  CHECK(fs::exists(fx.out / "summary_tau0.75.json"));
  CHECK(count_lines(fx.out / "records.csv") == 7);  // header + 3 instances x 2 taus
  fs::remove_all(fx.data);
  fs::remove_all(fx.model);
  fs::remove_all(fx.out);
}

TEST_CASE("explain with a tau grid writes one mask per threshold") {
  const fs::path data = fresh_dir("xai_cli_taugrid_data");
  REQUIRE(run_cli("gen-data --n 2 --image-size 16 --seed 13 --out " + data.string()) == 0);
  const fs::path model = fresh_dir("xai_cli_taugrid_model");
  REQUIRE(run_cli("train --data " + data.string() + " --out " + model.string() +
                  " --epochs 1 --seed 13") == 0);
  const fs::path out = fresh_dir("xai_cli_taugrid_out");
  REQUIRE(run_cli("explain --model " + model.string() + " --data " + data.string() + " --out " +
                  out.string() + " --methods gradcam --classes 0 --tau-grid 0.30,0.60") == 0);
  CHECK(fs::exists(out / "img_00000_c0_gradcam_tau0.30.pgm"));
  CHECK(fs::exists(out / "img_00000_c0_gradcam_tau0.60.pgm"));
  CHECK_FALSE(fs::exists(out / "img_00000_c0_gradcam_tau0.50.pgm"));
  fs::remove_all(data);
  fs::remove_all(model);
  fs::remove_all(out);
}

TEST_CASE("tau outside the unit interval is rejected") {
  EvalFixture fx = build_eval_fixture(
      "badtau", {{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                 {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                 {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}});
  CHECK(run_cli("evaluate --model " + fx.model.string() + " --data " + fx.data.string() +
                " --out " + fx.out.string() + " --tau 1.5") == 2);
  fs::remove_all(fx.data);
  fs::remove_all(fx.model);
  fs::remove_all(fx.out);
}

TEST_SUITE_END();
