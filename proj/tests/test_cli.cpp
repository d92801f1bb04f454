#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "docie/cli.hpp"

using namespace docie;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all("cli_test_tmp"); }
  std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

std::string tiny_config_json(const std::string& train_path, const std::string& eval_path,
                             const std::string& mode = "e2e", int epochs = 1) {
  nlohmann::ordered_json js;
  js["data"] = {{"train", train_path}, {"eval", eval_path}, {"category", "I"}};
  js["model"] = {{"init_seed", 1},
                 {"prior_model", "toy"},
                 {"prior_width", 8},
                 {"lstm_width", 10},
                 {"reader",
                  {{"conv_channels", 4},
                   {"encoder_hidden", 10},
                   {"decoder_hidden", 12},
                   {"attention_width", 6},
                   {"char_embed_width", 5}}}};
  js["context"] = {{"layers", 1}, {"heads", 2}, {"d_model", 12}, {"fusion", "gating"}};
  js["train"] = {{"lr", 1e-3},     {"epochs", epochs},   {"batch_size", 2},
                 {"seed", 7},      {"mode", mode},       {"eval_every", 0},
                 {"decay_epochs", nlohmann::json::array({5, 7, 8})}};
  return js.dump(2);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Predictions identical to the gold annotations.
void write_perfect_predictions(const std::string& gold_path, const std::string& out_path) {
  auto samples = docdata::load_annotations(gold_path);
  std::vector<std::vector<pipeline::InstancePrediction>> docs;
  for (const auto& sample : samples) {
    std::vector<pipeline::InstancePrediction> doc;
    for (const auto& inst : sample.instances) {
      pipeline::InstancePrediction pred;
      pred.box = inst.box;
      pred.text_pred = inst.text;
      pred.tags_pred = inst.tags;
      pred.entities = docdata::gold_entities(inst);
      doc.push_back(std::move(pred));
    }
    docs.push_back(std::move(doc));
  }
  std::ofstream out(out_path);
  out << pipeline::predictions_to_json(docs);
}

}  // namespace

TEST_CASE("unknown verb exits 1") {
  CHECK(cli::run({"frobnicate"}) == 1);
  CHECK(cli::run({}) == 1);
}

TEST_CASE("gen-data then train then predict then eval completes end to end") {
  TempDir tmp("e2e");
  CHECK(cli::run({"gen-data", "--category", "I", "--count", "4", "--seed", "7", "--out",
                  tmp.str("data"), "--name", "train"}) == 0);
  CHECK(fs::exists(tmp.str("data/train.json")));
  CHECK(fs::exists(tmp.str("data/train_rasters/000000.pgm")));

  CHECK(cli::run({"gen-data", "--category", "I", "--count", "2", "--seed", "8", "--out",
                  tmp.str("data"), "--name", "eval"}) == 0);

  std::ofstream(tmp.str("config.json"))
      << tiny_config_json(tmp.str("data/train.json"), tmp.str("data/eval.json"));
  CHECK(cli::run({"train", "--config", tmp.str("config.json"), "--out", tmp.str("run")}) == 0);
  CHECK(fs::exists(tmp.str("run/checkpoints/model.trk")));
  CHECK(fs::exists(tmp.str("run/checkpoints/model.trk.meta.json")));
  CHECK(fs::exists(tmp.str("run/logs/train.jsonl")));

  CHECK(cli::run({"predict", "--checkpoint", tmp.str("run/checkpoints/model.trk"), "--data",
                  tmp.str("data/eval.json"), "--out", tmp.str("run")}) == 0);
  CHECK(fs::exists(tmp.str("run/predictions/predictions.json")));

  CHECK(cli::run({"eval", "--gold", tmp.str("data/eval.json"), "--pred",
                  tmp.str("run/predictions/predictions.json"), "--out", tmp.str("run")}) == 0);
  CHECK(fs::exists(tmp.str("run/reports/report.json")));
  CHECK(fs::exists(tmp.str("run/reports/report.txt")));

  // Ground-truth boxes drive reading, so detection is perfect by construction.
  auto report = nlohmann::json::parse(read_file(tmp.str("run/reports/report.json")));
  CHECK(report["detection"]["f1"].get<double>() == 1.0);
}

TEST_CASE("eval with predictions equal to gold yields all ones") {
  TempDir tmp("perfect");
  CHECK(cli::run({"gen-data", "--category", "II", "--count", "3", "--seed", "5", "--out",
                  tmp.str("data"), "--name", "gold"}) == 0);
  write_perfect_predictions(tmp.str("data/gold.json"), tmp.str("pred.json"));
  CHECK(cli::run({"eval", "--gold", tmp.str("data/gold.json"), "--pred", tmp.str("pred.json"),
                  "--out", tmp.str("run")}) == 0);
  auto report = nlohmann::json::parse(read_file(tmp.str("run/reports/report.json")));
  for (const char* section : {"detection", "spotting", "entity"}) {
    CHECK(report[section]["precision"].get<double>() == 1.0);
    CHECK(report[section]["recall"].get<double>() == 1.0);
    CHECK(report[section]["f1"].get<double>() == 1.0);
  }
  CHECK(report["relative_ie"].get<double>() == 1.0);
}

TEST_CASE("identical seeded runs produce byte-identical reports") {
  TempDir tmp("determinism");
  CHECK(cli::run({"gen-data", "--category", "I", "--count", "3", "--seed", "9", "--out",
                  tmp.str("data"), "--name", "train"}) == 0);
  std::ofstream(tmp.str("config.json"))
      << tiny_config_json(tmp.str("data/train.json"), tmp.str("data/train.json"));
  for (const std::string run : {"a", "b"}) {
    CHECK(cli::run({"train", "--config", tmp.str("config.json"), "--out", tmp.str(run)}) == 0);
    CHECK(cli::run({"predict", "--checkpoint", tmp.str(run + "/checkpoints/model.trk"),
                    "--data", tmp.str("data/train.json"), "--out", tmp.str(run)}) == 0);
    CHECK(cli::run({"eval", "--gold", tmp.str("data/train.json"), "--pred",
                    tmp.str(run + "/predictions/predictions.json"), "--out", tmp.str(run)}) ==
          0);
  }
  CHECK(read_file(tmp.str("a/reports/report.json")) ==
        read_file(tmp.str("b/reports/report.json")));
  CHECK(read_file(tmp.str("a/reports/report.txt")) ==
        read_file(tmp.str("b/reports/report.txt")));
  CHECK(read_file(tmp.str("a/checkpoints/model.trk")) ==
        read_file(tmp.str("b/checkpoints/model.trk")));
}

TEST_CASE("ablate runs a grid and emits a combined table that covers cell outputs") {
  TempDir tmp("ablate");
  CHECK(cli::run({"gen-data", "--category", "I", "--count", "3", "--seed", "4", "--out",
                  tmp.str("data"), "--name", "train"}) == 0);
  nlohmann::ordered_json grid;
  grid["base"] = nlohmann::ordered_json::parse(
      tiny_config_json(tmp.str("data/train.json"), tmp.str("data/train.json")));
  grid["cells"] = nlohmann::ordered_json::array();
  grid["cells"].push_back({{"name", "full"}, {"overrides", nlohmann::ordered_json::object()}});
  grid["cells"].push_back(
      {{"name", "text_only"},
       {"overrides",
        {{"context.use_visual", false}, {"context.use_layout", false}}}});
  std::ofstream(tmp.str("grid.json")) << grid.dump(2);

  CHECK(cli::run({"ablate", "--config", tmp.str("grid.json"), "--out", tmp.str("runs")}) == 0);
  CHECK(fs::exists(tmp.str("runs/reports/ablation.json")));
  CHECK(fs::exists(tmp.str("runs/reports/ablation.txt")));

  auto combined = nlohmann::json::parse(read_file(tmp.str("runs/reports/ablation.json")));
  REQUIRE(combined["cells"].size() == 2);
  // Each combined row matches the cell's own report on disk.
  for (const auto& cell : combined["cells"]) {
    const std::string name = cell["name"].get<std::string>();
    auto own = nlohmann::json::parse(
        read_file(tmp.str("runs/cells/" + name + "/reports/report.json")));
    CHECK(cell["report"] == own);
  }
}

TEST_CASE("data errors exit 2") {
  TempDir tmp("errors");
  std::ofstream(tmp.str("bad.json")) << "{ not json";
  CHECK(cli::run({"eval", "--gold", tmp.str("bad.json"), "--pred", tmp.str("bad.json"),
                  "--out", tmp.str("run")}) == 2);
  std::ofstream(tmp.str("config.json"))
      << tiny_config_json(tmp.str("missing.json"), "");
  CHECK(cli::run({"train", "--config", tmp.str("config.json"), "--out", tmp.str("run")}) == 2);
}
