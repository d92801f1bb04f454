#pragma once

#include <string>
#include <vector>

#include "docie/pipeline.hpp"
#include "docie/trainkit.hpp"

namespace docie::cli {

// Exit codes: 0 success, 1 usage, 2 data error, 3 training abort.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

struct RunConfig {
  std::string train_data;
  std::string eval_data;
  std::string category = "I";
  std::vector<std::string> entity_classes;  // defaults to the category's classes
  pipeline::ModelConfig model;
  trainkit::TrainConfig train;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_json(const std::string& text);

// Vocabulary reconstructed from a persisted character set.
docdata::Vocabulary vocabulary_from_charset(const std::string& charset);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string meta_path;
  std::string log_path;
  bool aborted = false;
};

// Builds the model from the train split, trains it, and writes
// checkpoints/, logs/ under `out_dir`.
TrainOutputs run_training(const RunConfig& config, const std::string& out_dir);

// Loads a checkpoint (+ sibling .meta.json) and predicts over a data file.
std::vector<std::vector<pipeline::InstancePrediction>> run_prediction(
    const std::string& checkpoint_path, const std::string& data_path);

}  // namespace docie::cli
