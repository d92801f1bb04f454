#pragma once

#include <memory>
#include <string>
#include <vector>

#include "docie/checkpoint.hpp"
#include "docie/context.hpp"
#include "docie/docdata.hpp"
#include "docie/extractor.hpp"
#include "docie/metrics.hpp"
#include "docie/prior.hpp"
#include "docie/reader.hpp"

namespace docie::pipeline {

using numkit::Tensor;

struct ModelConfig {
  reader::ReaderConfig reader;
  context::ContextConfig context;
  int prior_width = 32;
  std::string prior_model = "toy";  // toy | frozen-toy | none
  std::string fusion = "gating";    // gating | concat | sum
  int lstm_width = 64;              // extractor hidden units
  std::uint64_t init_seed = 1;
};

struct Model {
  ModelConfig config;
  docdata::Vocabulary vocab;
  extractor::TagSpace tag_space;

  reader::ReaderParams reader_params;
  std::unique_ptr<prior::PriorModel> prior_model;
  prior::GateParams gate;
  prior::VocabHead vocab_head;
  // Training-only head over encoder columns; its char targets come from
  // uniform-pitch geometry and bootstrap the reader on synthetic pages.
  prior::VocabHead column_head;
  context::ContextParams context_params;
  extractor::ExtractorParams extractor_params;
  prior::FusionKind fusion = prior::FusionKind::gating;

  // Named parameters in registration order (checkpoint layout).
  checkpoint::ParamMap parameters();
  // Parameter groups for staged training.
  checkpoint::ParamMap reader_parameters();
  checkpoint::ParamMap extraction_parameters();  // everything past the reader
  void set_reader_trainable(bool trainable);
};

Model build_model(const ModelConfig& config, const docdata::Vocabulary& vocab,
                  const extractor::TagSpace& tag_space);

struct DocumentLosses {
  Tensor recognition;  // mean over instances
  Tensor information;  // mean over instances
  Tensor auxiliary;    // vocabulary-head cross entropy, mean over instances
  Tensor column;       // column-head cross entropy, mean over instances
  Tensor alignment;    // attention energies vs uniform-pitch column targets
};

// `with_information` skips the context/extraction branch (used by staged
// training phases that only optimize the reader).
DocumentLosses training_losses(Model& model, const docdata::DocumentSample& sample,
                               bool with_information = true);

struct InstancePrediction {
  docdata::BoundingBox box;
  std::string text_pred;
  std::vector<std::string> tags_pred;
  std::vector<docdata::Entity> entities;
};

std::vector<InstancePrediction> predict_document(Model& model,
                                                 const docdata::DocumentSample& sample);

// Prediction JSON per the external interface; `load_predictions` reads it
// back for evaluation.
std::string predictions_to_json(const std::vector<std::vector<InstancePrediction>>& docs);
std::vector<std::vector<InstancePrediction>> load_predictions(const std::string& path);

// Evaluation protocol over gold samples and per-document predictions:
// detection, end-to-end spotting, entities, and the relative-IE ratio over
// cared instances (gold tags containing any non-O).
metrics::Report evaluate(const std::vector<docdata::DocumentSample>& golds,
                         const std::vector<std::vector<InstancePrediction>>& preds);

}  // namespace docie::pipeline
