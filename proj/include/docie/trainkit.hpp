#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "docie/metrics.hpp"
#include "docie/pipeline.hpp"

namespace docie::trainkit {

using numkit::Tensor;

struct train_error : std::runtime_error {
  explicit train_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  double lambda_recog = 1.0;
  double lambda_info = 1.0;
  double lr = 1e-4;
  std::vector<int> decay_epochs = {5, 7, 8};
  int batch_size = 4;
  int epochs = 10;
  std::uint64_t seed = 1;
  std::string mode = "e2e";  // e2e | base1 | base2
  double aux_weight = 0.1;        // vocabulary-head cross entropy
  double column_aux_weight = 1.0; // column-head cross entropy (reader bootstrap)
  double clip_norm = 5.0;
  double weight_decay = 0.01;
  // The reading and extraction branches tolerate different step sizes at
  // desk scale; these scale the learning rate per parameter group.
  double reader_lr_scale = 1.0;
  double extraction_lr_scale = 1.0;
  int eval_every = 1;  // epochs between held-out evaluations; 0 disables
  double divergence_threshold = 1e6;
};

// L = L_det + lambda_recog * L_recog + lambda_info * L_info. The detection
// slot stays in the signature even though it is always zero here.
Tensor joint_loss(const Tensor& l_det, const Tensor& l_recog, const Tensor& l_info,
                  const TrainConfig& config);

// lr * 0.1^(number of decay epochs <= epoch).
double lr_at(int epoch, const TrainConfig& config);

// Decoupled-weight-decay adaptive optimizer.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  // Updates every trainable parameter in place; throws train_error on a NaN
  // gradient, naming the parameter.
  void step(checkpoint::ParamMap& params, double lr);
  // One optimizer step over several groups, each with its own rate.
  void step_groups(const std::vector<std::pair<checkpoint::ParamMap*, double>>& groups);
  long step_count() const { return step_count_; }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::unordered_map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
};

void zero_gradients(checkpoint::ParamMap& params);
// Scales gradients so their global norm is at most `max_norm`.
double clip_gradients(checkpoint::ParamMap& params, double max_norm);

struct EpochLog {
  int epoch = 0;
  std::string phase;  // "joint", "reader", "extraction"
  double lr = 0.0;
  double recognition_loss = 0.0;
  double information_loss = 0.0;
  std::optional<metrics::Report> eval;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool aborted = false;
};

// Runs the configured mode. e2e: one joint phase. base2: reader on the
// recognition loss, then frozen while the extraction stack trains. base1:
// like base2 but the conv feature extractor stays at its initialization
// during the reader phase.
TrainResult train(pipeline::Model& model,
                  const std::vector<docdata::DocumentSample>& train_set,
                  const std::vector<docdata::DocumentSample>& eval_set,
                  const TrainConfig& config);

std::string epoch_log_to_json(const EpochLog& entry);

}  // namespace docie::trainkit
