#include "docie/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>

namespace docie::trainkit {

using namespace numkit;

Tensor joint_loss(const Tensor& l_det, const Tensor& l_recog, const Tensor& l_info,
                  const TrainConfig& config) {
  return add(l_det, add(scale(l_recog, config.lambda_recog),
                        scale(l_info, config.lambda_info)));
}

double lr_at(int epoch, const TrainConfig& config) {
  int decays = 0;
  for (int e : config.decay_epochs) {
    if (e <= epoch) ++decays;
  }
  return config.lr * std::pow(0.1, decays);
}

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(checkpoint::ParamMap& params, double lr) {
  step_groups({{&params, lr}});
}

void AdamW::step_groups(const std::vector<std::pair<checkpoint::ParamMap*, double>>& groups) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (const auto& [params, lr] : groups) {
    for (auto& [name, tensor] : *params) {
      if (!tensor.requires_grad()) continue;
      const auto& grad = tensor.grad();
      for (double g : grad) {
        if (std::isnan(g)) {
          throw train_error("optimizer: NaN gradient in parameter " + name);
        }
      }
      auto& [m, v] = moments_[tensor.node_id()];
      if (m.empty()) {
        m.assign(grad.size(), 0.0);
        v.assign(grad.size(), 0.0);
      }
      auto& values = tensor.values();
      for (size_t i = 0; i < grad.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_) + lr * weight_decay_ * values[i];
      }
    }
  }
}

void zero_gradients(checkpoint::ParamMap& params) {
  for (auto& [name, tensor] : params) tensor.zero_grad();
}

double clip_gradients(checkpoint::ParamMap& params, double max_norm) {
  double sum_sq = 0.0;
  for (auto& [name, tensor] : params) {
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    for (double g : tensor.grad()) sum_sq += g * g;
  }
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, tensor] : params) {
      if (!tensor.requires_grad() || !tensor.has_grad()) continue;
      for (double& g : tensor.grad_buffer()) g *= factor;
    }
  }
  return norm;
}

namespace {

struct PhasePlan {
  std::string name;      // "joint", "reader", "extraction"
  bool use_recog = true;
  bool use_info = true;
};

std::vector<PhasePlan> phases_for_mode(const std::string& mode) {
  if (mode == "e2e") return {{"joint", true, true}};
  if (mode == "base2" || mode == "base1") {
    return {{"reader", true, false}, {"extraction", false, true}};
  }
  throw train_error("unknown training mode \"" + mode + "\" (expected e2e, base1 or base2)");
}

std::vector<double> snapshot_values(checkpoint::ParamMap& params) {
  std::vector<double> flat;
  for (auto& [name, tensor] : params)
    flat.insert(flat.end(), tensor.values().begin(), tensor.values().end());
  return flat;
}

void restore_values(checkpoint::ParamMap& params, const std::vector<double>& flat) {
  size_t off = 0;
  for (auto& [name, tensor] : params) {
    std::copy_n(flat.begin() + static_cast<long>(off), tensor.values().size(),
                tensor.values().begin());
    off += tensor.values().size();
  }
}

}  // namespace

TrainResult train(pipeline::Model& model,
                  const std::vector<docdata::DocumentSample>& train_set,
                  const std::vector<docdata::DocumentSample>& eval_set,
                  const TrainConfig& config) {
  if (train_set.empty()) throw train_error("train: empty corpus");
  TrainResult result;
  checkpoint::ParamMap params = model.parameters();
  checkpoint::ParamMap reader_group = model.reader_parameters();
  checkpoint::ParamMap extraction_group = model.extraction_parameters();
  AdamW optimizer(config.weight_decay);
  std::vector<double> last_good = snapshot_values(params);

  const auto phases = phases_for_mode(config.mode);
  for (const auto& phase : phases) {
    if (phase.name == "reader") {
      model.set_reader_trainable(true);
      if (config.mode == "base1") {
        // base1 keeps the shared conv features fixed during reading training.
        model.reader_params.conv1_w.set_requires_grad(false);
        model.reader_params.conv1_b.set_requires_grad(false);
        model.reader_params.conv2_w.set_requires_grad(false);
        model.reader_params.conv2_b.set_requires_grad(false);
      }
    } else if (phase.name == "extraction") {
      model.set_reader_trainable(false);
    }

    std::mt19937_64 shuffle_rng(config.seed ^ 0x5851f42d4c957f2dULL);
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      const double lr = lr_at(epoch, config);
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double recog_sum = 0.0, info_sum = 0.0;
      bool diverged = false;

      for (size_t start = 0; start < order.size(); start += config.batch_size) {
        const size_t stop = std::min(order.size(), start + config.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        zero_gradients(params);
        for (size_t k = start; k < stop; ++k) {
          const auto& sample = train_set[order[k]];
          pipeline::DocumentLosses losses =
              pipeline::training_losses(model, sample, phase.use_info);
          recog_sum += losses.recognition.item();
          info_sum += losses.information.item();
          Tensor l_det = Tensor::scalar(0.0);
          Tensor recog_term =
              phase.use_recog ? losses.recognition : Tensor::scalar(0.0);
          Tensor info_term = phase.use_info ? losses.information : Tensor::scalar(0.0);
          Tensor total = add(joint_loss(l_det, recog_term, info_term, config),
                             add(scale(losses.auxiliary, config.aux_weight),
                                 scale(losses.column, config.column_aux_weight)));
          if (!std::isfinite(total.item()) || total.item() > config.divergence_threshold) {
            diverged = true;
            break;
          }
          backward(scale(total, inv_batch));
        }
        if (diverged) break;
        clip_gradients(params, config.clip_norm);
        optimizer.step_groups({{&reader_group, lr * config.reader_lr_scale},
                               {&extraction_group, lr * config.extraction_lr_scale}});
      }

      if (diverged) {
        restore_values(params, last_good);
        result.aborted = true;
        return result;
      }

      EpochLog entry;
      entry.epoch = epoch;
      entry.phase = phase.name;
      entry.lr = lr;
      entry.recognition_loss = recog_sum / static_cast<double>(train_set.size());
      entry.information_loss = info_sum / static_cast<double>(train_set.size());
      const bool eval_now = !eval_set.empty() && config.eval_every > 0 &&
                            ((epoch + 1) % config.eval_every == 0 ||
                             epoch + 1 == config.epochs);
      if (eval_now) {
        std::vector<std::vector<pipeline::InstancePrediction>> preds;
        preds.reserve(eval_set.size());
        for (const auto& sample : eval_set)
          preds.push_back(pipeline::predict_document(model, sample));
        entry.eval = pipeline::evaluate(eval_set, preds);
      }
      result.log.push_back(std::move(entry));
      last_good = snapshot_values(params);
    }
  }
  model.set_reader_trainable(true);  // leave the model in a uniform state
  return result;
}

std::string epoch_log_to_json(const EpochLog& entry) {
  nlohmann::ordered_json js;
  js["epoch"] = entry.epoch;
  js["phase"] = entry.phase;
  js["lr"] = entry.lr;
  js["recognition_loss"] = entry.recognition_loss;
  js["information_loss"] = entry.information_loss;
  if (entry.eval.has_value()) {
    js["eval"] = nlohmann::ordered_json::parse(metrics::render_json(*entry.eval));
  }
  return js.dump();
}

}  // namespace docie::trainkit
