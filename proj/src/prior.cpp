#include "docie/prior.hpp"

#include "docie/docdata.hpp"

namespace docie::prior {

using namespace numkit;

ToyPriorModel::ToyPriorModel(int vocab_size, int width, std::mt19937_64& rng, bool frozen)
    : width_(width), frozen_(frozen) {
  if (width % 2 != 0) {
    throw contract_error("toy prior: width " + std::to_string(width) + " must be even");
  }
  embed_ = Tensor::uniform_init({vocab_size, width}, width, rng);
  forward_ = nn::make_lstm(width, width / 2, rng);
  backward_ = nn::make_lstm(width, width / 2, rng);
  if (frozen_) {
    embed_.set_requires_grad(false);
    for (auto* p : {&forward_, &backward_}) {
      p->wx.set_requires_grad(false);
      p->wh.set_requires_grad(false);
      p->b.set_requires_grad(false);
    }
  }
}

Tensor ToyPriorModel::encode(const std::vector<int>& char_indices) const {
  Tensor embedded = embedding_lookup(embed_, char_indices);
  Tensor fwd = nn::lstm_run(embedded, forward_);
  Tensor bwd = nn::lstm_run_reverse(embedded, backward_);
  return concat({fwd, bwd}, 1);
}

std::vector<std::pair<std::string, Tensor>> ToyPriorModel::parameters() {
  return {{"prior.embed", embed_},
          {"prior.fwd.wx", forward_.wx},
          {"prior.fwd.wh", forward_.wh},
          {"prior.fwd.b", forward_.b},
          {"prior.bwd.wx", backward_.wx},
          {"prior.bwd.wh", backward_.wh},
          {"prior.bwd.b", backward_.b}};
}

std::unique_ptr<PriorModel> make_prior(const std::string& name, int vocab_size, int width,
                                       std::mt19937_64& rng) {
  if (name == "none") return nullptr;
  if (name == "toy") return std::make_unique<ToyPriorModel>(vocab_size, width, rng, false);
  if (name == "frozen-toy")
    return std::make_unique<ToyPriorModel>(vocab_size, width, rng, true);
  throw docdata::usage_error("unknown prior model \"" + name +
                             "\" (expected toy, frozen-toy or none)");
}

GateParams make_gate(int knowledge_width, int textual_width, std::mt19937_64& rng) {
  GateParams g;
  g.w_g = Tensor::uniform_init({knowledge_width, textual_width}, knowledge_width, rng);
  g.u_g = Tensor::uniform_init({textual_width, textual_width}, textual_width, rng);
  g.b_g = Tensor::zeros({textual_width}, true);
  g.w_r = Tensor::uniform_init({knowledge_width, textual_width}, knowledge_width, rng);
  g.u_r = Tensor::uniform_init({textual_width, textual_width}, textual_width, rng);
  g.b_r = Tensor::zeros({textual_width}, true);
  g.w_o = Tensor::uniform_init({textual_width, textual_width}, textual_width, rng);
  g.w_cat = Tensor::uniform_init({knowledge_width + textual_width, textual_width},
                                 knowledge_width + textual_width, rng);
  return g;
}

VocabHead make_vocab_head(int textual_width, int vocab_size, std::mt19937_64& rng) {
  VocabHead head;
  head.w = Tensor::uniform_init({textual_width, vocab_size}, textual_width, rng);
  head.b = Tensor::zeros({vocab_size}, true);
  return head;
}

Tensor vocab_head_logits(const Tensor& z, const VocabHead& head) {
  return nn::linear(z, head.w, head.b);
}

std::vector<int> project_to_vocab(const Tensor& z, const VocabHead& head) {
  if (z.rank() != 2 || z.dim(0) < 1) {
    throw shape_error("project_to_vocab: z must be (T,d_s), got " +
                      shape_to_string(z.shape()));
  }
  return argmax_rowwise(vocab_head_logits(z, head));
}

Tensor gated_absorb(const Tensor& z, const Tensor& a, const GateParams& gate) {
  if (a.dim(0) != z.dim(0)) {
    throw contract_error("gated_absorb: knowledge length " + std::to_string(a.dim(0)) +
                         " does not match textual length " + std::to_string(z.dim(0)));
  }
  const int width = gate.b_g.dim(0);
  Tensor bias_g = nn::tile_rows(reshape(gate.b_g, {1, width}), z.dim(0));
  Tensor bias_r = nn::tile_rows(reshape(gate.b_r, {1, width}), z.dim(0));
  Tensor g = sigmoid(add(add(matmul(a, gate.w_g), matmul(z, gate.u_g)), bias_g));
  Tensor r = tanh_act(add(add(matmul(a, gate.w_r), matmul(z, gate.u_r)), bias_r));
  return add(mul(g, r), matmul(z, gate.w_o));
}

FusionKind fusion_from_string(const std::string& name) {
  if (name == "gating") return FusionKind::gating;
  if (name == "concat") return FusionKind::concat;
  if (name == "sum") return FusionKind::sum;
  throw docdata::usage_error("unknown fusion \"" + name +
                             "\" (expected gating, concat or sum)");
}

Tensor fuse_prior(const Tensor& z, const Tensor& a, const GateParams& gate, FusionKind kind) {
  switch (kind) {
    case FusionKind::gating:
      return gated_absorb(z, a, gate);
    case FusionKind::sum:
      return add(matmul(a, gate.w_r), matmul(z, gate.w_o));
    case FusionKind::concat:
      return matmul(concat({a, z}, 1), gate.w_cat);
  }
  throw contract_error("fuse_prior: invalid fusion kind");
}

}  // namespace docie::prior
