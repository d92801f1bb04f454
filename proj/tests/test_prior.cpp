#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "docie/prior.hpp"

using namespace docie::prior;
using namespace docie::numkit;

namespace {

Tensor random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("project_to_vocab picks the rigged argmax") {
  std::mt19937_64 rng(3);
  VocabHead head = make_vocab_head(4, 10, rng);
  for (auto& v : head.w.values()) v = 0.0;
  for (auto& v : head.b.values()) v = 0.0;
  // Rig step features and weights so row 0 peaks at index 7.
  head.w.values()[7] = 5.0;  // feature 0 -> logit 7
  Tensor z = Tensor::from_values({1, 4}, {1.0, 0.0, 0.0, 0.0});
  CHECK(project_to_vocab(z, head) == std::vector<int>{7});
}

TEST_CASE("all-zero logits break ties toward PAD") {
  std::mt19937_64 rng(4);
  VocabHead head = make_vocab_head(4, 10, rng);
  for (auto& v : head.w.values()) v = 0.0;
  for (auto& v : head.b.values()) v = 0.0;
  Tensor z = Tensor::from_values({2, 4}, {1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0});
  CHECK(project_to_vocab(z, head) == std::vector<int>{0, 0});
}

TEST_CASE("argmax agrees with a scan-based oracle on random logits") {
  std::mt19937_64 rng(5);
  VocabHead head = make_vocab_head(6, 12, rng);
  for (int trial = 0; trial < 40; ++trial) {
    Tensor z = random_matrix(5, 6, rng);
    Tensor logits = vocab_head_logits(z, head);
    auto got = project_to_vocab(z, head);
    for (int t = 0; t < 5; ++t) {
      int best = 0;
      for (int j = 1; j < 12; ++j)
        if (logits.at(t * 12 + j) > logits.at(t * 12 + best)) best = j;
      CHECK(got[static_cast<size_t>(t)] == best);
    }
  }
}

TEST_CASE("toy prior output length equals input length and is deterministic") {
  std::mt19937_64 rng(7);
  ToyPriorModel prior(10, 8, rng, false);
  Tensor one = prior.encode({4});
  CHECK(one.shape() == std::vector<int>{1, 8});
  Tensor a1 = prior.encode({4, 5, 6, 4});
  Tensor a2 = prior.encode({4, 5, 6, 4});
  CHECK(a1.shape() == std::vector<int>{4, 8});
  for (int i = 0; i < a1.numel(); ++i) CHECK(a1.at(i) == a2.at(i));
}

TEST_CASE("frozen prior exposes no trainable parameters") {
  std::mt19937_64 rng(8);
  ToyPriorModel frozen(10, 8, rng, true);
  for (auto& [name, tensor] : frozen.parameters()) CHECK(!tensor.requires_grad());
  ToyPriorModel live(10, 8, rng, false);
  for (auto& [name, tensor] : live.parameters()) CHECK(tensor.requires_grad());
}

TEST_CASE("prior factory") {
  std::mt19937_64 rng(9);
  CHECK(make_prior("none", 10, 8, rng) == nullptr);
  CHECK(make_prior("toy", 10, 8, rng)->name() == "toy");
  CHECK(make_prior("frozen-toy", 10, 8, rng)->name() == "frozen-toy");
  CHECK_THROWS(make_prior("bert", 10, 8, rng));
}

TEST_CASE("closed gate reduces absorption to the linear path") {
  std::mt19937_64 rng(11);
  GateParams gate = make_gate(6, 5, rng);
  Tensor z = random_matrix(4, 5, rng);
  Tensor a = random_matrix(4, 6, rng);
  Tensor linear_only = matmul(z, gate.w_o);

  // b_g = -30 drives the sigmoid gate to zero.
  for (auto& v : gate.b_g.values()) v = -30.0;
  for (auto& v : gate.w_g.values()) v = 0.0;
  for (auto& v : gate.u_g.values()) v = 0.0;
  Tensor closed = gated_absorb(z, a, gate);
  for (int i = 0; i < closed.numel(); ++i)
    CHECK(std::abs(closed.at(i) - linear_only.at(i)) < 1e-9);
}

TEST_CASE("zero candidate reduces absorption to the linear path") {
  std::mt19937_64 rng(12);
  GateParams gate = make_gate(6, 5, rng);
  Tensor z = random_matrix(4, 5, rng);
  Tensor a = random_matrix(4, 6, rng);
  Tensor linear_only = matmul(z, gate.w_o);

  // Gate wide open but r' = tanh(0) = 0.
  for (auto& v : gate.b_g.values()) v = 30.0;
  for (auto& v : gate.w_r.values()) v = 0.0;
  for (auto& v : gate.u_r.values()) v = 0.0;
  for (auto& v : gate.b_r.values()) v = 0.0;
  Tensor out = gated_absorb(z, a, gate);
  for (int i = 0; i < out.numel(); ++i)
    CHECK(std::abs(out.at(i) - linear_only.at(i)) < 1e-9);
}

TEST_CASE("gate activations stay inside their open intervals") {
  std::mt19937_64 rng(13);
  GateParams gate = make_gate(6, 5, rng);
  Tensor z = random_matrix(6, 5, rng);
  Tensor a = random_matrix(6, 6, rng);
  const int width = 5;
  Tensor bias_g = docie::nn::tile_rows(reshape(gate.b_g, {1, width}), 6);
  Tensor bias_r = docie::nn::tile_rows(reshape(gate.b_r, {1, width}), 6);
  Tensor g = sigmoid(add(add(matmul(a, gate.w_g), matmul(z, gate.u_g)), bias_g));
  Tensor r = tanh_act(add(add(matmul(a, gate.w_r), matmul(z, gate.u_r)), bias_r));
  for (double v : g.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  for (double v : r.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("length mismatch is a contract error") {
  std::mt19937_64 rng(14);
  GateParams gate = make_gate(6, 5, rng);
  Tensor z = random_matrix(4, 5, rng);
  Tensor a = random_matrix(3, 6, rng);
  CHECK_THROWS_AS(gated_absorb(z, a, gate), contract_error);
}

TEST_CASE("gradients through all six gate weights match finite differences") {
  std::mt19937_64 rng(15);
  GateParams gate = make_gate(4, 3, rng);
  Tensor z = random_matrix(3, 3, rng);
  Tensor a = random_matrix(3, 4, rng);
  std::vector<Tensor> weights = {gate.w_g, gate.u_g, gate.b_g,
                                 gate.w_r, gate.u_r, gate.b_r};
  backward(sum_all(gated_absorb(z, a, gate)));
  for (auto& w : weights) {
    auto f = [&](const Tensor& probe) {
      std::vector<double> saved = w.values();
      const_cast<Tensor&>(w).values() = probe.values();
      const double out = sum_all(gated_absorb(z, a, gate)).item();
      const_cast<Tensor&>(w).values() = saved;
      return out;
    };
    Tensor fd = finite_difference_gradient(f, w, 1e-3);
    for (int i = 0; i < w.numel(); ++i) {
      const double got = w.grad()[static_cast<size_t>(i)];
      const double want = fd.at(i);
      CHECK(std::abs(got - want) <= 1e-4 * std::max({1.0, std::abs(got), std::abs(want)}));
    }
  }
}

TEST_CASE("fusion strategies share shapes and swap cleanly") {
  std::mt19937_64 rng(16);
  GateParams gate = make_gate(6, 5, rng);
  Tensor z = random_matrix(4, 5, rng);
  Tensor a = random_matrix(4, 6, rng);
  for (FusionKind kind : {FusionKind::gating, FusionKind::concat, FusionKind::sum}) {
    Tensor o = fuse_prior(z, a, gate, kind);
    CHECK(o.shape() == std::vector<int>{4, 5});
  }
  CHECK(fusion_from_string("gating") == FusionKind::gating);
  CHECK(fusion_from_string("concat") == FusionKind::concat);
  CHECK(fusion_from_string("sum") == FusionKind::sum);
  CHECK_THROWS(fusion_from_string("other"));
}
