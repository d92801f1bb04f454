#pragma once

#include <memory>
#include <string>
#include <vector>

#include "docie/nn.hpp"
#include "docie/numkit.hpp"

namespace docie::prior {

using numkit::Tensor;

// Pluggable language-knowledge source: maps a character index sequence to one
// knowledge vector per character. Implementations must be deterministic.
class PriorModel {
 public:
  virtual ~PriorModel() = default;
  virtual std::string name() const = 0;
  virtual int width() const = 0;
  virtual Tensor encode(const std::vector<int>& char_indices) const = 0;  // (T, d_a)
  virtual std::vector<std::pair<std::string, Tensor>> parameters() = 0;
};

// Character embedding through a 1-layer bidirectional recurrent encoder.
// The frozen variant keeps its random initialization fixed.
class ToyPriorModel : public PriorModel {
 public:
  ToyPriorModel(int vocab_size, int width, std::mt19937_64& rng, bool frozen);

  std::string name() const override { return frozen_ ? "frozen-toy" : "toy"; }
  int width() const override { return width_; }
  Tensor encode(const std::vector<int>& char_indices) const override;
  std::vector<std::pair<std::string, Tensor>> parameters() override;

 private:
  int width_;
  bool frozen_;
  Tensor embed_;
  nn::LstmParams forward_;
  nn::LstmParams backward_;
};

// "toy", "frozen-toy" or "none" (none returns nullptr; absorption then
// reduces to the plain linear path o = z W_o).
std::unique_ptr<PriorModel> make_prior(const std::string& name, int vocab_size, int width,
                                       std::mt19937_64& rng);

struct GateParams {
  Tensor w_g, u_g, b_g;  // gate g' = sigmoid(a W_g + z U_g + b_g)
  Tensor w_r, u_r, b_r;  // candidate r' = tanh(a W_r + z U_r + b_r)
  Tensor w_o;            // (d_s, d_s)
  Tensor w_cat;          // ((d_a + d_s), d_s), used by the concat fusion only
};

GateParams make_gate(int knowledge_width, int textual_width, std::mt19937_64& rng);

// Separate vocabulary-projection head for the prior path (z -> char logits).
struct VocabHead {
  Tensor w;  // (d_s, V)
  Tensor b;  // (V)
};

VocabHead make_vocab_head(int textual_width, int vocab_size, std::mt19937_64& rng);

Tensor vocab_head_logits(const Tensor& z, const VocabHead& head);
// Per-step argmax over vocabulary logits; ties break to the lowest index.
std::vector<int> project_to_vocab(const Tensor& z, const VocabHead& head);

// o = g' * r' + z W_o, elementwise per step; len(a) must equal len(z).
Tensor gated_absorb(const Tensor& z, const Tensor& a, const GateParams& gate);

enum class FusionKind { gating, concat, sum };
FusionKind fusion_from_string(const std::string& name);

// Fusion-strategy switch: gating per gated_absorb; sum = a W_r + z W_o;
// concat = [a, z] W_cat.
Tensor fuse_prior(const Tensor& z, const Tensor& a, const GateParams& gate, FusionKind kind);

}  // namespace docie::prior
