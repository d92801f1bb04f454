#pragma once

#include <array>
#include <optional>
#include <vector>

#include "docie/docdata.hpp"
#include "docie/numkit.hpp"

namespace docie::context {

using numkit::Tensor;

struct ContextConfig {
  int layers = 2;
  int heads = 2;
  int d_model = 64;  // d_e == d_info
  bool use_visual = true;
  bool use_layout = true;
  bool use_textual = true;
  int coord_range = 1000;       // normalized coordinates live in [0, coord_range]
  int rel_half_buckets = 32;    // B; bucket indices span [0, 2B]
};

struct AttentionLayerParams {
  Tensor ln_gamma, ln_beta;          // pre-layer normalization affine
  std::vector<Tensor> wq, wk, wv;    // per head, (d_model, d_model/heads)
  Tensor w_info;                     // (d_model, d_model)
};

struct ContextParams {
  ContextConfig config;
  Tensor coord_embed;                 // (coord_range+1, d_model), shared by all 4 coords
  Tensor rel_buckets;                 // (4*(2B+1), heads), per-coordinate blocks
  Tensor visual_w, visual_b;          // conv2d d_c -> d_model
  std::vector<Tensor> text_conv_w;    // kernel sizes {3,5,7,9}: (k, d_s, d_model/4)
  std::vector<Tensor> text_conv_b;
  Tensor text_mix_w, text_mix_b;      // (d_model, d_model)
  Tensor fuse_gamma, fuse_beta;       // embedding-fusion layer norm affine
  std::vector<AttentionLayerParams> layers;
};

ContextParams make_context(const ContextConfig& config, int visual_channels,
                           int textual_width, std::mt19937_64& rng);

// round(coord / extent * coord_range), clamped to [0, coord_range].
std::array<int, 4> normalize_box(const docdata::BoundingBox& box, int page_width,
                                 int page_height, int coord_range = 1000);

// pe_i = sum of the four coordinate embedding rows.
Tensor embed_position(const std::array<int, 4>& norm_box, const Tensor& coord_embed);

// deltas[i][j] = b_i - b_j componentwise on normalized coordinates.
struct RelativeMatrix {
  int m = 0;
  std::vector<int> deltas;  // m*m*4

  int at(int i, int j, int coord) const {
    return deltas[(static_cast<size_t>(i) * m + j) * 4 + coord];
  }
};

RelativeMatrix relative_positions(const std::vector<std::array<int, 4>>& norm_boxes);

// Signed logarithmic bucket of a coordinate delta; 0 maps to the center
// bucket `half`, and +/-d land in distinct buckets either side of it.
int relative_bucket(int delta, int half_buckets, int clamp_range);

// One scalar bias per head per ordered pair: (m*m, heads).
Tensor embed_relative(const RelativeMatrix& rel, const Tensor& rel_buckets,
                      const ContextConfig& config);

Tensor embed_visual(const Tensor& instance_grid, const ContextParams& params);  // (1, d)
Tensor embed_textual(const Tensor& modulated, const ContextParams& params);     // (1, d)

// emb = LayerNorm(c_hat + z_hat + pe), all (m, d_model).
Tensor fuse_embeddings(const Tensor& visual, const Tensor& textual, const Tensor& position,
                       const ContextParams& params);

// Stacked pre-LN residual multi-head attention with the relative bias added
// to every head's logits; pass std::nullopt to run without spatial bias.
Tensor spatial_self_attention(const Tensor& emb, const std::optional<Tensor>& rel_bias,
                              const ContextParams& params);

// u = [o_t, c_i] per step: (T, d_s + d_model).
Tensor fuse_context(const Tensor& modulated, const Tensor& context_row);

}  // namespace docie::context
