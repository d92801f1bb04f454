#include "docie/context.hpp"

#include <algorithm>
#include <cmath>

#include "docie/nn.hpp"

namespace docie::context {

using namespace numkit;

ContextParams make_context(const ContextConfig& config, int visual_channels,
                           int textual_width, std::mt19937_64& rng) {
  if (config.d_model % config.heads != 0) {
    throw contract_error("context: d_model " + std::to_string(config.d_model) +
                         " not divisible by heads " + std::to_string(config.heads));
  }
  if (config.d_model % 4 != 0) {
    throw contract_error("context: d_model must be divisible by 4 for the textual convs");
  }
  ContextParams p;
  p.config = config;
  const int d = config.d_model;
  p.coord_embed = Tensor::uniform_init({config.coord_range + 1, d}, d, rng);
  const int bins = 2 * config.rel_half_buckets + 1;
  // Zero init: spatial bias starts as a no-op and is learned.
  p.rel_buckets = Tensor::zeros({4 * bins, config.heads}, true);
  p.visual_w = Tensor::uniform_init({3, 3, visual_channels, d}, 9 * visual_channels, rng);
  p.visual_b = Tensor::zeros({d}, true);
  for (int k : {3, 5, 7, 9}) {
    p.text_conv_w.push_back(
        Tensor::uniform_init({k, textual_width, d / 4}, k * textual_width, rng));
    p.text_conv_b.push_back(Tensor::zeros({d / 4}, true));
  }
  p.text_mix_w = Tensor::uniform_init({d, d}, d, rng);
  p.text_mix_b = Tensor::zeros({d}, true);
  p.fuse_gamma = Tensor::full({d}, 1.0, true);
  p.fuse_beta = Tensor::zeros({d}, true);
  const int d_head = d / config.heads;
  for (int layer = 0; layer < config.layers; ++layer) {
    AttentionLayerParams lp;
    lp.ln_gamma = Tensor::full({d}, 1.0, true);
    lp.ln_beta = Tensor::zeros({d}, true);
    for (int h = 0; h < config.heads; ++h) {
      lp.wq.push_back(Tensor::uniform_init({d, d_head}, d, rng));
      lp.wk.push_back(Tensor::uniform_init({d, d_head}, d, rng));
      lp.wv.push_back(Tensor::uniform_init({d, d_head}, d, rng));
    }
    lp.w_info = Tensor::uniform_init({d, d}, d, rng);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

std::array<int, 4> normalize_box(const docdata::BoundingBox& box, int page_width,
                                 int page_height, int coord_range) {
  auto norm = [coord_range](int value, int extent) {
    const int scaled =
        static_cast<int>(std::lround(static_cast<double>(value) / extent * coord_range));
    return std::clamp(scaled, 0, coord_range);
  };
  return {norm(box.x0, page_width), norm(box.y0, page_height), norm(box.x1, page_width),
          norm(box.y1, page_height)};
}

Tensor embed_position(const std::array<int, 4>& norm_box, const Tensor& coord_embed) {
  for (int v : norm_box) {
    if (v < 0 || v >= coord_embed.dim(0)) {
      throw contract_error("embed_position: coordinate " + std::to_string(v) +
                           " outside table of " + std::to_string(coord_embed.dim(0)) +
                           " rows");
    }
  }
  Tensor rows = embedding_lookup(coord_embed,
                                 {norm_box[0], norm_box[1], norm_box[2], norm_box[3]});
  return matmul(Tensor::full({1, 4}, 1.0), rows);  // sum of the four rows
}

RelativeMatrix relative_positions(const std::vector<std::array<int, 4>>& norm_boxes) {
  const int m = static_cast<int>(norm_boxes.size());
  if (m < 1) throw contract_error("relative_positions: need at least one box");
  RelativeMatrix rel;
  rel.m = m;
  rel.deltas.resize(static_cast<size_t>(m) * m * 4);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < 4; ++c)
        rel.deltas[(static_cast<size_t>(i) * m + j) * 4 + c] =
            norm_boxes[static_cast<size_t>(i)][static_cast<size_t>(c)] -
            norm_boxes[static_cast<size_t>(j)][static_cast<size_t>(c)];
  return rel;
}

int relative_bucket(int delta, int half_buckets, int clamp_range) {
  const int d = std::clamp(delta, -clamp_range, clamp_range);
  if (d == 0) return half_buckets;
  const int magnitude = std::abs(d);
  const double scaled = std::log2(static_cast<double>(magnitude)) /
                        std::log2(static_cast<double>(clamp_range)) * (half_buckets - 1);
  const int offset = std::min(1 + static_cast<int>(std::floor(scaled)), half_buckets);
  return d > 0 ? half_buckets + offset : half_buckets - offset;
}

Tensor embed_relative(const RelativeMatrix& rel, const Tensor& rel_buckets,
                      const ContextConfig& config) {
  const int bins = 2 * config.rel_half_buckets + 1;
  const int m = rel.m;
  Tensor bias;
  for (int c = 0; c < 4; ++c) {
    std::vector<int> indices(static_cast<size_t>(m) * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        indices[static_cast<size_t>(i) * m + j] =
            c * bins +
            relative_bucket(rel.at(i, j, c), config.rel_half_buckets, config.coord_range);
    Tensor rows = embedding_lookup(rel_buckets, indices);  // (m*m, heads)
    bias = c == 0 ? rows : add(bias, rows);
  }
  return bias;
}

Tensor embed_visual(const Tensor& instance_grid, const ContextParams& params) {
  Tensor features = relu(conv2d(instance_grid, params.visual_w, params.visual_b));
  const int cells = features.dim(0) * features.dim(1);
  Tensor pooled = max_pool_1d(reshape(features, {cells, params.config.d_model}));
  return reshape(pooled, {1, params.config.d_model});
}

Tensor embed_textual(const Tensor& modulated, const ContextParams& params) {
  Tensor padded = modulated;
  if (modulated.dim(0) < 9) {
    Tensor pad = Tensor::zeros({9 - modulated.dim(0), modulated.dim(1)});
    padded = concat({modulated, pad}, 0);
  }
  std::vector<Tensor> pooled;
  for (size_t k = 0; k < params.text_conv_w.size(); ++k) {
    Tensor conv = relu(conv1d(padded, params.text_conv_w[k], params.text_conv_b[k]));
    pooled.push_back(reshape(max_pool_1d(conv), {1, conv.dim(1)}));
  }
  return nn::linear(concat(pooled, 1), params.text_mix_w, params.text_mix_b);
}

Tensor fuse_embeddings(const Tensor& visual, const Tensor& textual, const Tensor& position,
                       const ContextParams& params) {
  return layer_normalize(add(add(visual, textual), position), params.fuse_gamma,
                         params.fuse_beta);
}

Tensor spatial_self_attention(const Tensor& emb, const std::optional<Tensor>& rel_bias,
                              const ContextParams& params) {
  const int m = emb.dim(0);
  const int d = params.config.d_model;
  if (emb.dim(1) != d) {
    throw shape_error("spatial_self_attention: emb " + shape_to_string(emb.shape()) +
                      " does not match d_model " + std::to_string(d));
  }
  if (rel_bias && (rel_bias->dim(0) != m * m || rel_bias->dim(1) != params.config.heads)) {
    throw shape_error("spatial_self_attention: bias " + shape_to_string(rel_bias->shape()) +
                      " does not match " + std::to_string(m) + " instances");
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor x = emb;
  for (const auto& layer : params.layers) {
    Tensor h = layer_normalize(x, layer.ln_gamma, layer.ln_beta);
    std::vector<Tensor> heads;
    for (size_t j = 0; j < layer.wq.size(); ++j) {
      Tensor q = matmul(h, layer.wq[j]);
      Tensor k = matmul(h, layer.wk[j]);
      Tensor v = matmul(h, layer.wv[j]);
      Tensor scores = scale(matmul(q, transpose(k)), inv_scale);
      if (rel_bias) {
        Tensor head_bias =
            reshape(slice_cols(*rel_bias, static_cast<int>(j), static_cast<int>(j) + 1),
                    {m, m});
        scores = add(scores, head_bias);
      }
      heads.push_back(matmul(softmax_rowwise(scores), v));
    }
    Tensor attended = matmul(concat(heads, 1), layer.w_info);
    x = add(x, attended);
  }
  return x;
}

Tensor fuse_context(const Tensor& modulated, const Tensor& context_row) {
  return concat({modulated, nn::tile_rows(context_row, modulated.dim(0))}, 1);
}

}  // namespace docie::context
