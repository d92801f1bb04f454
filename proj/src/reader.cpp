#include "docie/reader.hpp"

#include <algorithm>
#include <cmath>

namespace docie::reader {

using namespace numkit;

ReaderParams make_reader(const ReaderConfig& config, int vocab_size, std::mt19937_64& rng) {
  ReaderParams p;
  p.config = config;
  const int c = config.conv_channels;
  p.conv1_w = Tensor::uniform_init({3, 3, 1, c}, 9, rng);
  p.conv1_b = Tensor::zeros({c}, true);
  // 5x5 on top of 3x3 covers a whole glyph cell, so per-column channels can
  // carry glyph identity before the row collapse.
  p.conv2_w = Tensor::uniform_init({5, 5, c, c}, 25 * c, rng);
  p.conv2_b = Tensor::zeros({c}, true);
  if (config.encoder_hidden % 2 != 0) {
    throw contract_error("reader: encoder_hidden must be even for the two directions");
  }
  p.encoder = nn::make_lstm(c + 8, config.encoder_hidden / 2, rng);
  p.encoder_reverse = nn::make_lstm(c + 8, config.encoder_hidden / 2, rng);
  p.char_embed = Tensor::uniform_init({vocab_size, config.char_embed_width},
                                      config.char_embed_width, rng);
  p.att_state_w = Tensor::uniform_init({config.decoder_hidden, config.attention_width},
                                       config.decoder_hidden, rng);
  p.att_enc_w = Tensor::uniform_init({config.encoder_hidden, config.attention_width},
                                     config.encoder_hidden, rng);
  p.att_b = Tensor::zeros({config.attention_width}, true);
  p.att_v = Tensor::uniform_init({config.attention_width, 1}, config.attention_width, rng);
  p.decoder = nn::make_lstm(config.encoder_hidden + config.char_embed_width,
                            config.decoder_hidden, rng);
  p.out_w = Tensor::uniform_init({config.decoder_hidden, vocab_size},
                                 config.decoder_hidden, rng);
  p.out_b = Tensor::zeros({vocab_size}, true);
  return p;
}

int feature_cols_for_box(const docdata::BoundingBox& box, const ReaderConfig& config) {
  const double aspect = static_cast<double>(box.width()) / box.height();
  const int cols = static_cast<int>(std::lround(aspect * config.cols_per_aspect));
  return std::clamp(cols, 4, config.max_feature_cols);
}

Tensor crop_and_resize(const docdata::DocumentSample& sample, const docdata::BoundingBox& box,
                       int rows, int cols) {
  if (!sample.has_raster()) {
    throw contract_error("crop_and_resize: sample has no raster");
  }
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > sample.page_width ||
      box.y1 > sample.page_height || box.x0 >= box.x1 || box.y0 >= box.y1) {
    throw contract_error("crop_and_resize: box outside page");
  }
  const int bw = box.width(), bh = box.height();
  Tensor out = Tensor::zeros({rows, cols, 1});
  auto page_at = [&](int x, int y) {
    return sample.raster[static_cast<size_t>(y) * sample.page_width + x];
  };
  for (int r = 0; r < rows; ++r) {
    // Center-aligned source coordinate, clamped to the crop region.
    const double sy = (r + 0.5) * bh / rows - 0.5;
    const double fy = std::clamp(sy, 0.0, static_cast<double>(bh - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, bh - 1);
    const double wy = fy - y0;
    for (int c = 0; c < cols; ++c) {
      const double sx = (c + 0.5) * bw / cols - 0.5;
      const double fx = std::clamp(sx, 0.0, static_cast<double>(bw - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, bw - 1);
      const double wx = fx - x0;
      const double v00 = page_at(box.x0 + x0, box.y0 + y0);
      const double v01 = page_at(box.x0 + x1, box.y0 + y0);
      const double v10 = page_at(box.x0 + x0, box.y0 + y1);
      const double v11 = page_at(box.x0 + x1, box.y0 + y1);
      out.values()[static_cast<size_t>(r) * cols + c] =
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  return out;
}

InstanceFeature extract_instance_features(const docdata::DocumentSample& sample,
                                          const docdata::BoundingBox& box,
                                          const ReaderParams& params) {
  const int cols = feature_cols_for_box(box, params.config);
  Tensor crop = crop_and_resize(sample, box, params.config.feature_rows, cols);
  Tensor h1 = relu(conv2d(crop, params.conv1_w, params.conv1_b));
  Tensor h2 = relu(conv2d(h1, params.conv2_w, params.conv2_b));
  return {h2};
}

namespace {

// Fixed sinusoidal column-position channels, appended to the collapsed
// feature columns so the encoder sees position directly.
Tensor position_channels(int cols) {
  Tensor pos = Tensor::zeros({cols, 8});
  for (int c = 0; c < cols; ++c) {
    const double u = cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0;
    for (int f = 0; f < 4; ++f) {
      const double angle = u * 3.14159265358979323846 * (1 << f);
      pos.values()[static_cast<size_t>(c) * 8 + 2 * f] = std::sin(angle);
      pos.values()[static_cast<size_t>(c) * 8 + 2 * f + 1] = std::cos(angle);
    }
  }
  return pos;
}

}  // namespace

Tensor encode_sequence(const InstanceFeature& feature, const ReaderParams& params) {
  const int rows = feature.grid.dim(0);
  const int cols = feature.grid.dim(1);
  const int channels = feature.grid.dim(2);
  Tensor flat = reshape(feature.grid, {rows, cols * channels});
  Tensor mean_rows = matmul(Tensor::full({1, rows}, 1.0 / rows), flat);
  Tensor columns = concat({reshape(mean_rows, {cols, channels}), position_channels(cols)}, 1);
  return concat({nn::lstm_run(columns, params.encoder),
                 nn::lstm_run_reverse(columns, params.encoder_reverse)},
                1);
}

DecodeStep attention_decode_step(const Tensor& encoded, const DecoderState& state,
                                 const ReaderParams& params) {
  if (state.t >= params.config.t_max) {
    throw contract_error("attention_decode_step: step " + std::to_string(state.t) +
                         " reached t_max " + std::to_string(params.config.t_max));
  }
  const int l = encoded.dim(0);
  // e_j = v^T tanh(W_s s + W_h h_j + b), computed for all j at once.
  Tensor proj_state = add(matmul(state.lstm.h, params.att_state_w),
                          reshape(params.att_b, {1, params.config.attention_width}));
  Tensor energies = matmul(
      tanh_act(add(matmul(encoded, params.att_enc_w), nn::tile_rows(proj_state, l))),
      params.att_v);  // (l, 1)
  Tensor energy_row = transpose(energies);     // (1, l)
  Tensor alpha = softmax_rowwise(energy_row);  // (1, l)
  Tensor glimpse = matmul(alpha, encoded);     // (1, d_h)
  Tensor prev_embed = embedding_lookup(params.char_embed, {state.y_prev});
  Tensor x = concat({glimpse, prev_embed}, 1);
  nn::LstmState next = nn::lstm_step(x, state.lstm, params.decoder);
  Tensor logits = nn::linear(next.h, params.out_w, params.out_b);
  DecodeStep step;
  step.alpha = alpha;
  step.att_energies = energy_row;
  step.glimpse = glimpse;
  step.next_state = {next, state.t + 1, state.y_prev};
  step.char_logits = logits;
  return step;
}

Recognition recognize(const InstanceFeature& feature, const ReaderParams& params,
                      const docdata::Vocabulary& vocab, RecognitionMode mode,
                      const std::string& gt) {
  return decode_encoded(encode_sequence(feature, params), params, vocab, mode, gt);
}

Recognition decode_encoded(const Tensor& encoded, const ReaderParams& params,
                           const docdata::Vocabulary& vocab, RecognitionMode mode,
                           const std::string& gt) {
  DecoderState state;
  state.lstm = nn::lstm_zero_state(params.config.decoder_hidden);

  std::vector<Tensor> states, logits, att_rows;
  std::vector<int> predicted;
  if (mode == RecognitionMode::teacher_forced) {
    const std::vector<int> gt_idx = vocab.encode(gt);
    const int steps = static_cast<int>(gt_idx.size()) + 1;
    for (int t = 0; t < steps; ++t) {
      DecodeStep step = attention_decode_step(encoded, state, params);
      states.push_back(step.next_state.lstm.h);
      logits.push_back(step.char_logits);
      att_rows.push_back(step.att_energies);
      predicted.push_back(argmax_rowwise(step.char_logits)[0]);
      state = step.next_state;
      state.y_prev = t < static_cast<int>(gt_idx.size()) ? gt_idx[static_cast<size_t>(t)]
                                                         : docdata::Vocabulary::kEos;
    }
  } else {
    for (int t = 0; t < params.config.t_max; ++t) {
      DecodeStep step = attention_decode_step(encoded, state, params);
      states.push_back(step.next_state.lstm.h);
      logits.push_back(step.char_logits);
      att_rows.push_back(step.att_energies);
      const int y = argmax_rowwise(step.char_logits)[0];
      predicted.push_back(y);
      state = step.next_state;
      state.y_prev = y;
      if (y == docdata::Vocabulary::kEos) break;
    }
  }

  Recognition result;
  result.textual = concat(states, 0);
  result.logits = concat(logits, 0);
  result.att_logits = concat(att_rows, 0);
  result.predicted = predicted;
  std::vector<int> content = predicted;
  if (mode == RecognitionMode::teacher_forced && !content.empty()) content.pop_back();
  if (mode == RecognitionMode::free_running && !content.empty() &&
      content.back() == docdata::Vocabulary::kEos) {
    content.pop_back();
  }
  result.chars = vocab.decode_aligned(content);
  return result;
}

Tensor recognition_loss(const Tensor& logits, const std::string& gt,
                        const docdata::Vocabulary& vocab) {
  std::vector<int> targets = vocab.encode(gt);
  targets.push_back(docdata::Vocabulary::kEos);
  if (logits.dim(0) != static_cast<int>(targets.size())) {
    throw contract_error("recognition_loss: " + std::to_string(logits.dim(0)) +
                         " logit rows for " + std::to_string(targets.size()) + " targets");
  }
  return nn::cross_entropy_mean(logits, targets);
}

}  // namespace docie::reader
