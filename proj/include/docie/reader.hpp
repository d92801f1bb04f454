#pragma once

#include <string>
#include <vector>

#include "docie/docdata.hpp"
#include "docie/nn.hpp"
#include "docie/numkit.hpp"

namespace docie::reader {

using numkit::Tensor;

struct ReaderConfig {
  int conv_channels = 12;   // d_c of the instance feature grid
  int encoder_hidden = 32;  // d_h
  int decoder_hidden = 64;  // d_s
  int attention_width = 32;
  int char_embed_width = 8;
  int t_max = 64;
  int feature_rows = 8;
  int max_feature_cols = 128;
  int cols_per_aspect = 4;  // L = clamp(aspect * cols_per_aspect, 4, max)
};

struct ReaderParams {
  ReaderConfig config;
  Tensor conv1_w, conv1_b;  // 3x3, 1 -> d_c
  Tensor conv2_w, conv2_b;  // 3x3, d_c -> d_c
  nn::LstmParams encoder;          // forward direction, d_h/2
  nn::LstmParams encoder_reverse;  // backward direction, d_h/2
  Tensor char_embed;        // (V, char_embed_width)
  Tensor att_state_w;       // (d_s, att)
  Tensor att_enc_w;         // (d_h, att)
  Tensor att_b;             // (att)
  Tensor att_v;             // (att, 1)
  nn::LstmParams decoder;   // input width d_h + char_embed_width
  Tensor out_w;             // (d_s, V)
  Tensor out_b;             // (V)
};

ReaderParams make_reader(const ReaderConfig& config, int vocab_size, std::mt19937_64& rng);

// Columns of the resized instance grid, proportional to the box aspect ratio.
int feature_cols_for_box(const docdata::BoundingBox& box, const ReaderConfig& config);

// Bilinear crop of the page raster resized to (rows, cols), channel width 1.
Tensor crop_and_resize(const docdata::DocumentSample& sample, const docdata::BoundingBox& box,
                       int rows, int cols);

struct InstanceFeature {
  Tensor grid;  // (rows, L, d_c)
};

InstanceFeature extract_instance_features(const docdata::DocumentSample& sample,
                                          const docdata::BoundingBox& box,
                                          const ReaderParams& params);

// Row-mean collapse followed by a single-layer bidirectional recurrent
// encoder (d_h/2 per direction): (L, d_h).
Tensor encode_sequence(const InstanceFeature& feature, const ReaderParams& params);

struct DecoderState {
  nn::LstmState lstm;  // lstm.h is the paper-visible hidden state s
  int t = 0;
  int y_prev = docdata::Vocabulary::kGo;
};

struct DecodeStep {
  Tensor alpha;         // (1, l), probability simplex
  Tensor att_energies;  // (1, l), pre-softmax scores
  Tensor glimpse;       // (1, d_h)
  DecoderState next_state;
  Tensor char_logits;  // (1, V)
};

DecodeStep attention_decode_step(const Tensor& encoded, const DecoderState& state,
                                 const ReaderParams& params);

enum class RecognitionMode { teacher_forced, free_running };

struct Recognition {
  std::string chars;           // transcript, GO excluded, EOS excluded
  Tensor textual;              // z: (T, d_s), decoder states incl. the EOS step
  Tensor logits;               // (T, V)
  Tensor att_logits;           // (T, l), attention energies per step
  std::vector<int> predicted;  // argmax char index per step
};

// Teacher-forced mode consumes `gt` and emits exactly len(gt)+1 steps;
// free-running mode stops after emitting EOS or at t_max steps.
Recognition recognize(const InstanceFeature& feature, const ReaderParams& params,
                      const docdata::Vocabulary& vocab, RecognitionMode mode,
                      const std::string& gt = "");

// Decoder loop over an already-encoded sequence (recognize = encode + this).
Recognition decode_encoded(const Tensor& encoded, const ReaderParams& params,
                           const docdata::Vocabulary& vocab, RecognitionMode mode,
                           const std::string& gt = "");

// Mean NLL over the teacher-forced steps (gt characters plus EOS).
Tensor recognition_loss(const Tensor& logits, const std::string& gt,
                        const docdata::Vocabulary& vocab);

}  // namespace docie::reader
