#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "docie/glyphs.hpp"
#include "docie/reader.hpp"

using namespace docie;
using namespace docie::reader;
using namespace docie::numkit;

namespace {

docdata::DocumentSample page_with(const std::string& text, int x, int y, int scale = 2) {
  docdata::DocumentSample sample;
  sample.category = "I";
  sample.page_width = 400;
  sample.page_height = 120;
  sample.raster.assign(400 * 120, 0.0);
  glyphs::render_text(sample.raster, 400, 120, text, x + scale, y + scale, scale);
  docdata::TextInstance inst;
  inst.box = {x, y, x + glyphs::text_box_width(static_cast<int>(text.size()), scale),
              y + glyphs::text_box_height(scale)};
  inst.text = text;
  inst.tags.assign(text.size(), "O");
  sample.instances.push_back(inst);
  return sample;
}

docdata::Vocabulary small_vocab() {
  docdata::Vocabulary vocab;
  for (char c : std::string("AB0123456789:./- ")) vocab.add_char(c);
  return vocab;
}

ReaderConfig tiny_config() {
  ReaderConfig config;
  config.conv_channels = 4;
  config.encoder_hidden = 8;
  config.decoder_hidden = 12;
  config.attention_width = 6;
  config.char_embed_width = 5;
  return config;
}

// Independent bilinear oracle over an explicit crop buffer.
double bilinear_at(const std::vector<double>& crop, int ch, int cw, double fy, double fx) {
  fy = std::clamp(fy, 0.0, static_cast<double>(ch - 1));
  fx = std::clamp(fx, 0.0, static_cast<double>(cw - 1));
  const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
  const int y1 = std::min(y0 + 1, ch - 1), x1 = std::min(x0 + 1, cw - 1);
  const double wy = fy - y0, wx = fx - x0;
  auto at = [&](int y, int x) { return crop[static_cast<size_t>(y) * cw + x]; };
  return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
}

}  // namespace

TEST_CASE("identical glyph content gives identical features") {
  std::mt19937_64 rng(5);
  ReaderParams params = make_reader(tiny_config(), small_vocab().size(), rng);
  auto sample = page_with("AB1", 10, 10);
  docdata::TextInstance second = sample.instances[0];
  const int w = second.box.width(), h = second.box.height();
  second.box = {200, 60, 200 + w, 60 + h};
  glyphs::render_text(sample.raster, 400, 120, "AB1", 202, 62, 2);
  sample.instances.push_back(second);

  auto f1 = extract_instance_features(sample, sample.instances[0].box, params);
  auto f2 = extract_instance_features(sample, sample.instances[1].box, params);
  REQUIRE(f1.grid.shape() == f2.grid.shape());
  for (int i = 0; i < f1.grid.numel(); ++i) CHECK(f1.grid.at(i) == f2.grid.at(i));
}

TEST_CASE("blank crop with zero conv weights gives zero features") {
  std::mt19937_64 rng(6);
  ReaderParams params = make_reader(tiny_config(), small_vocab().size(), rng);
  for (Tensor* t : {&params.conv1_w, &params.conv1_b, &params.conv2_w, &params.conv2_b}) {
    for (auto& v : t->values()) v = 0.0;
  }
  auto sample = page_with("A", 10, 10);
  docdata::BoundingBox blank{300, 60, 340, 90};
  auto feature = extract_instance_features(sample, blank, params);
  for (double v : feature.grid.values()) CHECK(v == 0.0);
}

TEST_CASE("box outside the page is a contract error") {
  std::mt19937_64 rng(6);
  ReaderParams params = make_reader(tiny_config(), small_vocab().size(), rng);
  auto sample = page_with("A", 10, 10);
  CHECK_THROWS_AS(extract_instance_features(sample, {390, 10, 450, 40}, params),
                  contract_error);
}

TEST_CASE("crop_and_resize matches the independent bilinear oracle") {
  auto sample = page_with("A7B", 14, 12);
  const auto box = sample.instances[0].box;
  const int bh = box.height(), bw = box.width();
  std::vector<double> crop(static_cast<size_t>(bh) * bw);
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x)
      crop[static_cast<size_t>(y) * bw + x] =
          sample.raster[static_cast<size_t>(box.y0 + y) * sample.page_width + box.x0 + x];

  for (int cols : {9, 17, 33}) {
    Tensor resized = crop_and_resize(sample, box, 8, cols);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < cols; ++c) {
        const double want =
            bilinear_at(crop, bh, bw, (r + 0.5) * bh / 8.0 - 0.5, (c + 0.5) * bw / cols - 0.5);
        CHECK(resized.at(r * cols + c) == doctest::Approx(want).epsilon(1e-12));
      }
  }

  // Doubling the box width doubles the source stride per output column.
  const int cols = feature_cols_for_box(box, tiny_config());
  Tensor narrow = crop_and_resize(sample, box, 8, cols);
  CHECK(narrow.dim(1) == cols);
  docdata::BoundingBox wide = {box.x0, box.y0, box.x0 + 2 * bw, box.y1};
  docdata::DocumentSample padded = sample;
  CHECK(feature_cols_for_box(wide, tiny_config()) ==
        std::min(2 * cols, tiny_config().max_feature_cols));
  (void)padded;
}

TEST_CASE("encoder preserves length and maps zero to zero") {
  std::mt19937_64 rng(7);
  ReaderConfig config = tiny_config();
  ReaderParams params = make_reader(config, small_vocab().size(), rng);

  InstanceFeature one{Tensor::zeros({8, 1, config.conv_channels})};
  CHECK(encode_sequence(one, params).shape() ==
        std::vector<int>{1, config.encoder_hidden});

  ReaderParams zero_params = params;
  for (Tensor* t : {&zero_params.encoder.wx, &zero_params.encoder.wh, &zero_params.encoder.b,
                    &zero_params.encoder_reverse.wx, &zero_params.encoder_reverse.wh,
                    &zero_params.encoder_reverse.b}) {
    for (auto& v : t->values()) v = 0.0;
  }
  InstanceFeature feat{Tensor::zeros({8, 5, config.conv_channels})};
  Tensor encoded = encode_sequence(feat, zero_params);
  for (double v : encoded.values()) CHECK(v == 0.0);
}

TEST_CASE("encoder gradient matches finite differences") {
  std::mt19937_64 rng(8);
  ReaderConfig config = tiny_config();
  ReaderParams params = make_reader(config, small_vocab().size(), rng);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  InstanceFeature feat{Tensor::zeros({8, 3, config.conv_channels})};
  for (auto& v : feat.grid.values()) v = dist(rng);

  Tensor loss = mean_all(encode_sequence(feat, params));
  backward(loss);
  for (Tensor* param : {&params.encoder.wx, &params.encoder.wh, &params.encoder.b,
                        &params.encoder_reverse.wx, &params.encoder_reverse.wh,
                        &params.encoder_reverse.b}) {
    auto f = [&](const Tensor& probe) {
      std::vector<double> saved = param->values();
      param->values() = probe.values();
      const double out = mean_all(encode_sequence(feat, params)).item();
      param->values() = saved;
      return out;
    };
    Tensor fd = finite_difference_gradient(f, *param, 1e-3);
    for (int i = 0; i < param->numel(); ++i) {
      const double got = param->grad()[static_cast<size_t>(i)];
      const double want = fd.at(i);
      CHECK(std::abs(got - want) <= 1e-4 * std::max({1.0, std::abs(got), std::abs(want)}));
    }
  }
}

TEST_CASE("attention step on a single encoder column") {
  std::mt19937_64 rng(9);
  ReaderConfig config = tiny_config();
  ReaderParams params = make_reader(config, small_vocab().size(), rng);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor encoded = Tensor::zeros({1, config.encoder_hidden});
  for (auto& v : encoded.values()) v = dist(rng);

  DecoderState state;
  state.lstm = docie::nn::lstm_zero_state(config.decoder_hidden);
  DecodeStep step = attention_decode_step(encoded, state, params);
  CHECK(step.alpha.numel() == 1);
  CHECK(step.alpha.at(0) == 1.0);
  for (int i = 0; i < config.encoder_hidden; ++i)
    CHECK(step.glimpse.at(i) == doctest::Approx(encoded.at(i)).epsilon(1e-12));
  CHECK(step.char_logits.dim(1) == small_vocab().size());
}

TEST_CASE("uniform attention when encoder projection is zero") {
  std::mt19937_64 rng(10);
  ReaderConfig config = tiny_config();
  ReaderParams params = make_reader(config, small_vocab().size(), rng);
  for (auto& v : params.att_enc_w.values()) v = 0.0;
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor encoded = Tensor::zeros({5, config.encoder_hidden});
  for (auto& v : encoded.values()) v = dist(rng);

  DecoderState state;
  state.lstm = docie::nn::lstm_zero_state(config.decoder_hidden);
  DecodeStep step = attention_decode_step(encoded, state, params);
  double sum = 0.0;
  for (int j = 0; j < 5; ++j) {
    CHECK(step.alpha.at(j) == doctest::Approx(0.2).epsilon(1e-9));
    sum += step.alpha.at(j);
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("glimpse equals the alpha-weighted sum oracle") {
  std::mt19937_64 rng(11);
  ReaderConfig config = tiny_config();
  ReaderParams params = make_reader(config, small_vocab().size(), rng);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor encoded = Tensor::zeros({4, config.encoder_hidden});
  for (auto& v : encoded.values()) v = dist(rng);

  DecoderState state;
  state.lstm = docie::nn::lstm_zero_state(config.decoder_hidden);
  for (auto& v : state.lstm.h.values()) v = dist(rng);
  DecodeStep step = attention_decode_step(encoded, state, params);

  double sum = 0.0;
  for (int j = 0; j < 4; ++j) {
    CHECK(step.alpha.at(j) >= 0.0);
    sum += step.alpha.at(j);
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);
  for (int i = 0; i < config.encoder_hidden; ++i) {
    double want = 0.0;
    for (int j = 0; j < 4; ++j)
      want += step.alpha.at(j) * encoded.at(j * config.encoder_hidden + i);
    CHECK(std::abs(step.glimpse.at(i) - want) < 1e-12);
  }
}

TEST_CASE("teacher forcing emits length plus one steps") {
  std::mt19937_64 rng(12);
  ReaderConfig config = tiny_config();
  auto vocab = small_vocab();
  ReaderParams params = make_reader(config, vocab.size(), rng);
  auto sample = page_with("AB", 10, 10);
  auto feature = extract_instance_features(sample, sample.instances[0].box, params);

  Recognition rec = recognize(feature, params, vocab, RecognitionMode::teacher_forced, "AB");
  CHECK(rec.textual.shape() == std::vector<int>{3, config.decoder_hidden});
  CHECK(rec.logits.dim(0) == 3);

  for (const std::string gt : {"A", "AB0", "AB:90"}) {
    Recognition r = recognize(feature, params, vocab, RecognitionMode::teacher_forced, gt);
    CHECK(r.textual.dim(0) == static_cast<int>(gt.size()) + 1);
  }
}

TEST_CASE("free running with rigged EOS logits stops immediately") {
  std::mt19937_64 rng(13);
  ReaderConfig config = tiny_config();
  auto vocab = small_vocab();
  ReaderParams params = make_reader(config, vocab.size(), rng);
  for (auto& v : params.out_w.values()) v = 0.0;
  for (auto& v : params.out_b.values()) v = 0.0;
  params.out_b.values()[docdata::Vocabulary::kEos] = 20.0;

  auto sample = page_with("AB", 10, 10);
  auto feature = extract_instance_features(sample, sample.instances[0].box, params);
  Recognition rec = recognize(feature, params, vocab, RecognitionMode::free_running);
  CHECK(rec.chars.empty());
  CHECK(rec.textual.dim(0) == 1);
}

TEST_CASE("free running respects t_max") {
  std::mt19937_64 rng(14);
  ReaderConfig config = tiny_config();
  config.t_max = 7;
  auto vocab = small_vocab();
  ReaderParams params = make_reader(config, vocab.size(), rng);
  for (auto& v : params.out_w.values()) v = 0.0;
  for (auto& v : params.out_b.values()) v = 0.0;
  params.out_b.values()[6] = 20.0;  // always emit the same character, never EOS

  auto sample = page_with("AB", 10, 10);
  auto feature = extract_instance_features(sample, sample.instances[0].box, params);
  Recognition rec = recognize(feature, params, vocab, RecognitionMode::free_running);
  CHECK(rec.textual.dim(0) == 7);
  CHECK(rec.chars.size() == 7);
}

TEST_CASE("recognition loss of uniform logits is log vocab size") {
  auto vocab = small_vocab();
  const int v = vocab.size();
  Tensor logits = Tensor::zeros({3, v});
  Tensor loss = recognition_loss(logits, "AB", vocab);
  CHECK(loss.item() == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
}

TEST_CASE("recognition loss saturates with a +20 margin") {
  auto vocab = small_vocab();
  const int v = vocab.size();
  std::vector<int> targets = vocab.encode("AB");
  targets.push_back(docdata::Vocabulary::kEos);
  Tensor logits = Tensor::zeros({3, v});
  for (int t = 0; t < 3; ++t)
    logits.values()[static_cast<size_t>(t) * v + targets[static_cast<size_t>(t)]] = 20.0;
  CHECK(recognition_loss(logits, "AB", vocab).item() < 1e-6);
}

TEST_CASE("recognition loss matches an independent cross-entropy oracle") {
  std::mt19937_64 rng(15);
  auto vocab = small_vocab();
  const int v = vocab.size();
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Tensor logits = Tensor::zeros({4, v});
  for (auto& val : logits.values()) val = dist(rng);
  std::vector<int> targets = vocab.encode("A7:");
  targets.push_back(docdata::Vocabulary::kEos);

  double oracle = 0.0;
  for (int t = 0; t < 4; ++t) {
    double mx = -1e300, sum = 0.0;
    for (int j = 0; j < v; ++j) mx = std::max(mx, logits.at(t * v + j));
    for (int j = 0; j < v; ++j) sum += std::exp(logits.at(t * v + j) - mx);
    oracle -= logits.at(t * v + targets[static_cast<size_t>(t)]) - mx - std::log(sum);
  }
  oracle /= 4.0;
  CHECK(std::abs(recognition_loss(logits, "A7:", vocab).item() - oracle) < 1e-10);
}

TEST_CASE("gt characters outside the vocabulary encode as UNK") {
  auto vocab = small_vocab();
  Tensor logits = Tensor::zeros({2, vocab.size()});
  CHECK_NOTHROW(recognition_loss(logits, "z", vocab));
}

TEST_CASE("gradient flows from recognition loss into the conv weights") {
  std::mt19937_64 rng(16);
  ReaderConfig config = tiny_config();
  auto vocab = small_vocab();
  ReaderParams params = make_reader(config, vocab.size(), rng);
  auto sample = page_with("AB1", 10, 10);
  auto feature = extract_instance_features(sample, sample.instances[0].box, params);
  Recognition rec = recognize(feature, params, vocab, RecognitionMode::teacher_forced, "AB1");
  params.conv1_w.zero_grad();
  backward(recognition_loss(rec.logits, "AB1", vocab));
  double norm = 0.0;
  for (double g : params.conv1_w.grad()) norm += g * g;
  CHECK(norm > 0.0);
}
