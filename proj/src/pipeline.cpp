#include "docie/pipeline.hpp"

#include <fstream>
#include <json.hpp>

#include "docie/nn.hpp"

namespace docie::pipeline {

using namespace numkit;

Model build_model(const ModelConfig& config, const docdata::Vocabulary& vocab,
                  const extractor::TagSpace& tag_space) {
  Model model;
  model.config = config;
  model.vocab = vocab;
  model.tag_space = tag_space;
  std::mt19937_64 rng(config.init_seed);
  model.reader_params = reader::make_reader(config.reader, vocab.size(), rng);
  model.prior_model = prior::make_prior(config.prior_model, vocab.size(),
                                        config.prior_width, rng);
  model.gate = prior::make_gate(config.prior_width, config.reader.decoder_hidden, rng);
  model.vocab_head = prior::make_vocab_head(config.reader.decoder_hidden, vocab.size(), rng);
  model.column_head = prior::make_vocab_head(config.reader.encoder_hidden, vocab.size(), rng);
  model.context_params = context::make_context(config.context, config.reader.conv_channels,
                                               config.reader.decoder_hidden, rng);
  model.extractor_params = extractor::make_extractor(
      config.reader.decoder_hidden + config.context.d_model, config.lstm_width,
      tag_space.omega(), rng);
  model.fusion = prior::fusion_from_string(config.fusion);
  return model;
}

checkpoint::ParamMap Model::reader_parameters() {
  checkpoint::ParamMap params;
  auto add_lstm = [&](const std::string& prefix, nn::LstmParams& lstm) {
    params.emplace_back(prefix + ".wx", lstm.wx);
    params.emplace_back(prefix + ".wh", lstm.wh);
    params.emplace_back(prefix + ".b", lstm.b);
  };
  params.emplace_back("reader.conv1.w", reader_params.conv1_w);
  params.emplace_back("reader.conv1.b", reader_params.conv1_b);
  params.emplace_back("reader.conv2.w", reader_params.conv2_w);
  params.emplace_back("reader.conv2.b", reader_params.conv2_b);
  add_lstm("reader.encoder", reader_params.encoder);
  add_lstm("reader.encoder_rev", reader_params.encoder_reverse);
  params.emplace_back("reader.char_embed", reader_params.char_embed);
  params.emplace_back("reader.att.state_w", reader_params.att_state_w);
  params.emplace_back("reader.att.enc_w", reader_params.att_enc_w);
  params.emplace_back("reader.att.b", reader_params.att_b);
  params.emplace_back("reader.att.v", reader_params.att_v);
  add_lstm("reader.decoder", reader_params.decoder);
  params.emplace_back("reader.out.w", reader_params.out_w);
  params.emplace_back("reader.out.b", reader_params.out_b);
  params.emplace_back("reader.column_head.w", column_head.w);
  params.emplace_back("reader.column_head.b", column_head.b);
  return params;
}

checkpoint::ParamMap Model::extraction_parameters() {
  checkpoint::ParamMap params;
  auto add_lstm = [&](const std::string& prefix, nn::LstmParams& lstm) {
    params.emplace_back(prefix + ".wx", lstm.wx);
    params.emplace_back(prefix + ".wh", lstm.wh);
    params.emplace_back(prefix + ".b", lstm.b);
  };
  if (prior_model) {
    for (auto& [name, tensor] : prior_model->parameters()) params.emplace_back(name, tensor);
  }
  params.emplace_back("gate.w_g", gate.w_g);
  params.emplace_back("gate.u_g", gate.u_g);
  params.emplace_back("gate.b_g", gate.b_g);
  params.emplace_back("gate.w_r", gate.w_r);
  params.emplace_back("gate.u_r", gate.u_r);
  params.emplace_back("gate.b_r", gate.b_r);
  params.emplace_back("gate.w_o", gate.w_o);
  params.emplace_back("gate.w_cat", gate.w_cat);
  params.emplace_back("vocab_head.w", vocab_head.w);
  params.emplace_back("vocab_head.b", vocab_head.b);
  params.emplace_back("context.coord_embed", context_params.coord_embed);
  params.emplace_back("context.rel_buckets", context_params.rel_buckets);
  params.emplace_back("context.visual.w", context_params.visual_w);
  params.emplace_back("context.visual.b", context_params.visual_b);
  for (size_t k = 0; k < context_params.text_conv_w.size(); ++k) {
    params.emplace_back("context.text_conv" + std::to_string(k) + ".w",
                        context_params.text_conv_w[k]);
    params.emplace_back("context.text_conv" + std::to_string(k) + ".b",
                        context_params.text_conv_b[k]);
  }
  params.emplace_back("context.text_mix.w", context_params.text_mix_w);
  params.emplace_back("context.text_mix.b", context_params.text_mix_b);
  params.emplace_back("context.fuse.gamma", context_params.fuse_gamma);
  params.emplace_back("context.fuse.beta", context_params.fuse_beta);
  for (size_t layer = 0; layer < context_params.layers.size(); ++layer) {
    auto& lp = context_params.layers[layer];
    const std::string prefix = "context.layer" + std::to_string(layer);
    params.emplace_back(prefix + ".ln.gamma", lp.ln_gamma);
    params.emplace_back(prefix + ".ln.beta", lp.ln_beta);
    for (size_t h = 0; h < lp.wq.size(); ++h) {
      params.emplace_back(prefix + ".head" + std::to_string(h) + ".wq", lp.wq[h]);
      params.emplace_back(prefix + ".head" + std::to_string(h) + ".wk", lp.wk[h]);
      params.emplace_back(prefix + ".head" + std::to_string(h) + ".wv", lp.wv[h]);
    }
    params.emplace_back(prefix + ".w_info", lp.w_info);
  }
  add_lstm("extractor.fwd", extractor_params.forward_lstm);
  add_lstm("extractor.bwd", extractor_params.backward_lstm);
  params.emplace_back("extractor.emission.w", extractor_params.crf.emission_w);
  params.emplace_back("extractor.emission.b", extractor_params.crf.emission_b);
  params.emplace_back("extractor.transitions", extractor_params.crf.transitions);
  return params;
}

checkpoint::ParamMap Model::parameters() {
  checkpoint::ParamMap params = reader_parameters();
  checkpoint::ParamMap rest = extraction_parameters();
  params.insert(params.end(), rest.begin(), rest.end());
  return params;
}

void Model::set_reader_trainable(bool trainable) {
  for (auto& [name, tensor] : reader_parameters()) tensor.set_requires_grad(trainable);
}

namespace {

struct InstanceForward {
  reader::Recognition recognition;
  Tensor modulated;                // o over character steps
  reader::InstanceFeature feature;
  Tensor encoded;                  // encoder states over columns
};

// Reader + prior absorption path for one instance. In teacher-forced mode
// the character steps follow the ground truth; free-running follows argmax.
InstanceForward forward_instance(Model& model, const docdata::DocumentSample& sample,
                                 const docdata::TextInstance& instance,
                                 reader::RecognitionMode mode) {
  InstanceForward fwd;
  fwd.feature = reader::extract_instance_features(sample, instance.box, model.reader_params);
  fwd.encoded = reader::encode_sequence(fwd.feature, model.reader_params);
  fwd.recognition = reader::decode_encoded(fwd.encoded, model.reader_params, model.vocab,
                                           mode, instance.text);
  // Character steps exclude the EOS step; a free-running decode cut off at
  // t_max has no EOS step to drop.
  const int total_steps = fwd.recognition.textual.dim(0);
  const bool ended_with_eos = !fwd.recognition.predicted.empty() &&
                              fwd.recognition.predicted.back() == docdata::Vocabulary::kEos;
  const int char_steps = mode == reader::RecognitionMode::teacher_forced || ended_with_eos
                             ? total_steps - 1
                             : total_steps;
  Tensor z_chars;
  if (char_steps >= 1) {
    z_chars = slice_rows(fwd.recognition.textual, 0, char_steps);
  } else {
    // Free-running decode that emitted EOS immediately: keep one neutral
    // step so the instance still participates in the context block.
    z_chars = Tensor::zeros({1, model.config.reader.decoder_hidden});
  }
  if (model.prior_model) {
    const std::vector<int> char_indices = prior::project_to_vocab(z_chars, model.vocab_head);
    Tensor knowledge = model.prior_model->encode(char_indices);
    fwd.modulated = prior::fuse_prior(z_chars, knowledge, model.gate, model.fusion);
  } else {
    fwd.modulated = matmul(z_chars, model.gate.w_o);
  }
  return fwd;
}

// Character targets per encoder column under a uniform-pitch assumption:
// the column center falls into character cell k of the box.
std::vector<int> column_targets(const docdata::TextInstance& instance, int cols,
                                const docdata::Vocabulary& vocab) {
  std::vector<int> targets(static_cast<size_t>(cols), docdata::Vocabulary::kPad);
  const int n = static_cast<int>(instance.text.size());
  const double width = instance.box.width();
  const double pitch = width / n;
  for (int c = 0; c < cols; ++c) {
    const double x = (c + 0.5) * width / cols;
    const int k = static_cast<int>(std::floor(x / pitch));
    if (k >= 0 && k < n) {
      targets[static_cast<size_t>(c)] = vocab.encode_char(instance.text[static_cast<size_t>(k)]);
    }
  }
  return targets;
}

// Column nearest to character cell t (EOS step points at the last cell).
std::vector<int> alignment_targets(const docdata::TextInstance& instance, int steps,
                                   int cols) {
  std::vector<int> targets(static_cast<size_t>(steps), 0);
  const int n = static_cast<int>(instance.text.size());
  for (int t = 0; t < steps; ++t) {
    const int cell = std::min(t, n - 1);
    const double center = (cell + 0.5) / n;
    const int column = static_cast<int>(std::lround(center * cols - 0.5));
    targets[static_cast<size_t>(t)] = std::clamp(column, 0, cols - 1);
  }
  return targets;
}

// Context block over all instances of a document: returns one context row per
// instance, honoring the modality ablation switches.
Tensor document_context(Model& model, const docdata::DocumentSample& sample,
                        const std::vector<InstanceForward>& instances) {
  const auto& cfg = model.config.context;
  const int m = static_cast<int>(instances.size());
  std::vector<Tensor> rows;
  std::vector<std::array<int, 4>> norm_boxes;
  for (int i = 0; i < m; ++i) {
    norm_boxes.push_back(context::normalize_box(sample.instances[static_cast<size_t>(i)].box,
                                                sample.page_width, sample.page_height,
                                                cfg.coord_range));
  }
  for (int i = 0; i < m; ++i) {
    Tensor visual = cfg.use_visual
                        ? context::embed_visual(instances[static_cast<size_t>(i)].feature.grid,
                                                model.context_params)
                        : Tensor::zeros({1, cfg.d_model});
    Tensor textual = cfg.use_textual
                         ? context::embed_textual(instances[static_cast<size_t>(i)].modulated,
                                                  model.context_params)
                         : Tensor::zeros({1, cfg.d_model});
    Tensor position = cfg.use_layout
                          ? context::embed_position(norm_boxes[static_cast<size_t>(i)],
                                                    model.context_params.coord_embed)
                          : Tensor::zeros({1, cfg.d_model});
    rows.push_back(context::fuse_embeddings(visual, textual, position, model.context_params));
  }
  Tensor emb = concat(rows, 0);
  std::optional<Tensor> bias;
  if (cfg.use_layout) {
    bias = context::embed_relative(context::relative_positions(norm_boxes),
                                   model.context_params.rel_buckets, cfg);
  }
  return context::spatial_self_attention(emb, bias, model.context_params);
}

}  // namespace

DocumentLosses training_losses(Model& model, const docdata::DocumentSample& sample,
                               bool with_information) {
  const int m = static_cast<int>(sample.instances.size());
  std::vector<InstanceForward> forwards;
  forwards.reserve(static_cast<size_t>(m));
  std::vector<Tensor> recog_terms, aux_terms, column_terms, align_terms;
  for (const auto& instance : sample.instances) {
    InstanceForward fwd =
        forward_instance(model, sample, instance, reader::RecognitionMode::teacher_forced);
    recog_terms.push_back(
        reader::recognition_loss(fwd.recognition.logits, instance.text, model.vocab));
    std::vector<int> targets = model.vocab.encode(instance.text);
    targets.push_back(docdata::Vocabulary::kEos);
    aux_terms.push_back(nn::cross_entropy_mean(
        prior::vocab_head_logits(fwd.recognition.textual, model.vocab_head), targets));
    column_terms.push_back(nn::cross_entropy_mean(
        prior::vocab_head_logits(fwd.encoded, model.column_head),
        column_targets(instance, fwd.encoded.dim(0), model.vocab)));
    align_terms.push_back(nn::cross_entropy_mean(
        fwd.recognition.att_logits,
        alignment_targets(instance, fwd.recognition.att_logits.dim(0),
                          fwd.encoded.dim(0))));
    forwards.push_back(std::move(fwd));
  }
  DocumentLosses losses;
  losses.recognition = scale(sum_all(concat(recog_terms, 0)), 1.0 / m);
  losses.auxiliary = scale(sum_all(concat(aux_terms, 0)), 1.0 / m);
  losses.column = scale(sum_all(concat(column_terms, 0)), 1.0 / m);
  losses.alignment = scale(sum_all(concat(align_terms, 0)), 1.0 / m);
  if (!with_information) {
    losses.information = Tensor::scalar(0.0);
    return losses;
  }
  Tensor context_rows = document_context(model, sample, forwards);
  Tensor transitions = model.extractor_params.crf.effective_transitions();
  std::vector<Tensor> info_terms;
  for (int i = 0; i < m; ++i) {
    const auto& instance = sample.instances[static_cast<size_t>(i)];
    Tensor u = context::fuse_context(forwards[static_cast<size_t>(i)].modulated,
                                     slice_rows(context_rows, i, i + 1));
    Tensor emissions = extractor::emission_scores(
        extractor::bilstm_encode(u, model.extractor_params), model.extractor_params.crf);
    info_terms.push_back(extractor::crf_nll(
        emissions, model.tag_space.encode(instance.tags), transitions));
  }
  losses.information = scale(sum_all(concat(info_terms, 0)), 1.0 / m);
  return losses;
}

std::vector<InstancePrediction> predict_document(Model& model,
                                                 const docdata::DocumentSample& sample) {
  const int m = static_cast<int>(sample.instances.size());
  std::vector<InstanceForward> forwards;
  forwards.reserve(static_cast<size_t>(m));
  for (const auto& instance : sample.instances) {
    forwards.push_back(
        forward_instance(model, sample, instance, reader::RecognitionMode::free_running));
  }
  Tensor context_rows = document_context(model, sample, forwards);
  Tensor transitions = model.extractor_params.crf.effective_transitions();
  std::vector<InstancePrediction> predictions;
  for (int i = 0; i < m; ++i) {
    InstancePrediction pred;
    pred.box = sample.instances[static_cast<size_t>(i)].box;
    pred.text_pred = forwards[static_cast<size_t>(i)].recognition.chars;
    if (!pred.text_pred.empty()) {
      Tensor u = context::fuse_context(forwards[static_cast<size_t>(i)].modulated,
                                       slice_rows(context_rows, i, i + 1));
      Tensor emissions = extractor::emission_scores(
          extractor::bilstm_encode(u, model.extractor_params), model.extractor_params.crf);
      // The modulated features cover the decoded characters one-to-one.
      auto [tags, score] = extractor::viterbi(emissions, transitions);
      (void)score;
      if (tags.size() == pred.text_pred.size()) {
        pred.tags_pred = model.tag_space.decode(tags);
        pred.entities = extractor::extract_entities(pred.text_pred, tags, model.tag_space);
      } else {
        pred.tags_pred.assign(pred.text_pred.size(), "O");
      }
    }
    predictions.push_back(std::move(pred));
  }
  return predictions;
}

std::string predictions_to_json(const std::vector<std::vector<InstancePrediction>>& docs) {
  nlohmann::ordered_json root;
  root["documents"] = nlohmann::ordered_json::array();
  for (const auto& doc : docs) {
    nlohmann::ordered_json jd;
    jd["instances"] = nlohmann::ordered_json::array();
    for (const auto& pred : doc) {
      nlohmann::ordered_json ji;
      ji["bbox"] = {pred.box.x0, pred.box.y0, pred.box.x1, pred.box.y1};
      ji["text_pred"] = pred.text_pred;
      ji["tags_pred"] = pred.tags_pred;
      ji["entities"] = nlohmann::ordered_json::array();
      for (const auto& e : pred.entities) {
        ji["entities"].push_back({{"class", e.cls}, {"value", e.value}});
      }
      jd["instances"].push_back(std::move(ji));
    }
    root["documents"].push_back(std::move(jd));
  }
  return root.dump(2) + "\n";
}

std::vector<std::vector<InstancePrediction>> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("predictions: cannot open " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw docdata::parse_error("predictions: " + path + ": parse error at byte " +
                               std::to_string(e.byte) + ": " + e.what());
  }
  std::vector<std::vector<InstancePrediction>> docs;
  for (const auto& jd : root.at("documents")) {
    std::vector<InstancePrediction> doc;
    for (const auto& ji : jd.at("instances")) {
      InstancePrediction pred;
      pred.box = {ji.at("bbox").at(0).get<int>(), ji.at("bbox").at(1).get<int>(),
                  ji.at("bbox").at(2).get<int>(), ji.at("bbox").at(3).get<int>()};
      pred.text_pred = ji.at("text_pred").get<std::string>();
      pred.tags_pred = ji.at("tags_pred").get<std::vector<std::string>>();
      for (const auto& je : ji.at("entities")) {
        pred.entities.push_back(
            {je.at("class").get<std::string>(), je.at("value").get<std::string>()});
      }
      doc.push_back(std::move(pred));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

metrics::Report evaluate(const std::vector<docdata::DocumentSample>& golds,
                         const std::vector<std::vector<InstancePrediction>>& preds) {
  if (golds.size() != preds.size()) {
    throw docdata::validation_error("evaluate: " + std::to_string(preds.size()) +
                                    " prediction documents for " +
                                    std::to_string(golds.size()) + " gold documents");
  }
  std::vector<std::vector<docdata::BoundingBox>> gold_boxes(golds.size()),
      pred_boxes(golds.size());
  std::vector<std::vector<metrics::SpottingItem>> gold_spots(golds.size()),
      pred_spots(golds.size());
  std::vector<std::vector<metrics::SpottingItem>> cared_gold_spots(golds.size()),
      cared_pred_spots(golds.size());
  std::vector<std::vector<docdata::Entity>> gold_entities(golds.size()),
      pred_entities(golds.size());
  for (size_t d = 0; d < golds.size(); ++d) {
    std::vector<docdata::BoundingBox> cared_boxes;
    for (const auto& inst : golds[d].instances) {
      gold_boxes[d].push_back(inst.box);
      gold_spots[d].push_back({inst.box, inst.text});
      const bool cared =
          std::any_of(inst.tags.begin(), inst.tags.end(),
                      [](const std::string& t) { return t != "O"; });
      if (cared) {
        cared_gold_spots[d].push_back({inst.box, inst.text});
        cared_boxes.push_back(inst.box);
      }
      auto part = docdata::gold_entities(inst);
      gold_entities[d].insert(gold_entities[d].end(), part.begin(), part.end());
    }
    for (const auto& pred : preds[d]) {
      pred_boxes[d].push_back(pred.box);
      pred_spots[d].push_back({pred.box, pred.text_pred});
      const bool overlaps_cared =
          std::any_of(cared_boxes.begin(), cared_boxes.end(),
                      [&](const docdata::BoundingBox& b) { return metrics::iou(pred.box, b) > 0.5; });
      if (overlaps_cared) cared_pred_spots[d].push_back({pred.box, pred.text_pred});
      pred_entities[d].insert(pred_entities[d].end(), pred.entities.begin(),
                              pred.entities.end());
    }
  }
  metrics::Report report;
  report.detection = metrics::detection_metrics(pred_boxes, gold_boxes);
  report.spotting = metrics::spotting_metrics(pred_spots, gold_spots);
  report.entity = metrics::entity_metrics(pred_entities, gold_entities);
  const metrics::MetricTriple cared =
      metrics::spotting_metrics(cared_pred_spots, cared_gold_spots);
  report.relative_ie = metrics::relative_ie(report.entity.f1, cared.f1);
  return report;
}

}  // namespace docie::pipeline
