#include "docie/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

namespace docie::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

docdata::Vocabulary vocabulary_from_charset(const std::string& charset) {
  docdata::Vocabulary vocab;
  for (char c : charset) vocab.add_char(c);
  return vocab;
}

namespace {

template <typename T>
T get_or(const json& js, const std::string& key, T fallback) {
  if (!js.is_object() || !js.contains(key)) return fallback;
  return js.at(key).get<T>();
}

RunConfig config_from_json(const json& root) {
  RunConfig config;
  const json data = root.value("data", json::object());
  config.train_data = get_or<std::string>(data, "train", "");
  config.eval_data = get_or<std::string>(data, "eval", "");
  config.category = get_or<std::string>(data, "category", "I");
  config.entity_classes =
      get_or<std::vector<std::string>>(data, "entity_classes", {});
  if (config.entity_classes.empty()) {
    config.entity_classes = docdata::category_entity_classes(config.category);
  }

  const json model = root.value("model", json::object());
  config.model.init_seed = get_or<std::uint64_t>(model, "init_seed", 1);
  config.model.prior_model = get_or<std::string>(model, "prior_model", "toy");
  config.model.prior_width = get_or<int>(model, "prior_width", 32);
  config.model.lstm_width = get_or<int>(model, "lstm_width", 64);
  const json reader = model.value("reader", json::object());
  config.model.reader.conv_channels = get_or<int>(reader, "conv_channels", 8);
  config.model.reader.encoder_hidden = get_or<int>(reader, "encoder_hidden", 32);
  config.model.reader.decoder_hidden = get_or<int>(reader, "decoder_hidden", 64);
  config.model.reader.attention_width = get_or<int>(reader, "attention_width", 32);
  config.model.reader.char_embed_width = get_or<int>(reader, "char_embed_width", 16);
  config.model.reader.t_max = get_or<int>(reader, "t_max", 64);

  const json context = root.value("context", json::object());
  config.model.context.layers = get_or<int>(context, "layers", 2);
  config.model.context.heads = get_or<int>(context, "heads", 2);
  config.model.context.d_model = get_or<int>(context, "d_model", 64);
  config.model.context.use_visual = get_or<bool>(context, "use_visual", true);
  config.model.context.use_layout = get_or<bool>(context, "use_layout", true);
  config.model.context.use_textual = get_or<bool>(context, "use_textual", true);
  config.model.fusion = get_or<std::string>(context, "fusion", "gating");

  const json train = root.value("train", json::object());
  config.train.lambda_recog = get_or<double>(train, "lambda_recog", 1.0);
  config.train.lambda_info = get_or<double>(train, "lambda_info", 1.0);
  config.train.lr = get_or<double>(train, "lr", 1e-4);
  config.train.decay_epochs = get_or<std::vector<int>>(train, "decay_epochs", {5, 7, 8});
  config.train.batch_size = get_or<int>(train, "batch_size", 4);
  config.train.epochs = get_or<int>(train, "epochs", 10);
  config.train.seed = get_or<std::uint64_t>(train, "seed", 1);
  config.train.mode = get_or<std::string>(train, "mode", "e2e");
  config.train.aux_weight = get_or<double>(train, "aux_weight", 0.1);
  config.train.column_aux_weight = get_or<double>(train, "column_aux_weight", 1.0);
  config.train.clip_norm = get_or<double>(train, "clip_norm", 5.0);
  config.train.weight_decay = get_or<double>(train, "weight_decay", 0.01);
  config.train.reader_lr_scale = get_or<double>(train, "reader_lr_scale", 1.0);
  config.train.extraction_lr_scale = get_or<double>(train, "extraction_lr_scale", 1.0);
  config.train.eval_every = get_or<int>(train, "eval_every", 1);
  return config;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw docdata::parse_error("config: " + path + ": parse error at byte " +
                               std::to_string(e.byte) + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

std::string meta_path_for(const std::string& checkpoint_path) {
  return checkpoint_path + ".meta.json";
}

pipeline::Model model_from_meta(const json& meta) {
  json wrapped;
  wrapped["model"] = meta.value("model", json::object());
  wrapped["context"] = meta.value("context", json::object());
  RunConfig config = config_from_json(wrapped);
  docdata::Vocabulary vocab =
      vocabulary_from_charset(meta.at("charset").get<std::string>());
  extractor::TagSpace tags(meta.at("entity_classes").get<std::vector<std::string>>());
  return pipeline::build_model(config.model, vocab, tags);
}

json meta_for_model(const RunConfig& config, const pipeline::Model& model) {
  json meta;
  meta["charset"] = model.vocab.charset();
  meta["entity_classes"] = model.tag_space.classes();
  json jm;
  jm["init_seed"] = config.model.init_seed;
  jm["prior_model"] = config.model.prior_model;
  jm["prior_width"] = config.model.prior_width;
  jm["lstm_width"] = config.model.lstm_width;
  json jr;
  jr["conv_channels"] = config.model.reader.conv_channels;
  jr["encoder_hidden"] = config.model.reader.encoder_hidden;
  jr["decoder_hidden"] = config.model.reader.decoder_hidden;
  jr["attention_width"] = config.model.reader.attention_width;
  jr["char_embed_width"] = config.model.reader.char_embed_width;
  jr["t_max"] = config.model.reader.t_max;
  jm["reader"] = jr;
  meta["model"] = jm;
  json jc;
  jc["layers"] = config.model.context.layers;
  jc["heads"] = config.model.context.heads;
  jc["d_model"] = config.model.context.d_model;
  jc["use_visual"] = config.model.context.use_visual;
  jc["use_layout"] = config.model.context.use_layout;
  jc["use_textual"] = config.model.context.use_textual;
  jc["fusion"] = config.model.fusion;
  meta["context"] = jc;
  return meta;
}

}  // namespace

RunConfig parse_config_file(const std::string& path) {
  return config_from_json(load_json_file(path));
}

RunConfig parse_config_json(const std::string& text) {
  return config_from_json(json::parse(text));
}

TrainOutputs run_training(const RunConfig& config, const std::string& out_dir) {
  if (config.train_data.empty()) {
    throw docdata::usage_error("config: data.train is required for training");
  }
  auto train_set = docdata::load_annotations(config.train_data);
  std::vector<docdata::DocumentSample> eval_set;
  if (!config.eval_data.empty()) eval_set = docdata::load_annotations(config.eval_data);

  docdata::Vocabulary vocab = docdata::build_vocabulary(train_set);
  extractor::TagSpace tags(config.entity_classes);
  pipeline::Model model = pipeline::build_model(config.model, vocab, tags);

  trainkit::TrainResult result = trainkit::train(model, train_set, eval_set, config.train);

  TrainOutputs outputs;
  outputs.aborted = result.aborted;
  outputs.checkpoint_path = (fs::path(out_dir) / "checkpoints" / "model.trk").string();
  outputs.meta_path = meta_path_for(outputs.checkpoint_path);
  outputs.log_path = (fs::path(out_dir) / "logs" / "train.jsonl").string();
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "logs");
  checkpoint::save(outputs.checkpoint_path, model.parameters());
  write_text(outputs.meta_path, meta_for_model(config, model).dump(2) + "\n");
  std::string log_text;
  for (const auto& entry : result.log) log_text += trainkit::epoch_log_to_json(entry) + "\n";
  write_text(outputs.log_path, log_text);
  return outputs;
}

std::vector<std::vector<pipeline::InstancePrediction>> run_prediction(
    const std::string& checkpoint_path, const std::string& data_path) {
  json meta = load_json_file(meta_path_for(checkpoint_path));
  pipeline::Model model = model_from_meta(meta);
  checkpoint::ParamMap params = model.parameters();
  checkpoint::restore_into(checkpoint::load(checkpoint_path), params);
  auto samples = docdata::load_annotations(data_path);
  std::vector<std::vector<pipeline::InstancePrediction>> docs;
  docs.reserve(samples.size());
  for (const auto& sample : samples) docs.push_back(pipeline::predict_document(model, sample));
  return docs;
}

namespace {

int command_gen_data(const std::string& category, int count, std::uint64_t seed,
                     const std::string& out_dir, const std::string& name) {
  auto samples = docdata::synthesize_documents(category, count, seed);
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / (name + ".json")).string();
  docdata::save_annotations(path, samples);
  std::cout << "wrote " << samples.size() << " samples to " << path << "\n";
  return 0;
}

int command_train(const std::string& config_path, const std::string& out_dir,
                  std::int64_t seed_override) {
  RunConfig config = parse_config_file(config_path);
  if (seed_override >= 0) config.train.seed = static_cast<std::uint64_t>(seed_override);
  TrainOutputs outputs = run_training(config, out_dir);
  std::cout << "checkpoint " << outputs.checkpoint_path << "\nlog " << outputs.log_path
            << "\n";
  if (outputs.aborted) {
    std::cerr << "training aborted: loss diverged; last checkpoint retained\n";
    return 3;
  }
  return 0;
}

int command_predict(const std::string& checkpoint_path, const std::string& data_path,
                    const std::string& out_dir) {
  auto docs = run_prediction(checkpoint_path, data_path);
  const std::string path = (fs::path(out_dir) / "predictions" / "predictions.json").string();
  write_text(path, pipeline::predictions_to_json(docs));
  std::cout << "wrote " << path << "\n";
  return 0;
}

int command_eval(const std::string& gold_path, const std::string& pred_path,
                 const std::string& out_dir) {
  auto golds = docdata::load_annotations(gold_path);
  auto preds = pipeline::load_predictions(pred_path);
  metrics::Report report = pipeline::evaluate(golds, preds);
  const std::string json_path = (fs::path(out_dir) / "reports" / "report.json").string();
  const std::string text_path = (fs::path(out_dir) / "reports" / "report.txt").string();
  write_text(json_path, metrics::render_json(report));
  write_text(text_path, metrics::render_table(report));
  std::cout << metrics::render_table(report);
  return 0;
}

json apply_overrides(json base, const json& overrides) {
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    std::string pointer = "/" + it.key();
    for (auto& c : pointer) {
      if (c == '.') c = '/';
    }
    base[json::json_pointer(pointer)] = it.value();
  }
  return base;
}

int command_ablate(const std::string& grid_path, const std::string& out_dir) {
  json grid = load_json_file(grid_path);
  const json base = grid.at("base");
  json combined = json::array();
  std::string table = "cell                      ePRE    eREC    eF1\n";
  for (const auto& cell : grid.at("cells")) {
    const std::string name = cell.at("name").get<std::string>();
    json cell_config = apply_overrides(base, cell.value("overrides", json::object()));
    RunConfig config = config_from_json(cell_config);
    const std::string cell_dir = (fs::path(out_dir) / "cells" / name).string();
    TrainOutputs outputs = run_training(config, cell_dir);
    if (outputs.aborted) return 3;
    const std::string eval_data =
        config.eval_data.empty() ? config.train_data : config.eval_data;
    auto docs = run_prediction(outputs.checkpoint_path, eval_data);
    write_text((fs::path(cell_dir) / "predictions" / "predictions.json").string(),
               pipeline::predictions_to_json(docs));
    metrics::Report report =
        pipeline::evaluate(docdata::load_annotations(eval_data), docs);
    write_text((fs::path(cell_dir) / "reports" / "report.json").string(),
               metrics::render_json(report));
    write_text((fs::path(cell_dir) / "reports" / "report.txt").string(),
               metrics::render_table(report));
    json row;
    row["name"] = name;
    row["report"] = json::parse(metrics::render_json(report));
    combined.push_back(row);
    char line[160];
    std::snprintf(line, sizeof(line), "%-25s %-7.4f %-7.4f %-7.4f\n", name.c_str(),
                  report.entity.precision, report.entity.recall, report.entity.f1);
    table += line;
  }
  json summary;
  summary["cells"] = combined;
  write_text((fs::path(out_dir) / "reports" / "ablation.json").string(),
             summary.dump(2) + "\n");
  write_text((fs::path(out_dir) / "reports" / "ablation.txt").string(), table);
  std::cout << table;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"end-to-end key information extraction on synthetic documents"};
  app.require_subcommand(1);

  std::string category = "I", out_dir = "out", name = "train";
  int count = 10;
  std::uint64_t seed = 1;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic document split");
  gen->add_option("--category", category, "I, II, III or IV");
  gen->add_option("--count", count, "number of documents");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--name", name, "split name (file stem)");

  std::string config_path, checkpoint_path, data_path, gold_path, pred_path, grid_path;
  std::int64_t seed_override = -1;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed_override, "override train.seed");

  auto* predict = app.add_subcommand("predict", "run inference with a checkpoint");
  predict->add_option("--checkpoint", checkpoint_path, "TRK1 checkpoint")->required();
  predict->add_option("--data", data_path, "annotation JSON to read boxes from")->required();
  predict->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "score predictions against gold annotations");
  eval->add_option("--gold", gold_path, "gold annotation JSON")->required();
  eval->add_option("--pred", pred_path, "prediction JSON")->required();
  eval->add_option("--out", out_dir, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run a grid of configs");
  ablate->add_option("--config", grid_path, "grid JSON with base and cells")->required();
  ablate->add_option("--out", out_dir, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    if (e.get_exit_code() != 0) std::cerr << e.what() << "\n";
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return command_gen_data(category, count, seed, out_dir, name);
    if (train->parsed()) return command_train(config_path, out_dir, seed_override);
    if (predict->parsed()) return command_predict(checkpoint_path, data_path, out_dir);
    if (eval->parsed()) return command_eval(gold_path, pred_path, out_dir);
    if (ablate->parsed()) return command_ablate(grid_path, out_dir);
  } catch (const trainkit::train_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace docie::cli
