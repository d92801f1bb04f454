#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "docie/cli.hpp"
#include "docie/context.hpp"
#include "docie/docdata.hpp"
#include "docie/extractor.hpp"
#include "docie/metrics.hpp"
#include "docie/numkit.hpp"
#include "docie/pipeline.hpp"

namespace py = pybind11;

namespace {

using docie::numkit::Tensor;

Tensor tensor_from_rows(const std::vector<std::vector<double>>& rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(r) * c);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      throw std::invalid_argument("rows must have equal length");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor::from_values({r, c}, std::move(flat));
}

docie::docdata::BoundingBox box_from_tuple(const std::tuple<int, int, int, int>& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "document key-information extraction core";

  m.def("iou",
        [](const std::tuple<int, int, int, int>& a, const std::tuple<int, int, int, int>& b) {
          return docie::metrics::iou(box_from_tuple(a), box_from_tuple(b));
        },
        py::arg("box_a"), py::arg("box_b"));

  m.def("softmax", [](const std::vector<double>& logits) {
    Tensor x = Tensor::from_values({static_cast<int>(logits.size())}, logits);
    return docie::numkit::softmax_rowwise(x).values();
  });

  m.def("viterbi",
        [](const std::vector<std::vector<double>>& emissions,
           const std::vector<std::vector<double>>& transitions) {
          return docie::extractor::viterbi(tensor_from_rows(emissions),
                                           tensor_from_rows(transitions));
        },
        py::arg("emissions"), py::arg("transitions"));

  m.def("crf_log_partition",
        [](const std::vector<std::vector<double>>& emissions,
           const std::vector<std::vector<double>>& transitions) {
          return docie::extractor::crf_log_partition(tensor_from_rows(emissions),
                                                     tensor_from_rows(transitions))
              .item();
        });

  m.def("entities_from_tags",
        [](const std::string& text, const std::vector<std::string>& tags) {
          std::vector<std::pair<std::string, std::string>> out;
          for (const auto& e : docie::docdata::entities_from_tags(text, tags))
            out.emplace_back(e.cls, e.value);
          return out;
        });

  m.def("relative_bucket", &docie::context::relative_bucket, py::arg("delta"),
        py::arg("half_buckets") = 32, py::arg("clamp_range") = 1000);

  m.def("generate",
        [](const std::string& category, int count, std::uint64_t seed,
           const std::string& out_path) {
          auto samples = docie::docdata::synthesize_documents(category, count, seed);
          docie::docdata::save_annotations(out_path, samples);
          return static_cast<int>(samples.size());
        },
        py::arg("category"), py::arg("count"), py::arg("seed"), py::arg("out_path"));

  m.def("train",
        [](const std::string& config_json, const std::string& out_dir) {
          docie::cli::RunConfig config = docie::cli::parse_config_json(config_json);
          docie::cli::TrainOutputs outputs = docie::cli::run_training(config, out_dir);
          py::dict result;
          result["checkpoint"] = outputs.checkpoint_path;
          result["log"] = outputs.log_path;
          result["aborted"] = outputs.aborted;
          return result;
        },
        py::arg("config_json"), py::arg("out_dir"));

  m.def("predict",
        [](const std::string& checkpoint, const std::string& data,
           const std::string& out_path) {
          auto docs = docie::cli::run_prediction(checkpoint, data);
          std::ofstream out(out_path);
          out << docie::pipeline::predictions_to_json(docs);
          return static_cast<int>(docs.size());
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("out_path"));

  m.def("evaluate_json",
        [](const std::string& gold_path, const std::string& pred_path) {
          auto golds = docie::docdata::load_annotations(gold_path);
          auto preds = docie::pipeline::load_predictions(pred_path);
          return docie::metrics::render_json(docie::pipeline::evaluate(golds, preds));
        },
        py::arg("gold_path"), py::arg("pred_path"));

  m.def("run_cli", [](const std::vector<std::string>& args) { return docie::cli::run(args); });
}
