#include "docie/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <map>

namespace docie::metrics {

MetricTriple triple_from_counts(int tp, int fp, int fn) {
  MetricTriple t;
  t.tp = tp;
  t.fp = fp;
  t.fn = fn;
  t.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  t.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  t.f1 = t.precision + t.recall > 0.0
             ? 2.0 * t.precision * t.recall / (t.precision + t.recall)
             : 0.0;
  return t;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const long long iw = std::max(0, ix1 - ix0), ih = std::max(0, iy1 - iy0);
  const long long inter = iw * ih;
  if (inter == 0) return 0.0;
  const long long area_a = static_cast<long long>(a.width()) * a.height();
  const long long area_b = static_cast<long long>(b.width()) * b.height();
  return static_cast<double>(inter) / static_cast<double>(area_a + area_b - inter);
}

namespace {

struct Candidate {
  double overlap;
  int pred, gold;
};

MatchReport greedy_match(std::vector<Candidate> candidates, int n_pred, int n_gold) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.overlap != b.overlap) return a.overlap > b.overlap;
                     if (a.pred != b.pred) return a.pred < b.pred;
                     return a.gold < b.gold;
                   });
  std::vector<bool> pred_used(static_cast<size_t>(n_pred), false);
  std::vector<bool> gold_used(static_cast<size_t>(n_gold), false);
  MatchReport report;
  for (const auto& c : candidates) {
    if (pred_used[static_cast<size_t>(c.pred)] || gold_used[static_cast<size_t>(c.gold)])
      continue;
    pred_used[static_cast<size_t>(c.pred)] = true;
    gold_used[static_cast<size_t>(c.gold)] = true;
    report.pairs.emplace_back(c.pred, c.gold);
  }
  report.true_positives = static_cast<int>(report.pairs.size());
  report.false_positives = n_pred - report.true_positives;
  report.false_negatives = n_gold - report.true_positives;
  return report;
}

}  // namespace

MatchReport match_boxes(const std::vector<BoundingBox>& preds,
                        const std::vector<BoundingBox>& golds, double threshold) {
  std::vector<Candidate> candidates;
  for (size_t i = 0; i < preds.size(); ++i)
    for (size_t j = 0; j < golds.size(); ++j) {
      const double overlap = iou(preds[i], golds[j]);
      if (overlap > threshold)
        candidates.push_back({overlap, static_cast<int>(i), static_cast<int>(j)});
    }
  return greedy_match(std::move(candidates), static_cast<int>(preds.size()),
                      static_cast<int>(golds.size()));
}

MatchReport match_spotting(const std::vector<SpottingItem>& preds,
                           const std::vector<SpottingItem>& golds, double threshold) {
  std::vector<Candidate> candidates;
  for (size_t i = 0; i < preds.size(); ++i)
    for (size_t j = 0; j < golds.size(); ++j) {
      if (preds[i].text != golds[j].text) continue;  // case-sensitive exact match
      const double overlap = iou(preds[i].box, golds[j].box);
      if (overlap > threshold)
        candidates.push_back({overlap, static_cast<int>(i), static_cast<int>(j)});
    }
  return greedy_match(std::move(candidates), static_cast<int>(preds.size()),
                      static_cast<int>(golds.size()));
}

MetricTriple detection_metrics(const std::vector<std::vector<BoundingBox>>& preds,
                               const std::vector<std::vector<BoundingBox>>& golds,
                               double threshold) {
  int tp = 0, fp = 0, fn = 0;
  const size_t docs = std::max(preds.size(), golds.size());
  static const std::vector<BoundingBox> kEmpty;
  for (size_t d = 0; d < docs; ++d) {
    const auto& p = d < preds.size() ? preds[d] : kEmpty;
    const auto& g = d < golds.size() ? golds[d] : kEmpty;
    const MatchReport r = match_boxes(p, g, threshold);
    tp += r.true_positives;
    fp += r.false_positives;
    fn += r.false_negatives;
  }
  return triple_from_counts(tp, fp, fn);
}

MetricTriple spotting_metrics(const std::vector<std::vector<SpottingItem>>& preds,
                              const std::vector<std::vector<SpottingItem>>& golds,
                              double threshold) {
  int tp = 0, fp = 0, fn = 0;
  const size_t docs = std::max(preds.size(), golds.size());
  static const std::vector<SpottingItem> kEmpty;
  for (size_t d = 0; d < docs; ++d) {
    const auto& p = d < preds.size() ? preds[d] : kEmpty;
    const auto& g = d < golds.size() ? golds[d] : kEmpty;
    const MatchReport r = match_spotting(p, g, threshold);
    tp += r.true_positives;
    fp += r.false_positives;
    fn += r.false_negatives;
  }
  return triple_from_counts(tp, fp, fn);
}

MetricTriple entity_metrics(const std::vector<std::vector<Entity>>& preds,
                            const std::vector<std::vector<Entity>>& golds) {
  int tp = 0, fp = 0, fn = 0;
  const size_t docs = std::max(preds.size(), golds.size());
  static const std::vector<Entity> kEmpty;
  for (size_t d = 0; d < docs; ++d) {
    const auto& p = d < preds.size() ? preds[d] : kEmpty;
    const auto& g = d < golds.size() ? golds[d] : kEmpty;
    std::map<std::pair<std::string, std::string>, int> gold_counts;
    for (const auto& e : g) ++gold_counts[{e.cls, e.value}];
    int doc_tp = 0;
    for (const auto& e : p) {
      auto it = gold_counts.find({e.cls, e.value});
      if (it != gold_counts.end() && it->second > 0) {
        --it->second;
        ++doc_tp;
      }
    }
    tp += doc_tp;
    fp += static_cast<int>(p.size()) - doc_tp;
    fn += static_cast<int>(g.size()) - doc_tp;
  }
  return triple_from_counts(tp, fp, fn);
}

std::optional<double> relative_ie(double entity_f1, double spotting_f1_cared) {
  if (spotting_f1_cared <= 0.0) return std::nullopt;
  return entity_f1 / spotting_f1_cared;
}

std::string render_table(const Report& report) {
  char buf[256];
  std::string out;
  out += "REC_d   PRE_d   F_d-m   REC_r   PRE_r   F_r-m   eREC    ePRE    eF1\n";
  std::snprintf(buf, sizeof(buf),
                "%-7.4f %-7.4f %-7.4f %-7.4f %-7.4f %-7.4f %-7.4f %-7.4f %-7.4f\n",
                report.detection.recall, report.detection.precision, report.detection.f1,
                report.spotting.recall, report.spotting.precision, report.spotting.f1,
                report.entity.recall, report.entity.precision, report.entity.f1);
  out += buf;
  if (report.relative_ie.has_value()) {
    std::snprintf(buf, sizeof(buf), "relative_ie %.4f\n", *report.relative_ie);
    out += buf;
  } else {
    out += "relative_ie n/a\n";
  }
  return out;
}

std::string render_json(const Report& report) {
  nlohmann::ordered_json js;
  auto triple = [](const MetricTriple& t) {
    nlohmann::ordered_json j;
    j["precision"] = t.precision;
    j["recall"] = t.recall;
    j["f1"] = t.f1;
    j["tp"] = t.tp;
    j["fp"] = t.fp;
    j["fn"] = t.fn;
    return j;
  };
  js["detection"] = triple(report.detection);
  js["spotting"] = triple(report.spotting);
  js["entity"] = triple(report.entity);
  if (report.relative_ie.has_value()) {
    js["relative_ie"] = *report.relative_ie;
  } else {
    js["relative_ie"] = nullptr;
  }
  return js.dump(2) + "\n";
}

}  // namespace docie::metrics
