#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "docie/docdata.hpp"

namespace docie::metrics {

using docdata::BoundingBox;
using docdata::Entity;

struct MatchReport {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  std::vector<std::pair<int, int>> pairs;  // (pred index, gold index)
};

struct MetricTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

MetricTriple triple_from_counts(int tp, int fp, int fn);

double iou(const BoundingBox& a, const BoundingBox& b);

struct SpottingItem {
  BoundingBox box;
  std::string text;
};

// Greedy one-to-one matching in descending IoU order; a pair is a candidate
// iff IoU > threshold (and, for spotting, transcripts are exactly equal).
MatchReport match_boxes(const std::vector<BoundingBox>& preds,
                        const std::vector<BoundingBox>& golds, double threshold);
MatchReport match_spotting(const std::vector<SpottingItem>& preds,
                           const std::vector<SpottingItem>& golds, double threshold);

// Micro-averaged over the corpus (one inner vector per document).
MetricTriple detection_metrics(const std::vector<std::vector<BoundingBox>>& preds,
                               const std::vector<std::vector<BoundingBox>>& golds,
                               double threshold = 0.5);
MetricTriple spotting_metrics(const std::vector<std::vector<SpottingItem>>& preds,
                              const std::vector<std::vector<SpottingItem>>& golds,
                              double threshold = 0.5);

// Exact (class, value) multiset matching per document, micro-averaged.
MetricTriple entity_metrics(const std::vector<std::vector<Entity>>& preds,
                            const std::vector<std::vector<Entity>>& golds);

// eF1 / F_r-m over cared instances; absent when the denominator is zero.
std::optional<double> relative_ie(double entity_f1, double spotting_f1_cared);

struct Report {
  MetricTriple detection;
  MetricTriple spotting;
  MetricTriple entity;
  std::optional<double> relative_ie;
};

// Aligned plain-text table: REC_d PRE_d F_d-m | REC_r PRE_r F_r-m | eREC ePRE eF1.
std::string render_table(const Report& report);
std::string render_json(const Report& report);

}  // namespace docie::metrics
