#pragma once

#include <string>
#include <utility>
#include <vector>

#include "docie/docdata.hpp"
#include "docie/nn.hpp"
#include "docie/numkit.hpp"

namespace docie::extractor {

using numkit::Tensor;

// IOB tag space over E entity classes: O at 0, then B-k/I-k pairs.
// Start/end tags live at omega() and omega()+1 and are never emitted.
class TagSpace {
 public:
  TagSpace() = default;
  explicit TagSpace(std::vector<std::string> classes);

  int num_classes() const { return static_cast<int>(classes_.size()); }
  int omega() const { return 2 * num_classes() + 1; }
  int start_tag() const { return omega(); }
  int end_tag() const { return omega() + 1; }
  const std::vector<std::string>& classes() const { return classes_; }

  int tag_index(const std::string& tag) const;
  std::string tag_name(int index) const;
  std::vector<int> encode(const std::vector<std::string>& tags) const;
  std::vector<std::string> decode(const std::vector<int>& indices) const;

 private:
  std::vector<std::string> classes_;
};

struct CrfParams {
  Tensor emission_w;  // (2*d_lstm, omega)
  Tensor emission_b;  // (omega)
  Tensor transitions;  // raw (omega+2, omega+2); see effective_transitions()

  // Raw transitions with entries into start and out of end pinned at -10000.
  // The mask multiplies raw values by zero there, so those entries never
  // receive gradient and the pin survives optimization.
  Tensor effective_transitions() const;
};

struct ExtractorParams {
  nn::LstmParams forward_lstm;
  nn::LstmParams backward_lstm;
  CrfParams crf;
};

ExtractorParams make_extractor(int input_width, int lstm_width, int omega,
                               std::mt19937_64& rng);

// Forward and backward recurrent passes concatenated per step: (T, 2*d_lstm).
Tensor bilstm_encode(const Tensor& u, const ExtractorParams& params);

// Emission scores H': (T, omega).
Tensor emission_scores(const Tensor& bilstm_out, const CrfParams& params);

// Path score including A[start, y_1] and A[y_T, end]. `transitions` is the
// effective (omega+2)^2 matrix; tags are in [0, omega).
Tensor crf_score(const Tensor& emissions, const std::vector<int>& tags,
                 const Tensor& transitions);

// Forward algorithm in log space over all omega^T sequences.
Tensor crf_log_partition(const Tensor& emissions, const Tensor& transitions);

// Negative log-likelihood, always >= 0.
Tensor crf_nll(const Tensor& emissions, const std::vector<int>& tags,
               const Tensor& transitions);

// Max-score decoding; ties resolved to the lexicographically smallest tag
// sequence. Returns (tags, score).
std::pair<std::vector<int>, double> viterbi(const Tensor& emissions,
                                            const Tensor& transitions);

// Same run semantics as docdata::gold_entities (shared implementation).
std::vector<docdata::Entity> extract_entities(const std::string& text,
                                              const std::vector<int>& tag_seq,
                                              const TagSpace& tag_space);

}  // namespace docie::extractor
