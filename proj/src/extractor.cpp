#include "docie/extractor.hpp"

#include <algorithm>
#include <cmath>

namespace docie::extractor {

using namespace numkit;

TagSpace::TagSpace(std::vector<std::string> classes) : classes_(std::move(classes)) {}

int TagSpace::tag_index(const std::string& tag) const {
  const docdata::Tag parsed = docdata::parse_tag(tag);
  if (parsed.kind == 'O') return 0;
  for (size_t k = 0; k < classes_.size(); ++k) {
    if (classes_[k] == parsed.cls) {
      return 1 + 2 * static_cast<int>(k) + (parsed.kind == 'I' ? 1 : 0);
    }
  }
  throw docdata::validation_error("unknown entity class \"" + parsed.cls + "\"");
}

std::string TagSpace::tag_name(int index) const {
  if (index == 0) return "O";
  if (index < 0 || index >= omega()) {
    throw contract_error("tag index " + std::to_string(index) + " outside [0," +
                         std::to_string(omega()) + ")");
  }
  const int k = (index - 1) / 2;
  return std::string((index - 1) % 2 == 0 ? "B-" : "I-") + classes_[static_cast<size_t>(k)];
}

std::vector<int> TagSpace::encode(const std::vector<std::string>& tags) const {
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(tag_index(t));
  return out;
}

std::vector<std::string> TagSpace::decode(const std::vector<int>& indices) const {
  std::vector<std::string> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(tag_name(i));
  return out;
}

Tensor CrfParams::effective_transitions() const {
  const int n = transitions.dim(0);
  const int start = n - 2, end = n - 1;
  Tensor keep = Tensor::full({n, n}, 1.0);
  Tensor pin = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    keep.values()[static_cast<size_t>(i) * n + start] = 0.0;
    pin.values()[static_cast<size_t>(i) * n + start] = -10000.0;
    keep.values()[static_cast<size_t>(end) * n + i] = 0.0;
    pin.values()[static_cast<size_t>(end) * n + i] = -10000.0;
  }
  return add(mul(transitions, keep), pin);
}

ExtractorParams make_extractor(int input_width, int lstm_width, int omega,
                               std::mt19937_64& rng) {
  ExtractorParams p;
  p.forward_lstm = nn::make_lstm(input_width, lstm_width, rng);
  p.backward_lstm = nn::make_lstm(input_width, lstm_width, rng);
  p.crf.emission_w = Tensor::uniform_init({2 * lstm_width, omega}, 2 * lstm_width, rng);
  p.crf.emission_b = Tensor::zeros({omega}, true);
  p.crf.transitions = Tensor::uniform_init({omega + 2, omega + 2}, omega + 2, rng);
  return p;
}

Tensor bilstm_encode(const Tensor& u, const ExtractorParams& params) {
  Tensor fwd = nn::lstm_run(u, params.forward_lstm);
  Tensor bwd = nn::lstm_run_reverse(u, params.backward_lstm);
  return concat({fwd, bwd}, 1);
}

Tensor emission_scores(const Tensor& bilstm_out, const CrfParams& params) {
  return nn::linear(bilstm_out, params.emission_w, params.emission_b);
}

namespace {

void check_crf_inputs(const Tensor& emissions, const Tensor& transitions) {
  if (emissions.rank() != 2 || emissions.dim(0) < 1) {
    throw shape_error("crf: emissions must be (T,omega), got " +
                      shape_to_string(emissions.shape()));
  }
  const int omega = emissions.dim(1);
  if (transitions.rank() != 2 || transitions.dim(0) != omega + 2 ||
      transitions.dim(1) != omega + 2) {
    throw shape_error("crf: transitions " + shape_to_string(transitions.shape()) +
                      " do not match emissions " + shape_to_string(emissions.shape()));
  }
}

}  // namespace

Tensor crf_score(const Tensor& emissions, const std::vector<int>& tags,
                 const Tensor& transitions) {
  check_crf_inputs(emissions, transitions);
  const int t_len = emissions.dim(0);
  const int omega = emissions.dim(1);
  const int n = omega + 2;
  if (static_cast<int>(tags.size()) != t_len) {
    throw contract_error("crf_score: " + std::to_string(tags.size()) + " tags for " +
                         std::to_string(t_len) + " steps");
  }
  std::vector<int> trans_idx, emit_idx;
  int prev = n - 2;  // start tag
  for (int t = 0; t < t_len; ++t) {
    const int y = tags[static_cast<size_t>(t)];
    if (y < 0 || y >= omega) {
      throw contract_error("crf_score: tag " + std::to_string(y) + " outside [0," +
                           std::to_string(omega) + ")");
    }
    trans_idx.push_back(prev * n + y);
    emit_idx.push_back(t * omega + y);
    prev = y;
  }
  trans_idx.push_back(prev * n + (n - 1));  // into end tag
  return add(sum_all(take(transitions, trans_idx)), sum_all(take(emissions, emit_idx)));
}

Tensor crf_log_partition(const Tensor& emissions, const Tensor& transitions) {
  check_crf_inputs(emissions, transitions);
  const int t_len = emissions.dim(0);
  const int omega = emissions.dim(1);
  const int n = omega + 2;
  Tensor inner = slice_cols(slice_rows(transitions, 0, omega), 0, omega);  // (omega,omega)
  Tensor from_start = slice_cols(slice_rows(transitions, n - 2, n - 1), 0, omega);  // (1,omega)
  Tensor to_end = transpose(slice_cols(slice_rows(transitions, 0, omega), n - 1, n));  // (1,omega)
  Tensor ones_row = Tensor::full({1, omega}, 1.0);

  Tensor alpha = add(from_start, slice_rows(emissions, 0, 1));
  for (int t = 1; t < t_len; ++t) {
    Tensor tiled = matmul(transpose(alpha), ones_row);       // tiled[i][j] = alpha[i]
    Tensor scores = transpose(add(tiled, inner));            // row j holds alpha[i]+A[i][j]
    alpha = add(transpose(log_sum_exp(scores)), slice_rows(emissions, t, t + 1));
  }
  return reshape(log_sum_exp(add(alpha, to_end)), {1});
}

Tensor crf_nll(const Tensor& emissions, const std::vector<int>& tags,
               const Tensor& transitions) {
  return sub(crf_log_partition(emissions, transitions),
             crf_score(emissions, tags, transitions));
}

std::pair<std::vector<int>, double> viterbi(const Tensor& emissions,
                                            const Tensor& transitions) {
  check_crf_inputs(emissions, transitions);
  const int t_len = emissions.dim(0);
  const int omega = emissions.dim(1);
  const int n = omega + 2;
  const auto& h = emissions.values();
  const auto& a = transitions.values();
  auto trans = [&](int i, int j) { return a[static_cast<size_t>(i) * n + j]; };
  auto emit = [&](int t, int j) { return h[static_cast<size_t>(t) * omega + j]; };

  // beta[t][j]: best score of the path suffix starting at step t with tag j,
  // including emission t and the final transition into the end tag.
  std::vector<std::vector<double>> beta(static_cast<size_t>(t_len),
                                        std::vector<double>(static_cast<size_t>(omega)));
  for (int j = 0; j < omega; ++j)
    beta[static_cast<size_t>(t_len - 1)][static_cast<size_t>(j)] =
        emit(t_len - 1, j) + trans(j, n - 1);
  for (int t = t_len - 2; t >= 0; --t) {
    for (int j = 0; j < omega; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < omega; ++k) {
        best = std::max(best, trans(j, k) + beta[static_cast<size_t>(t + 1)][static_cast<size_t>(k)]);
      }
      beta[static_cast<size_t>(t)][static_cast<size_t>(j)] = emit(t, j) + best;
    }
  }

  // Reconstruct front-to-back. Given an optimal prefix, the smallest tag
  // among optimal continuations extends it, so strict `>` (which keeps the
  // first maximum) yields the lexicographically smallest optimal sequence.
  std::vector<int> tags(static_cast<size_t>(t_len));
  double total = -std::numeric_limits<double>::infinity();
  int prev = -1;
  for (int j = 0; j < omega; ++j) {
    const double s = trans(n - 2, j) + beta[0][static_cast<size_t>(j)];
    if (s > total) {
      total = s;
      prev = j;
    }
  }
  tags[0] = prev;
  for (int t = 1; t < t_len; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    int pick = -1;
    for (int j = 0; j < omega; ++j) {
      const double s = trans(prev, j) + beta[static_cast<size_t>(t)][static_cast<size_t>(j)];
      if (s > best) {
        best = s;
        pick = j;
      }
    }
    tags[static_cast<size_t>(t)] = pick;
    prev = pick;
  }
  return {tags, total};
}

std::vector<docdata::Entity> extract_entities(const std::string& text,
                                              const std::vector<int>& tag_seq,
                                              const TagSpace& tag_space) {
  if (text.size() != tag_seq.size()) {
    throw contract_error("extract_entities: " + std::to_string(tag_seq.size()) +
                         " tags for text of length " + std::to_string(text.size()));
  }
  return docdata::entities_from_tags(text, tag_space.decode(tag_seq));
}

}  // namespace docie::extractor
