#pragma once

#include "docie/numkit.hpp"

namespace docie::nn {

using numkit::Tensor;

// x: (T,in) or (in); w: (in,out); b: (out). Returns x.w + b row-wise.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Repeat a (1,C) row vector R times -> (R,C). Differentiable (matmul with ones).
Tensor tile_rows(const Tensor& row, int times);

// log softmax over the last axis, computed as x - lse(x).
Tensor log_softmax_rowwise(const Tensor& x);

// Mean negative log-likelihood of `targets` under row-wise softmax of logits.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets);

struct LstmParams {
  Tensor wx;  // (in, 4H) gate order: input, forget, output, candidate
  Tensor wh;  // (H, 4H)
  Tensor b;   // (4H)
};

LstmParams make_lstm(int input_width, int hidden_width, std::mt19937_64& rng);

struct LstmState {
  Tensor h;  // (1,H)
  Tensor c;  // (1,H)
};

LstmState lstm_zero_state(int hidden_width);
LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& params);

// Runs the cell over the rows of `inputs` (T,in) -> (T,H).
Tensor lstm_run(const Tensor& inputs, const LstmParams& params);
// Same, over rows in reverse order; output row t corresponds to input row t.
Tensor lstm_run_reverse(const Tensor& inputs, const LstmParams& params);

}  // namespace docie::nn
