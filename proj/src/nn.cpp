#include "docie/nn.hpp"

namespace docie::nn {

using namespace numkit;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor x2 = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
  Tensor y = matmul(x2, w);
  Tensor bias = tile_rows(reshape(b, {1, b.numel()}), y.dim(0));
  Tensor out = add(y, bias);
  return x.rank() == 1 ? reshape(out, {out.dim(1)}) : out;
}

Tensor tile_rows(const Tensor& row, int times) {
  if (row.rank() != 2 || row.dim(0) != 1) {
    throw shape_error("tile_rows: expected shape (1,C), got " + shape_to_string(row.shape()));
  }
  if (times == 1) return row;
  Tensor ones = Tensor::full({times, 1}, 1.0);
  return matmul(ones, row);
}

Tensor log_softmax_rowwise(const Tensor& x) {
  Tensor x2 = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
  Tensor lse = log_sum_exp(x2);  // (R,1)
  Tensor ones = Tensor::full({1, x2.dim(1)}, 1.0);
  Tensor out = sub(x2, matmul(lse, ones));
  return x.rank() == 1 ? reshape(out, {x.dim(0)}) : out;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(targets.size())) {
    throw shape_error("cross_entropy_mean: logits " + shape_to_string(logits.shape()) +
                      " do not match " + std::to_string(targets.size()) + " targets");
  }
  const int cols = logits.dim(1);
  Tensor logp = log_softmax_rowwise(logits);
  std::vector<int> flat(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= cols) {
      throw contract_error("cross_entropy_mean: target " + std::to_string(targets[i]) +
                           " outside " + std::to_string(cols) + " classes");
    }
    flat[i] = static_cast<int>(i) * cols + targets[i];
  }
  return scale(mean_all(take(logp, flat)), -1.0);
}

LstmParams make_lstm(int input_width, int hidden_width, std::mt19937_64& rng) {
  LstmParams p;
  p.wx = Tensor::uniform_init({input_width, 4 * hidden_width}, input_width, rng);
  p.wh = Tensor::uniform_init({hidden_width, 4 * hidden_width}, hidden_width, rng);
  p.b = Tensor::zeros({4 * hidden_width}, true);
  // Forget gate biased open, the usual LSTM trainability aid.
  for (int i = hidden_width; i < 2 * hidden_width; ++i)
    p.b.values()[static_cast<size_t>(i)] = 1.0;
  return p;
}

LstmState lstm_zero_state(int hidden_width) {
  return {Tensor::zeros({1, hidden_width}), Tensor::zeros({1, hidden_width})};
}

LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& params) {
  const int hidden = state.h.dim(1);
  Tensor x2 = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
  Tensor gates = add(add(matmul(x2, params.wx), matmul(state.h, params.wh)),
                     reshape(params.b, {1, 4 * hidden}));
  Tensor gi = sigmoid(slice_cols(gates, 0, hidden));
  Tensor gf = sigmoid(slice_cols(gates, hidden, 2 * hidden));
  Tensor go = sigmoid(slice_cols(gates, 2 * hidden, 3 * hidden));
  Tensor gc = tanh_act(slice_cols(gates, 3 * hidden, 4 * hidden));
  Tensor c_next = add(mul(gf, state.c), mul(gi, gc));
  Tensor h_next = mul(go, tanh_act(c_next));
  return {h_next, c_next};
}

Tensor lstm_run(const Tensor& inputs, const LstmParams& params) {
  const int t_len = inputs.dim(0);
  LstmState state = lstm_zero_state(params.wh.dim(0));
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    state = lstm_step(slice_rows(inputs, t, t + 1), state, params);
    outputs.push_back(state.h);
  }
  return concat(outputs, 0);
}

Tensor lstm_run_reverse(const Tensor& inputs, const LstmParams& params) {
  const int t_len = inputs.dim(0);
  LstmState state = lstm_zero_state(params.wh.dim(0));
  std::vector<Tensor> outputs(static_cast<size_t>(t_len));
  for (int t = t_len - 1; t >= 0; --t) {
    state = lstm_step(slice_rows(inputs, t, t + 1), state, params);
    outputs[static_cast<size_t>(t)] = state.h;
  }
  return concat(outputs, 0);
}

}  // namespace docie::nn
