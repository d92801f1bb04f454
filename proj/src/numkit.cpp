#include "docie/numkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace docie::numkit {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

int product(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

NodePtr make_leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->id = g_next_node_id.fetch_add(1);
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->leaf = true;
  return node;
}

NodePtr make_op(const char* op, std::vector<int> shape, std::vector<double> values,
                std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  auto node = std::make_shared<Node>();
  node->id = g_next_node_id.fetch_add(1);
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = needs_grad;
  node->leaf = false;
  node->op = op;
  if (needs_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(op) + ": shape " + shape_to_string(a.shape()) +
                      " does not match shape " + shape_to_string(b.shape()));
  }
}

// Rows/cols view of a 1-D or 2-D tensor: 1-D (C) is treated as one row.
void rows_cols(const Tensor& x, const char* op, int& rows, int& cols) {
  if (x.rank() == 1) {
    rows = 1;
    cols = x.dim(0);
  } else if (x.rank() == 2) {
    rows = x.dim(0);
    cols = x.dim(1);
  } else {
    throw shape_error(std::string(op) + ": expected rank 1 or 2, got shape " +
                      shape_to_string(x.shape()));
  }
  if (cols == 0) throw shape_error(std::string(op) + ": empty last axis");
}

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                          requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  int n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), value),
                          requires_grad));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  if (product(shape) != static_cast<int>(values.size())) {
    throw shape_error("from_values: shape " + shape_to_string(shape) + " needs " +
                      std::to_string(product(shape)) + " values, got " +
                      std::to_string(values.size()));
  }
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  int n = product(shape);
  std::vector<double> values(static_cast<size_t>(n));
  for (auto& v : values) v = dist(rng);
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw contract_error("item: tensor of shape " + shape_to_string(shape()) +
                         " is not a scalar");
  }
  return node_->values[0];
}

void Tensor::set_requires_grad(bool v) {
  if (!node_->leaf) throw contract_error("set_requires_grad: only valid on leaf tensors");
  node_->requires_grad = v;
  if (!v) node_->grad.clear();
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw shape_error("matmul: shape " + shape_to_string(a.shape()) +
                      " does not conform with shape " + shape_to_string(b.shape()));
  }
  const int r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<double> out(static_cast<size_t>(r) * c, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < r; ++i) {
    for (int t = 0; t < k; ++t) {
      const double aval = av[static_cast<size_t>(i) * k + t];
      if (aval == 0.0) continue;
      const size_t brow = static_cast<size_t>(t) * c;
      const size_t orow = static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) out[orow + j] += aval * bv[brow + j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor(make_op("matmul", {r, c}, std::move(out), {an, bn},
                        [r, k, c](Node& n) {
                          Node& pa = *n.parents[0];
                          Node& pb = *n.parents[1];
                          if (pa.requires_grad) {
                            pa.ensure_grad();
                            for (int i = 0; i < r; ++i)
                              for (int j = 0; j < c; ++j) {
                                const double g = n.grad[static_cast<size_t>(i) * c + j];
                                if (g == 0.0) continue;
                                for (int t = 0; t < k; ++t)
                                  pa.grad[static_cast<size_t>(i) * k + t] +=
                                      g * pb.values[static_cast<size_t>(t) * c + j];
                              }
                          }
                          if (pb.requires_grad) {
                            pb.ensure_grad();
                            for (int i = 0; i < r; ++i)
                              for (int t = 0; t < k; ++t) {
                                const double av = pa.values[static_cast<size_t>(i) * k + t];
                                if (av == 0.0) continue;
                                for (int j = 0; j < c; ++j)
                                  pb.grad[static_cast<size_t>(t) * c + j] +=
                                      av * n.grad[static_cast<size_t>(i) * c + j];
                              }
                          }
                        }));
}

namespace {

Tensor elementwise2(const char* op, const Tensor& a, const Tensor& b,
                    const std::function<double(double, double)>& fwd,
                    const std::function<void(Node&)>& bwd) {
  check_same_shape(op, a, b);
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i], b.values()[i]);
  return Tensor(make_op(op, a.shape(), std::move(out), {a.node(), b.node()}, bwd));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2("add", a, b, [](double x, double y) { return x + y; },
                      [](Node& n) {
                        for (int s = 0; s < 2; ++s) {
                          Node& p = *n.parents[static_cast<size_t>(s)];
                          if (!p.requires_grad) continue;
                          p.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
                        }
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2("sub", a, b, [](double x, double y) { return x - y; },
                      [](Node& n) {
                        Node& pa = *n.parents[0];
                        Node& pb = *n.parents[1];
                        if (pa.requires_grad) {
                          pa.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
                        }
                        if (pb.requires_grad) {
                          pb.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
                        }
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2("mul", a, b, [](double x, double y) { return x * y; },
                      [](Node& n) {
                        Node& pa = *n.parents[0];
                        Node& pb = *n.parents[1];
                        if (pa.requires_grad) {
                          pa.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            pa.grad[i] += n.grad[i] * pb.values[i];
                        }
                        if (pb.requires_grad) {
                          pb.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            pb.grad[i] += n.grad[i] * pa.values[i];
                        }
                      });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return Tensor(make_op("scale", a.shape(), std::move(out), {a.node()},
                        [factor](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            p.grad[i] += n.grad[i] * factor;
                        }));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw contract_error("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank || rank > 2) {
    throw shape_error("concat: axis " + std::to_string(axis) + " invalid for shape " +
                      shape_to_string(parts[0].shape()));
  }
  for (const auto& p : parts) {
    if (p.rank() != rank) {
      throw shape_error("concat: shape " + shape_to_string(parts[0].shape()) +
                        " does not match shape " + shape_to_string(p.shape()));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw shape_error("concat: shape " + shape_to_string(parts[0].shape()) +
                          " does not match shape " + shape_to_string(p.shape()));
      }
    }
  }
  std::vector<int> out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) out_shape[static_cast<size_t>(axis)] += p.dim(axis);

  std::vector<double> out(static_cast<size_t>(product(out_shape)));
  std::vector<NodePtr> parents;
  std::vector<int> extents;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    extents.push_back(p.dim(axis));
  }
  if (rank == 1 || axis == 0) {
    size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.values().begin(), p.values().end(), out.begin() + static_cast<long>(off));
      off += p.values().size();
    }
  } else {  // rank 2, axis 1
    const int rows = parts[0].dim(0);
    const int total_cols = out_shape[1];
    int col_off = 0;
    for (const auto& p : parts) {
      const int cols = p.dim(1);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          out[static_cast<size_t>(i) * total_cols + col_off + j] =
              p.values()[static_cast<size_t>(i) * cols + j];
      col_off += cols;
    }
  }
  const int rows = rank == 2 ? parts[0].dim(0) : 1;
  const int total_axis = out_shape[static_cast<size_t>(axis)];
  return Tensor(make_op(
      "concat", out_shape, std::move(out), std::move(parents),
      [axis, rank, rows, total_axis, extents](Node& n) {
        if (rank == 1 || axis == 0) {
          size_t off = 0;
          for (size_t s = 0; s < n.parents.size(); ++s) {
            Node& p = *n.parents[s];
            if (p.requires_grad) {
              p.ensure_grad();
              for (size_t i = 0; i < p.values.size(); ++i) p.grad[i] += n.grad[off + i];
            }
            off += p.values.size();
          }
        } else {
          int col_off = 0;
          for (size_t s = 0; s < n.parents.size(); ++s) {
            Node& p = *n.parents[s];
            const int cols = extents[s];
            if (p.requires_grad) {
              p.ensure_grad();
              for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                  p.grad[static_cast<size_t>(i) * cols + j] +=
                      n.grad[static_cast<size_t>(i) * total_axis + col_off + j];
            }
            col_off += cols;
          }
        }
      }));
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  if (x.rank() < 1 || x.rank() > 2) {
    throw shape_error("slice_rows: expected rank 1 or 2, got shape " +
                      shape_to_string(x.shape()));
  }
  const int rows = x.dim(0);
  if (begin < 0 || end > rows || begin >= end) {
    throw contract_error("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + std::to_string(rows) +
                         " rows");
  }
  const int cols = x.rank() == 2 ? x.dim(1) : 1;
  std::vector<int> out_shape = x.shape();
  out_shape[0] = end - begin;
  std::vector<double> out(x.values().begin() + static_cast<long>(begin) * cols,
                          x.values().begin() + static_cast<long>(end) * cols);
  return Tensor(make_op("slice", out_shape, std::move(out), {x.node()},
                        [begin, cols](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          const size_t off = static_cast<size_t>(begin) * cols;
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            p.grad[off + i] += n.grad[i];
                        }));
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  if (x.rank() != 2) {
    throw shape_error("slice_cols: expected rank 2, got shape " + shape_to_string(x.shape()));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  if (begin < 0 || end > cols || begin >= end) {
    throw contract_error("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + std::to_string(cols) +
                         " columns");
  }
  const int width = end - begin;
  std::vector<double> out(static_cast<size_t>(rows) * width);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < width; ++j)
      out[static_cast<size_t>(i) * width + j] =
          x.values()[static_cast<size_t>(i) * cols + begin + j];
  return Tensor(make_op("slice", {rows, width}, std::move(out), {x.node()},
                        [rows, cols, begin, width](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < rows; ++i)
                            for (int j = 0; j < width; ++j)
                              p.grad[static_cast<size_t>(i) * cols + begin + j] +=
                                  n.grad[static_cast<size_t>(i) * width + j];
                        }));
}

Tensor take(const Tensor& x, const std::vector<int>& flat_indices) {
  std::vector<double> out(flat_indices.size());
  for (size_t i = 0; i < flat_indices.size(); ++i) {
    const int idx = flat_indices[i];
    if (idx < 0 || idx >= x.numel()) {
      throw contract_error("take: index " + std::to_string(idx) + " out of range for " +
                           std::to_string(x.numel()) + " elements");
    }
    out[i] = x.values()[static_cast<size_t>(idx)];
  }
  auto indices = flat_indices;
  return Tensor(make_op("take", {static_cast<int>(flat_indices.size())}, std::move(out),
                        {x.node()}, [indices](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < indices.size(); ++i)
                            p.grad[static_cast<size_t>(indices[i])] += n.grad[i];
                        }));
}

namespace {

Tensor elementwise1(const char* op, const Tensor& x, const std::function<double(double)>& fwd,
                    const std::function<double(double, double)>& dlocal) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
  return Tensor(make_op(op, x.shape(), std::move(out), {x.node()},
                        [dlocal](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i)
                            p.grad[i] += n.grad[i] * dlocal(p.values[i], n.values[i]);
                        }));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return elementwise1("sigmoid", x, stable_sigmoid,
                      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& x) {
  return elementwise1("tanh", x, [](double v) { return std::tanh(v); },
                      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return elementwise1("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softmax_rowwise(const Tensor& x) {
  int rows, cols;
  rows_cols(x, "softmax_rowwise", rows, cols);
  std::vector<double> out(x.values().size());
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    double mx = x.values()[off];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x.values()[off + j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      out[off + j] = std::exp(x.values()[off + j] - mx);
      sum += out[off + j];
    }
    for (int j = 0; j < cols; ++j) out[off + j] /= sum;
  }
  return Tensor(make_op("softmax_rowwise", x.shape(), std::move(out), {x.node()},
                        [rows, cols](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < rows; ++i) {
                            const size_t off = static_cast<size_t>(i) * cols;
                            double dot = 0.0;
                            for (int j = 0; j < cols; ++j)
                              dot += n.grad[off + j] * n.values[off + j];
                            for (int j = 0; j < cols; ++j)
                              p.grad[off + j] +=
                                  (n.grad[off + j] - dot) * n.values[off + j];
                          }
                        }));
}

Tensor layer_normalize(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  int rows, cols;
  rows_cols(x, "layer_normalize", rows, cols);
  if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols) {
    throw shape_error("layer_normalize: affine shape " + shape_to_string(gamma.shape()) + "/" +
                      shape_to_string(beta.shape()) + " does not match feature width " +
                      std::to_string(cols));
  }
  std::vector<double> out(x.values().size());
  std::vector<double> xhat(x.values().size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += x.values()[off + j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = x.values()[off + j] - mean;
      var += d * d;
    }
    var /= cols;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = istd;
    for (int j = 0; j < cols; ++j) {
      xhat[off + j] = (x.values()[off + j] - mean) * istd;
      out[off + j] = gamma.values()[static_cast<size_t>(j)] * xhat[off + j] +
                     beta.values()[static_cast<size_t>(j)];
    }
  }
  return Tensor(make_op(
      "layer_normalize", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [rows, cols, xhat, inv_std](Node& n) {
        Node& px = *n.parents[0];
        Node& pg = *n.parents[1];
        Node& pb = *n.parents[2];
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
              pg.grad[static_cast<size_t>(j)] +=
                  n.grad[static_cast<size_t>(i) * cols + j] *
                  xhat[static_cast<size_t>(i) * cols + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
              pb.grad[static_cast<size_t>(j)] += n.grad[static_cast<size_t>(i) * cols + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          for (int i = 0; i < rows; ++i) {
            const size_t off = static_cast<size_t>(i) * cols;
            const double istd = inv_std[static_cast<size_t>(i)];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < cols; ++j) {
              const double dxhat = n.grad[off + j] * pg.values[static_cast<size_t>(j)];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat[off + j];
            }
            for (int j = 0; j < cols; ++j) {
              const double dxhat = n.grad[off + j] * pg.values[static_cast<size_t>(j)];
              px.grad[off + j] += istd * (dxhat - (sum_dxhat + xhat[off + j] * sum_dxhat_xhat) /
                                                      cols);
            }
          }
        }
      }));
}

Tensor max_pool_1d(const Tensor& x) {
  if (x.rank() != 2) {
    throw shape_error("max_pool_1d: expected shape (T,C), got " + shape_to_string(x.shape()));
  }
  const int t_len = x.dim(0), cols = x.dim(1);
  std::vector<double> out(static_cast<size_t>(cols));
  std::vector<int> arg(static_cast<size_t>(cols), 0);
  for (int j = 0; j < cols; ++j) {
    double best = x.values()[static_cast<size_t>(j)];
    int best_t = 0;
    for (int t = 1; t < t_len; ++t) {
      const double v = x.values()[static_cast<size_t>(t) * cols + j];
      if (v > best) {
        best = v;
        best_t = t;
      }
    }
    out[static_cast<size_t>(j)] = best;
    arg[static_cast<size_t>(j)] = best_t;
  }
  return Tensor(make_op("max_pool_1d", {cols}, std::move(out), {x.node()},
                        [cols, arg](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int j = 0; j < cols; ++j)
                            p.grad[static_cast<size_t>(arg[static_cast<size_t>(j)]) * cols + j] +=
                                n.grad[static_cast<size_t>(j)];
                        }));
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices) {
  if (table.rank() != 2) {
    throw shape_error("embedding_lookup: table must be rank 2, got " +
                      shape_to_string(table.shape()));
  }
  const int vocab = table.dim(0), width = table.dim(1);
  std::vector<double> out(indices.size() * static_cast<size_t>(width));
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= vocab) {
      throw contract_error("embedding_lookup: index " + std::to_string(idx) +
                           " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.values().begin() + static_cast<long>(idx) * width, width,
                out.begin() + static_cast<long>(i) * width);
  }
  auto idx_copy = indices;
  return Tensor(make_op("embedding_lookup",
                        {static_cast<int>(indices.size()), width}, std::move(out),
                        {table.node()}, [idx_copy, width](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < idx_copy.size(); ++i)
                            for (int j = 0; j < width; ++j)
                              p.grad[static_cast<size_t>(idx_copy[i]) * width + j] +=
                                  n.grad[i * static_cast<size_t>(width) + j];
                        }));
}

Tensor log_sum_exp(const Tensor& x) {
  int rows, cols;
  rows_cols(x, "log_sum_exp", rows, cols);
  std::vector<double> out(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    double mx = x.values()[off];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x.values()[off + j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp(x.values()[off + j] - mx);
    out[static_cast<size_t>(i)] = mx + std::log(sum);
  }
  std::vector<int> out_shape = x.rank() == 2 ? std::vector<int>{rows, 1} : std::vector<int>{1};
  return Tensor(make_op("log_sum_exp", std::move(out_shape), std::move(out), {x.node()},
                        [rows, cols](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < rows; ++i) {
                            const size_t off = static_cast<size_t>(i) * cols;
                            const double lse = n.values[static_cast<size_t>(i)];
                            const double g = n.grad[static_cast<size_t>(i)];
                            if (g == 0.0) continue;
                            for (int j = 0; j < cols; ++j)
                              p.grad[off + j] += g * std::exp(p.values[off + j] - lse);
                          }
                        }));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) {
    throw shape_error("transpose: expected rank 2, got " + shape_to_string(x.shape()));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values().size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<size_t>(j) * rows + i] = x.values()[static_cast<size_t>(i) * cols + j];
  return Tensor(make_op("transpose", {cols, rows}, std::move(out), {x.node()},
                        [rows, cols](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < rows; ++i)
                            for (int j = 0; j < cols; ++j)
                              p.grad[static_cast<size_t>(i) * cols + j] +=
                                  n.grad[static_cast<size_t>(j) * rows + i];
                        }));
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (product(new_shape) != x.numel()) {
    throw shape_error("reshape: shape " + shape_to_string(x.shape()) +
                      " cannot reshape to " + shape_to_string(new_shape));
  }
  return Tensor(make_op("reshape", std::move(new_shape), x.values(), {x.node()},
                        [](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
                        }));
}

Tensor sum_all(const Tensor& x) {
  double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  return Tensor(make_op("sum_all", {1}, {s}, {x.node()},
                        [](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (auto& g : p.grad) g += n.grad[0];
                        }));
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / x.numel();
  double s = std::accumulate(x.values().begin(), x.values().end(), 0.0) * inv;
  return Tensor(make_op("mean_all", {1}, {s}, {x.node()},
                        [inv](Node& n) {
                          Node& p = *n.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (auto& g : p.grad) g += n.grad[0] * inv;
                        }));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1 || x.dim(2) != w.dim(2) ||
      w.dim(3) != b.dim(0)) {
    throw shape_error("conv2d: input " + shape_to_string(x.shape()) + ", kernel " +
                      shape_to_string(w.shape()) + ", bias " + shape_to_string(b.shape()) +
                      " do not conform");
  }
  const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  std::vector<double> out(static_cast<size_t>(h) * wd * cout);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < wd; ++j)
      for (int oc = 0; oc < cout; ++oc) {
        double acc = b.values()[static_cast<size_t>(oc)];
        for (int di = 0; di < kh; ++di) {
          const int si = i + di - ph;
          if (si < 0 || si >= h) continue;
          for (int dj = 0; dj < kw; ++dj) {
            const int sj = j + dj - pw;
            if (sj < 0 || sj >= wd) continue;
            for (int ic = 0; ic < cin; ++ic)
              acc += xv[(static_cast<size_t>(si) * wd + sj) * cin + ic] *
                     wv[((static_cast<size_t>(di) * kw + dj) * cin + ic) * cout + oc];
          }
        }
        out[(static_cast<size_t>(i) * wd + j) * cout + oc] = acc;
      }
  return Tensor(make_op(
      "conv2d", {h, wd, cout}, std::move(out), {x.node(), w.node(), b.node()},
      [h, wd, cin, kh, kw, cout, ph, pw](Node& n) {
        Node& px = *n.parents[0];
        Node& pw_ = *n.parents[1];
        Node& pb = *n.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pw_.requires_grad) pw_.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < wd; ++j)
            for (int oc = 0; oc < cout; ++oc) {
              const double g = n.grad[(static_cast<size_t>(i) * wd + j) * cout + oc];
              if (g == 0.0) continue;
              if (pb.requires_grad) pb.grad[static_cast<size_t>(oc)] += g;
              for (int di = 0; di < kh; ++di) {
                const int si = i + di - ph;
                if (si < 0 || si >= h) continue;
                for (int dj = 0; dj < kw; ++dj) {
                  const int sj = j + dj - pw;
                  if (sj < 0 || sj >= wd) continue;
                  for (int ic = 0; ic < cin; ++ic) {
                    const size_t xi = (static_cast<size_t>(si) * wd + sj) * cin + ic;
                    const size_t wi =
                        ((static_cast<size_t>(di) * kw + dj) * cin + ic) * cout + oc;
                    if (pw_.requires_grad) pw_.grad[wi] += g * px.values[xi];
                    if (px.requires_grad) px.grad[xi] += g * pw_.values[wi];
                  }
                }
              }
            }
      }));
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
      w.dim(2) != b.dim(0)) {
    throw shape_error("conv1d: input " + shape_to_string(x.shape()) + ", kernel " +
                      shape_to_string(w.shape()) + ", bias " + shape_to_string(b.shape()) +
                      " do not conform");
  }
  const int t_len = x.dim(0), cin = x.dim(1);
  const int k = w.dim(0), cout = w.dim(2);
  if (t_len < k) {
    throw shape_error("conv1d: input length " + std::to_string(t_len) +
                      " shorter than kernel " + std::to_string(k));
  }
  const int t_out = t_len - k + 1;
  std::vector<double> out(static_cast<size_t>(t_out) * cout);
  for (int t = 0; t < t_out; ++t)
    for (int oc = 0; oc < cout; ++oc) {
      double acc = b.values()[static_cast<size_t>(oc)];
      for (int dt = 0; dt < k; ++dt)
        for (int ic = 0; ic < cin; ++ic)
          acc += x.values()[static_cast<size_t>(t + dt) * cin + ic] *
                 w.values()[(static_cast<size_t>(dt) * cin + ic) * cout + oc];
      out[static_cast<size_t>(t) * cout + oc] = acc;
    }
  return Tensor(make_op(
      "conv1d", {t_out, cout}, std::move(out), {x.node(), w.node(), b.node()},
      [t_out, cin, k, cout](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int t = 0; t < t_out; ++t)
          for (int oc = 0; oc < cout; ++oc) {
            const double g = n.grad[static_cast<size_t>(t) * cout + oc];
            if (g == 0.0) continue;
            if (pb.requires_grad) pb.grad[static_cast<size_t>(oc)] += g;
            for (int dt = 0; dt < k; ++dt)
              for (int ic = 0; ic < cin; ++ic) {
                const size_t xi = static_cast<size_t>(t + dt) * cin + ic;
                const size_t wi = (static_cast<size_t>(dt) * cin + ic) * cout + oc;
                if (pw.requires_grad) pw.grad[wi] += g * px.values[xi];
                if (px.requires_grad) px.grad[xi] += g * pw.values[wi];
              }
          }
      }));
}

std::vector<int> argmax_rowwise(const Tensor& x) {
  int rows, cols;
  rows_cols(x, "argmax_rowwise", rows, cols);
  std::vector<int> out(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    int best = 0;
    for (int j = 1; j < cols; ++j)
      if (x.values()[off + j] > x.values()[off + best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

void backward(const Tensor& loss, std::vector<std::uint64_t>* visit_order) {
  if (loss.numel() != 1) {
    throw contract_error("backward: loss of shape " + shape_to_string(loss.shape()) +
                         " is not a scalar");
  }
  // Collect the reachable subgraph that needs gradients.
  std::vector<Node*> nodes;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || seen.count(n)) continue;
    seen.insert(n);
    nodes.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });
  // Intermediate grads are transient per sweep; only leaf grads accumulate.
  for (Node* n : nodes) {
    if (!n->leaf) n->grad.assign(n->values.size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (Node* n : nodes) {
    if (visit_order) visit_order->push_back(n->id);
    if (!n->leaf && n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h) {
  Tensor probe = Tensor::from_values(x.shape(), x.values());
  std::vector<double> grad(probe.values().size());
  for (size_t i = 0; i < grad.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + h;
    const double fp = f(probe);
    probe.values()[i] = orig - h;
    const double fm = f(probe);
    probe.values()[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_values(x.shape(), std::move(grad));
}

}  // namespace docie::numkit
