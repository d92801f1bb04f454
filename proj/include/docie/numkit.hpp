#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace docie::numkit {

// Structural problem with operand shapes (names both shapes in the message).
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an operation contract (non-scalar loss, index out of range, ...).
struct contract_error : std::runtime_error {
  explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

std::string shape_to_string(const std::vector<int>& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One record in the computation graph. Nodes are created in topological
// order; `id` is the insertion index, so reverse-id order is a valid
// reverse topological order for the backward pass.
struct Node {
  std::uint64_t id = 0;
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  int numel() const { return static_cast<int>(values.size()); }
  void ensure_grad();
};

// Dense row-major tensor of 64-bit floats. Value-semantic handle sharing
// storage; copies alias the same node in the graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static Tensor uniform_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  double at(int flat) const { return node_->values.at(static_cast<size_t>(flat)); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_buffer();  // mutable access (optimizer, clipping)
  void zero_grad();

  std::uint64_t node_id() const { return node_->id; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// ---- forward ops (each differentiable one registers its gradient rule) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor take(const Tensor& x, const std::vector<int>& flat_indices);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax_rowwise(const Tensor& x);
Tensor layer_normalize(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor max_pool_1d(const Tensor& x);  // (T,C) -> (C), max over time
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices);
Tensor log_sum_exp(const Tensor& x);  // last axis; (R,C)->(R,1), (C)->(1)
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// x: (H,W,Cin), w: (kh,kw,Cin,Cout), b: (Cout); stride 1, zero "same" padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
// x: (T,Cin), w: (k,Cin,Cout), b: (Cout); stride 1, valid padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// Non-differentiable.
std::vector<int> argmax_rowwise(const Tensor& x);  // ties -> lowest index

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively;
// callers zero leaf grads between steps. `visit_order`, when given, receives
// the node ids in visit order (test hook).
void backward(const Tensor& loss, std::vector<std::uint64_t>* visit_order = nullptr);

// Central-difference gradient oracle, independent of the graph machinery.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h);

}  // namespace docie::numkit
