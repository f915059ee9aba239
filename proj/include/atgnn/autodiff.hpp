#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "atgnn/tensor.hpp"

namespace atgnn {

// A learnable array. `grad` is the cross-sample accumulator the optimizer
// consumes; per-evaluation gradients live on the tape until explicitly folded
// in, so concurrent evaluations can be reduced in a fixed order.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered registry of parameters. Registration order is the canonical order
// used for checkpoints and optimizer state.
class ParamStore {
 public:
  Parameter& create(const std::string& name, int rows, int cols);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  int count() const { return int(items_.size()); }
  Parameter& at(int i) { return *items_[i]; }
  const Parameter& at(int i) const { return *items_[i]; }
  void zero_grads();
  std::vector<Parameter*> pointers();
  std::size_t total_entries() const;

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, int> index_;
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using AdjLists = std::vector<std::vector<int>>;

// Geometry of a 2D convolution over a channels-by-(height*width) tensor.
struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// Records a forward computation and replays it in reverse for gradients.
// Appending order is a topological order, so the backward sweep visits each
// operation exactly once, after all of its consumers.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var param(Parameter& p);

  Var matmul(Var a, Var b);
  Var transpose(Var x);
  Var reshape(Var x, int rows, int cols);

  // Elementwise; operands must have equal shape, or one may be 1x1.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  Var sigmoid(Var x);
  Var relu(Var x);
  Var gelu(Var x);

  // Row-broadcast: v is [1 x D], applied to every row of a [N x D].
  Var add_rowvec(Var a, Var v);
  Var mul_rowvec(Var a, Var v);

  // Per-row normalization to zero mean / unit variance (no affine part).
  Var row_norm(Var x, double eps = 1e-5);

  Var mean_rows(Var x);               // [N x D] -> [1 x D]
  Var sum_all(Var x);                 // -> [1 x 1]
  Var concat_cols(Var a, Var b);      // [N x Da],[N x Db] -> [N x Da+Db]
  Var slice_cols(Var x, int c0, int c1);
  Var rows_dot(Var a, Var b);         // [S x C],[S x C] -> [1 x S]

  // Row i = elementwise max over j in adj[i] of (x_j - x_i); empty rows are
  // zero. Gradient goes to exactly one contributor per element, ties resolved
  // toward the lowest neighbor index.
  Var max_rel(Var x, const AdjLists& adj);
  // Row i = max over j in adj[i] of (q_i - kv_j), or (kv_j - q_i) when
  // `query_minus_key` is false. adj indexes rows of kv.
  Var max_rel_cross(Var q, Var kv, const AdjLists& adj, bool query_minus_key = true);

  // x: [in_ch x H*W], w: [out_ch x in_ch*k^2], bias: [1 x out_ch].
  Var conv2d(Var x, Var w, Var bias, const ConvSpec& spec);

  // Mean over classes of binary cross-entropy, computed from logits in the
  // numerically stable form. targets entries must lie in [0, 1].
  Var bce_with_logits(Var logits, const Tensor& targets);

  void backward(Var root);
  // Folds gradients of parameter leaves into Parameter::grad, scaled.
  // Call order across tapes defines the reduction order.
  void add_param_grads(double scale = 1.0);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const;
  int node_count() const { return int(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&)> pull;
  };

  Var push(Tensor value, bool requires_grad);
  Tensor& grad_buf(int id);
  bool rg(Var v) const { return nodes_[v.id].requires_grad; }
  void check(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;

  friend struct TapeOps;
};

// Max over all parameter entries of |analytic - central difference| /
// max(1, |central difference|). `loss(true)` must run forward and backward,
// leaving gradients in Parameter::grad; `loss(false)` only needs the value.
double check_gradient(std::span<Parameter* const> params,
                      const std::function<double(bool)>& loss, double eps);

double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace atgnn
