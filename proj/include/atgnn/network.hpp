#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "atgnn/autodiff.hpp"
#include "atgnn/config.hpp"
#include "atgnn/graph.hpp"

namespace atgnn {

struct NormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

struct PgnBlockParams {
  NormParams norm1, norm2;
  Parameter* lin_in = nullptr;     // [D x D], applied before message passing
  Parameter* update = nullptr;     // [2D x D], consumes the concatenation
  Parameter* lin_out = nullptr;    // [D x D], applied after the nonlinearity
  Parameter* ffn_hidden = nullptr; // [D x hD]
  Parameter* ffn_out = nullptr;    // [hD x D]
  int k = 0;
  int dilation = 1;
};

struct ConvLayer {
  Parameter* w = nullptr;  // [out_ch x in_ch*k^2]
  Parameter* b = nullptr;  // [1 x out_ch]
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 2, pad = 1;
};

struct MlgBlockParams {
  Parameter* label_update = nullptr;  // [2C x C]
  Parameter* adjacency = nullptr;     // [S x S]
};

struct StageParams {
  std::vector<PgnBlockParams> pgn;
  Parameter* labels = nullptr;  // [S x C]; null when the stage has no label blocks
  std::vector<MlgBlockParams> mlg;
  ConvLayer down;               // between-stage downsample
  bool has_down = false;
  Tensor rel_bias;              // fixed [N x N] ranking bias (pyramid only)
  int grid_h = 0, grid_w = 0;
};

struct HeadParams {
  Parameter* fc1_w = nullptr;  // [D x 2D]
  Parameter* fc1_b = nullptr;
  Parameter* fc2_w = nullptr;  // [2D x S]
  Parameter* fc2_b = nullptr;
  Parameter* readout = nullptr;  // [S x C]; null when the model has no label path
};

// Captured graph topologies from one forward pass. Freezing and replaying the
// plan makes the loss a smooth function of the parameters, which is what the
// finite-difference checks differentiate; neighbor selection itself carries
// no gradient.
struct GraphPlan {
  bool frozen = false;
  std::vector<FeatureGraph> patch;
  std::vector<AdjLists> label;
};

// Per-node affine layer normalization.
Var affine_norm(Tape& t, Var x, const NormParams& p);

// y_i = x_i + gelu(concat(z_i, max_j(z_j - z_i)) . update) . lin_out with
// z = x . lin_in, aggregated over the given graph.
Var graph_conv(Tape& t, Var nodes, const FeatureGraph& g, const PgnBlockParams& p);

// Builds the neighbor graph for one block from the features message passing
// will actually see.
using GraphSource = std::function<FeatureGraph(const Tensor& features)>;

// One full block: pre-norm, graph convolution over a freshly built graph,
// pre-norm, feed-forward; both sub-layers residual from the unnormalized
// input.
Var pgn_block(Tape& t, Var nodes, const PgnBlockParams& p, const GraphSource& graph_for);

// Neighbor-count schedule: nondecreasing from k to 2k across the stack.
int schedule_k(int base_k, int block_index, int total_blocks);
// Dilation schedule: 1 up to dilation_max across the stack.
int schedule_dilation(int dilation_max, int block_index, int total_blocks);

// Label refinement against patch nodes: l_i += concat(l_i, max diff) . update.
Var plg_block(Tape& t, Var labels, Var patches, Parameter& label_update, const AdjLists& adj,
              bool label_minus_patch);

// Fully-connected label mixing: A . L + L.
Var llg_block(Tape& t, Var labels, Parameter& adjacency);

// Global average pooling over nodes followed by two dense layers.
Var patch_logits_head(Tape& t, Var patches, const HeadParams& p);

// One independent dot product per class row.
Var label_logits_head(Tape& t, Var labels, Parameter& readout);

// sigmoid(patch logits + label logits), elementwise.
Var fuse_probs(Tape& t, Var patch_logits, Var label_logits);

class Network {
 public:
  explicit Network(ModelConfig cfg);

  void init_params(std::uint64_t seed);

  struct Output {
    Var stem_nodes;     // node features entering the block stack
    Var final_nodes;    // node features leaving it
    Var final_labels;   // refined label embeddings; invalid if no label path
    Var patch_logits;
    Var label_logits;
    Var logits;
    Var probs;
  };

  Output forward(Tape& tape, const Tensor& input, GraphPlan* plan = nullptr);
  Var loss(Tape& tape, const Output& out, const Tensor& targets) const;

  // Convenience for optimization and gradient checking: forward (+ backward
  // when `grad`), folding gradients into Parameter::grad.
  double loss_value(const Tensor& input, const Tensor& targets, GraphPlan* plan, bool grad);

  Tensor predict(const Tensor& input);  // [1 x S] probabilities

  ParamStore& params() { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<StageParams>& stages() const { return stages_; }
  const HeadParams& head() const { return head_; }

  // Neighbor-count and dilation schedules by global block index.
  int k_at(int block_index) const;
  int dilation_at(int block_index, int stage) const;

 private:
  void build();

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<ConvLayer> stem_;
  Parameter* pos_embed_ = nullptr;
  std::vector<StageParams> stages_;
  HeadParams head_;

  struct InitRule {
    enum Kind { Zeros, Ones, Normal } kind = Zeros;
    double sigma = 0.0;
  };
  std::vector<InitRule> init_rules_;  // aligned with parameter registration order
};

// Fixed two-axis sinusoidal encodings of grid positions, one row per node in
// row-major (row, then column) order.
Tensor grid_position_encoding(int grid_h, int grid_w, int dim);

}  // namespace atgnn
