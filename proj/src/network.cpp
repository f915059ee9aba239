#include "atgnn/network.hpp"

#include <cmath>

#include "atgnn/rng.hpp"

namespace atgnn {

Var affine_norm(Tape& t, Var x, const NormParams& p) {
  Var y = t.row_norm(x);
  y = t.mul_rowvec(y, t.param(*p.gain));
  return t.add_rowvec(y, t.param(*p.bias));
}

namespace {

// The non-residual part of graph_conv, so the caller chooses what the
// residual connects to.
Var graph_conv_branch(Tape& t, Var branch_in, const FeatureGraph& g, const PgnBlockParams& p) {
  Var z = t.matmul(branch_in, t.param(*p.lin_in));
  Var msg = t.max_rel(z, g.neighbors);
  Var h = t.matmul(t.concat_cols(z, msg), t.param(*p.update));
  return t.matmul(t.gelu(h), t.param(*p.lin_out));
}

Var ffn_branch(Tape& t, Var branch_in, const PgnBlockParams& p) {
  Var h = t.gelu(t.matmul(branch_in, t.param(*p.ffn_hidden)));
  return t.matmul(h, t.param(*p.ffn_out));
}

}  // namespace

Var graph_conv(Tape& t, Var nodes, const FeatureGraph& g, const PgnBlockParams& p) {
  return t.add(nodes, graph_conv_branch(t, nodes, g, p));
}

Var pgn_block(Tape& t, Var nodes, const PgnBlockParams& p, const GraphSource& graph_for) {
  Var normed = affine_norm(t, nodes, p.norm1);
  const FeatureGraph g = graph_for(t.value(normed));
  nodes = t.add(nodes, graph_conv_branch(t, normed, g, p));
  Var normed2 = affine_norm(t, nodes, p.norm2);
  return t.add(nodes, ffn_branch(t, normed2, p));
}

int schedule_k(int base_k, int block_index, int total_blocks) {
  if (total_blocks <= 1) return base_k;
  const double frac = double(block_index) / double(total_blocks - 1);
  return int(std::llround(base_k * (1.0 + frac)));
}

int schedule_dilation(int dilation_max, int block_index, int total_blocks) {
  if (total_blocks <= 1) return 1;
  const double frac =
      double(block_index) * double(dilation_max - 1) / double(total_blocks - 1);
  return std::min(1 + int(std::llround(frac)), dilation_max);
}

Var plg_block(Tape& t, Var labels, Var patches, Parameter& label_update, const AdjLists& adj,
              bool label_minus_patch) {
  const Tensor& lv = t.value(labels);
  const Tensor& pv = t.value(patches);
  if (lv.cols() != pv.cols())
    throw ShapeError("plg_block: label dim " + shape_str(lv) + " does not match patch dim " +
                     shape_str(pv));
  Var diff = t.max_rel_cross(labels, patches, adj, label_minus_patch);
  Var h = t.matmul(t.concat_cols(labels, diff), t.param(label_update));
  return t.add(labels, h);
}

Var llg_block(Tape& t, Var labels, Parameter& adjacency) {
  const Tensor& lv = t.value(labels);
  if (adjacency.value.rows() != lv.rows() || adjacency.value.cols() != lv.rows())
    throw ShapeError("llg_block: adjacency " + shape_str(adjacency.value) + " expected " +
                     shape_str(lv.rows(), lv.rows()));
  Var mixed = t.matmul(t.param(adjacency), labels);
  return t.add(mixed, labels);
}

Var patch_logits_head(Tape& t, Var patches, const HeadParams& p) {
  Var pooled = t.mean_rows(patches);
  Var h = t.gelu(t.add_rowvec(t.matmul(pooled, t.param(*p.fc1_w)), t.param(*p.fc1_b)));
  return t.add_rowvec(t.matmul(h, t.param(*p.fc2_w)), t.param(*p.fc2_b));
}

Var label_logits_head(Tape& t, Var labels, Parameter& readout) {
  return t.rows_dot(t.param(readout), labels);
}

Var fuse_probs(Tape& t, Var patch_logits, Var label_logits) {
  return t.sigmoid(t.add(patch_logits, label_logits));
}

Tensor grid_position_encoding(int grid_h, int grid_w, int dim) {
  const int per_axis = dim / 2;
  const int pairs = per_axis / 2;
  Tensor out(grid_h * grid_w, dim);
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) {
      double* row = out.row(r * grid_w + c);
      for (int f = 0; f < pairs; ++f) {
        const double freq = std::pow(10000.0, -double(f) / double(pairs));
        row[2 * f] = std::sin(r * freq);
        row[2 * f + 1] = std::cos(r * freq);
        row[per_axis + 2 * f] = std::sin(c * freq);
        row[per_axis + 2 * f + 1] = std::cos(c * freq);
      }
    }
  return out;
}

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build();
}

namespace {

double xavier_sigma(int rows, int cols) { return std::sqrt(2.0 / double(rows + cols)); }

}  // namespace

void Network::build() {
  auto normal = [&](double sigma) {
    InitRule r;
    r.kind = InitRule::Normal;
    r.sigma = sigma;
    return r;
  };
  auto reg = [&](const std::string& name, int rows, int cols, InitRule rule) {
    Parameter& p = store_.create(name, rows, cols);
    init_rules_.push_back(rule);
    return &p;
  };

  // Stem: one stride-2 conv per channel entry, each halving both axes.
  int in_ch = 1;
  for (std::size_t i = 0; i < cfg_.stem_channels.size(); ++i) {
    ConvLayer layer;
    layer.in_ch = in_ch;
    layer.out_ch = cfg_.stem_channels[i];
    const int patch = layer.in_ch * layer.kernel * layer.kernel;
    layer.w = reg("stem.conv" + std::to_string(i) + ".w", layer.out_ch, patch,
                  normal(xavier_sigma(patch, layer.out_ch * layer.kernel * layer.kernel)));
    layer.b = reg("stem.conv" + std::to_string(i) + ".b", 1, layer.out_ch,
                  InitRule{InitRule::Zeros, 0.0});
    stem_.push_back(layer);
    in_ch = layer.out_ch;
  }
  int grid_h = cfg_.input_freq / cfg_.stem_reduction();
  int grid_w = cfg_.input_time / cfg_.stem_reduction();
  pos_embed_ = reg("stem.pos", grid_h * grid_w, cfg_.stage_dims[0], normal(0.02));

  const int s_count = cfg_.stages();
  const int classes = cfg_.classes;
  for (int s = 0; s < s_count; ++s) {
    StageParams stage;
    stage.grid_h = grid_h;
    stage.grid_w = grid_w;
    const int dim = cfg_.stage_dims[s];
    const std::string sp = "s" + std::to_string(s) + ".";
    for (int b = 0; b < cfg_.stage_pgn[s]; ++b) {
      PgnBlockParams blk;
      const std::string bp = sp + "b" + std::to_string(b) + ".";
      blk.norm1.gain = reg(bp + "norm1.g", 1, dim, InitRule{InitRule::Ones, 0.0});
      blk.norm1.bias = reg(bp + "norm1.b", 1, dim, InitRule{InitRule::Zeros, 0.0});
      blk.lin_in = reg(bp + "lin_in", dim, dim, normal(xavier_sigma(dim, dim)));
      blk.update = reg(bp + "update", 2 * dim, dim, normal(xavier_sigma(2 * dim, dim)));
      blk.lin_out = reg(bp + "lin_out", dim, dim, normal(xavier_sigma(dim, dim)));
      blk.norm2.gain = reg(bp + "norm2.g", 1, dim, InitRule{InitRule::Ones, 0.0});
      blk.norm2.bias = reg(bp + "norm2.b", 1, dim, InitRule{InitRule::Zeros, 0.0});
      const int hidden = dim * cfg_.ffn_ratio;
      blk.ffn_hidden = reg(bp + "ffn1", dim, hidden, normal(xavier_sigma(dim, hidden)));
      blk.ffn_out = reg(bp + "ffn2", hidden, dim, normal(xavier_sigma(hidden, dim)));
      stage.pgn.push_back(blk);
    }
    if (cfg_.stage_mlg[s] > 0) {
      stage.labels = reg(sp + "labels", classes, dim, normal(0.02));
      for (int b = 0; b < cfg_.stage_mlg[s]; ++b) {
        MlgBlockParams blk;
        const std::string bp = sp + "mlg" + std::to_string(b) + ".";
        blk.label_update = reg(bp + "update", 2 * dim, dim, normal(xavier_sigma(2 * dim, dim)));
        blk.adjacency = reg(bp + "adj", classes, classes, normal(0.01));
        stage.mlg.push_back(blk);
      }
    }
    if (cfg_.variant == Variant::Pyramid) {
      Tensor enc = grid_position_encoding(grid_h, grid_w, cfg_.pos_dim);
      stage.rel_bias = relative_bias(enc);
      if (cfg_.rel_bias_sign < 0)
        for (std::size_t i = 0; i < stage.rel_bias.size(); ++i)
          stage.rel_bias.data()[i] = -stage.rel_bias.data()[i];
    }
    if (s + 1 < s_count) {
      stage.has_down = true;
      stage.down.in_ch = dim;
      stage.down.out_ch = cfg_.stage_dims[s + 1];
      const int patch = dim * stage.down.kernel * stage.down.kernel;
      stage.down.w = reg(sp + "down.w", stage.down.out_ch, patch,
                         normal(xavier_sigma(patch, stage.down.out_ch * 9)));
      stage.down.b = reg(sp + "down.b", 1, stage.down.out_ch, InitRule{InitRule::Zeros, 0.0});
      grid_h /= 2;
      grid_w /= 2;
    }
    stages_.push_back(std::move(stage));
  }

  const int head_dim = cfg_.head_dim();
  const int hidden = 2 * head_dim;
  head_.fc1_w = reg("head.fc1.w", head_dim, hidden, normal(xavier_sigma(head_dim, hidden)));
  head_.fc1_b = reg("head.fc1.b", 1, hidden, InitRule{InitRule::Zeros, 0.0});
  head_.fc2_w = reg("head.fc2.w", hidden, classes, normal(xavier_sigma(hidden, classes)));
  head_.fc2_b = reg("head.fc2.b", 1, classes, InitRule{InitRule::Zeros, 0.0});
  bool any_mlg = false;
  for (int p : cfg_.stage_mlg) any_mlg = any_mlg || p > 0;
  if (any_mlg)
    head_.readout = reg("head.readout", classes, head_dim, normal(xavier_sigma(classes, head_dim)));
}

void Network::init_params(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x494E4954ULL));
  for (int i = 0; i < store_.count(); ++i) {
    Parameter& p = store_.at(i);
    const InitRule& rule = init_rules_[i];
    switch (rule.kind) {
      case InitRule::Zeros: p.value.fill(0.0); break;
      case InitRule::Ones: p.value.fill(1.0); break;
      case InitRule::Normal:
        for (std::size_t j = 0; j < p.value.size(); ++j)
          p.value.data()[j] = rng.normal(0.0, rule.sigma);
        break;
    }
    p.grad.fill(0.0);
  }
}

int Network::k_at(int block_index) const {
  return schedule_k(cfg_.base_k, block_index, cfg_.total_pgn_blocks());
}

int Network::dilation_at(int block_index, int stage) const {
  if (cfg_.variant == Variant::Pyramid) return cfg_.stage_dilation[stage];
  return schedule_dilation(cfg_.dilation_max, block_index, cfg_.total_pgn_blocks());
}

namespace {

FeatureGraph plan_patch_graph(GraphPlan* plan, std::size_t& cursor, const Tensor& feats, int k,
                              int d, const Tensor* bias) {
  if (plan && plan->frozen) {
    if (cursor >= plan->patch.size()) throw DomainError("graph plan exhausted");
    return plan->patch[cursor++];
  }
  FeatureGraph g = dilated_knn_graph(feats, k, d, bias);
  if (plan) plan->patch.push_back(g);
  ++cursor;
  return g;
}

AdjLists plan_label_adj(GraphPlan* plan, std::size_t& cursor, const Tensor& labels,
                        const Tensor& patches, int k) {
  if (plan && plan->frozen) {
    if (cursor >= plan->label.size()) throw DomainError("label graph plan exhausted");
    return plan->label[cursor++];
  }
  AdjLists adj = nearest_keys(labels, patches, k);
  if (plan) plan->label.push_back(adj);
  ++cursor;
  return adj;
}

}  // namespace

Network::Output Network::forward(Tape& t, const Tensor& input, GraphPlan* plan) {
  if (input.rows() != cfg_.input_freq || input.cols() != cfg_.input_time)
    throw ShapeError("forward: input " + shape_str(input) + " does not match configured " +
                     shape_str(cfg_.input_freq, cfg_.input_time) + " (dims must be multiples of " +
                     std::to_string(cfg_.total_reduction()) + ")");

  Output out;
  std::size_t patch_cursor = 0, label_cursor = 0;

  // Stem.
  Tensor flat(1, input.rows() * input.cols());
  for (std::size_t i = 0; i < input.size(); ++i) flat.data()[i] = input.data()[i];
  Var x = t.constant(std::move(flat));
  int h = cfg_.input_freq, w = cfg_.input_time;
  for (const ConvLayer& layer : stem_) {
    ConvSpec spec{layer.in_ch, layer.out_ch, h, w, layer.kernel, layer.stride, layer.pad};
    x = t.gelu(t.conv2d(x, t.param(*layer.w), t.param(*layer.b), spec));
    h = spec.out_h();
    w = spec.out_w();
  }
  Var nodes = t.transpose(x);  // [N x D], frequency-major node order
  nodes = t.add(nodes, t.param(*pos_embed_));
  out.stem_nodes = nodes;

  Var labels_out;
  int block_index = 0;
  for (int s = 0; s < int(stages_.size()); ++s) {
    const StageParams& stage = stages_[s];
    for (const PgnBlockParams& blk : stage.pgn) {
      const Tensor* bias = stage.rel_bias.empty() ? nullptr : &stage.rel_bias;
      const int k = k_at(block_index);
      const int d = dilation_at(block_index, s);
      nodes = pgn_block(t, nodes, blk, [&](const Tensor& feats) {
        return plan_patch_graph(plan, patch_cursor, feats, k, d, bias);
      });
      ++block_index;
    }
    if (stage.labels != nullptr) {
      Var labels = t.param(*stage.labels);
      for (const MlgBlockParams& blk : stage.mlg) {
        AdjLists adj =
            plan_label_adj(plan, label_cursor, t.value(labels), t.value(nodes), cfg_.k_plg);
        labels = plg_block(t, labels, nodes, *blk.label_update, adj, cfg_.plg_label_minus_patch);
        labels = llg_block(t, labels, *blk.adjacency);
      }
      labels_out = labels;
    }
    if (stage.has_down) {
      if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("downsample: grid " + shape_str(h, w) + " must have even dims");
      Var chan = t.transpose(nodes);
      ConvSpec spec{stage.down.in_ch, stage.down.out_ch, h, w, stage.down.kernel,
                    stage.down.stride, stage.down.pad};
      chan = t.conv2d(chan, t.param(*stage.down.w), t.param(*stage.down.b), spec);
      h = spec.out_h();
      w = spec.out_w();
      nodes = t.transpose(chan);
    }
  }
  out.final_nodes = nodes;

  out.patch_logits = patch_logits_head(t, nodes, head_);
  if (labels_out.valid() && head_.readout != nullptr) {
    out.final_labels = labels_out;
    out.label_logits = label_logits_head(t, labels_out, *head_.readout);
  } else {
    out.label_logits = t.constant(Tensor(1, cfg_.classes));
  }
  out.logits = t.add(out.patch_logits, out.label_logits);
  out.probs = t.sigmoid(out.logits);
  return out;
}

Var Network::loss(Tape& t, const Output& out, const Tensor& targets) const {
  return t.bce_with_logits(out.logits, targets);
}

double Network::loss_value(const Tensor& input, const Tensor& targets, GraphPlan* plan,
                           bool grad) {
  Tape tape(grad);
  Output out = forward(tape, input, plan);
  Var l = loss(tape, out, targets);
  if (grad) {
    tape.backward(l);
    tape.add_param_grads(1.0);
  }
  return tape.value(l).at(0, 0);
}

Tensor Network::predict(const Tensor& input) {
  Tape tape(false);
  Output out = forward(tape, input, nullptr);
  return tape.value(out.probs);
}

}  // namespace atgnn
