#include "atgnn/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <tuple>

namespace atgnn {

Parameter& ParamStore::create(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(rows, cols);
  p->grad = Tensor(rows, cols);
  index_[name] = int(items_.size());
  items_.push_back(std::move(p));
  return *items_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

void ParamStore::zero_grads() {
  for (auto& p : items_) p->grad.fill(0.0);
}

std::vector<Parameter*> ParamStore::pointers() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value.size();
  return n;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

void Tape::check(Var v, const char* op) const {
  if (!v.valid() || v.id >= int(nodes_.size()))
    throw DomainError(std::string(op) + ": invalid tape handle");
}

Var Tape::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  check(v, "grad");
  return nodes_[v.id].grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, true);
  nodes_[v.id].param = &p;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(av) + " vs " + shape_str(bv));
  Tensor out;
  gemm_nn(av, bv, out);
  Var r = push(std::move(out), rg(a) || rg(b));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [a, b, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      if (t.rg(a)) gemm_nt(g, t.nodes_[b.id].value, t.grad_buf(a.id), true);
      if (t.rg(b)) gemm_tn(t.nodes_[a.id].value, g, t.grad_buf(b.id), true);
    };
  }
  return r;
}

Var Tape::transpose(Var x) {
  check(x, "transpose");
  const Tensor& xv = nodes_[x.id].value;
  Tensor out(xv.cols(), xv.rows());
  for (int i = 0; i < xv.rows(); ++i)
    for (int j = 0; j < xv.cols(); ++j) out.at(j, i) = xv.at(i, j);
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gx.at(j, i) += g.at(i, j);
    };
  }
  return r;
}

Var Tape::reshape(Var x, int rows, int cols) {
  check(x, "reshape");
  const Tensor& xv = nodes_[x.id].value;
  if (std::size_t(rows) * std::size_t(cols) != xv.size())
    throw ShapeError("reshape: element count mismatch " + shape_str(xv) + " -> " +
                     shape_str(rows, cols));
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = xv.data()[i];
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i];
    };
  }
  return r;
}

namespace {

enum class BinKind { Add, Sub, Mul };

}  // namespace

// Shared implementation for add/sub/mul with scalar-with-array broadcast.
struct TapeOps {
  static Var binary(Tape& t, Var a, Var b, BinKind kind, const char* name) {
    t.check(a, name);
    t.check(b, name);
    const Tensor& av = t.nodes_[a.id].value;
    const Tensor& bv = t.nodes_[b.id].value;
    const bool a_scalar = av.is_scalar();
    const bool b_scalar = bv.is_scalar();
    if (!av.same_shape(bv) && !a_scalar && !b_scalar)
      throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(av) + " vs " +
                       shape_str(bv));

    const Tensor& big = a_scalar && !b_scalar ? bv : av;
    Tensor out(big.rows(), big.cols());
    const std::size_t n = out.size();
    auto lhs = [&](std::size_t i) { return a_scalar ? av.data()[0] : av.data()[i]; };
    auto rhs = [&](std::size_t i) { return b_scalar ? bv.data()[0] : bv.data()[i]; };
    for (std::size_t i = 0; i < n; ++i) {
      switch (kind) {
        case BinKind::Add: out.data()[i] = lhs(i) + rhs(i); break;
        case BinKind::Sub: out.data()[i] = lhs(i) - rhs(i); break;
        case BinKind::Mul: out.data()[i] = lhs(i) * rhs(i); break;
      }
    }
    Var r = t.push(std::move(out), t.rg(a) || t.rg(b));
    if (t.nodes_[r.id].requires_grad) {
      t.nodes_[r.id].pull = [a, b, r, kind, a_scalar, b_scalar](Tape& tt) {
        const Tensor& g = tt.nodes_[r.id].grad;
        const Tensor& av2 = tt.nodes_[a.id].value;
        const Tensor& bv2 = tt.nodes_[b.id].value;
        const std::size_t n2 = g.size();
        if (tt.rg(a)) {
          Tensor& ga = tt.grad_buf(a.id);
          for (std::size_t i = 0; i < n2; ++i) {
            double d = g.data()[i];
            if (kind == BinKind::Mul) d *= b_scalar ? bv2.data()[0] : bv2.data()[i];
            ga.data()[a_scalar ? 0 : i] += d;
          }
        }
        if (tt.rg(b)) {
          Tensor& gb = tt.grad_buf(b.id);
          for (std::size_t i = 0; i < n2; ++i) {
            double d = g.data()[i];
            if (kind == BinKind::Sub) d = -d;
            if (kind == BinKind::Mul) d = g.data()[i] * (a_scalar ? av2.data()[0] : av2.data()[i]);
            gb.data()[b_scalar ? 0 : i] += d;
          }
        }
      };
    }
    return r;
  }

  static Var unary(Tape& t, Var x, const char* name, double (*fwd)(double),
                   double (*dfn)(double)) {
    t.check(x, name);
    const Tensor& xv = t.nodes_[x.id].value;
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = fwd(xv.data()[i]);
    Var r = t.push(std::move(out), t.rg(x));
    if (t.nodes_[r.id].requires_grad) {
      t.nodes_[r.id].pull = [x, r, dfn](Tape& tt) {
        const Tensor& g = tt.nodes_[r.id].grad;
        const Tensor& xv2 = tt.nodes_[x.id].value;
        Tensor& gx = tt.grad_buf(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * dfn(xv2.data()[i]);
      };
    }
    return r;
  }
};

Var Tape::add(Var a, Var b) { return TapeOps::binary(*this, a, b, BinKind::Add, "add"); }
Var Tape::sub(Var a, Var b) { return TapeOps::binary(*this, a, b, BinKind::Sub, "sub"); }
Var Tape::mul(Var a, Var b) { return TapeOps::binary(*this, a, b, BinKind::Mul, "mul"); }

Var Tape::scale(Var x, double c) {
  check(x, "scale");
  const Tensor& xv = nodes_[x.id].value;
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = c * xv.data()[i];
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r, c](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += c * g.data()[i];
    };
  }
  return r;
}

namespace {
double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double relu_fwd(double x) { return x > 0.0 ? x : 0.0; }
double relu_der(double x) { return x > 0.0 ? 1.0 : 0.0; }
double sigmoid_der(double x) {
  const double s = sigmoid_scalar(x);
  return s * (1.0 - s);
}
}  // namespace

Var Tape::sigmoid(Var x) { return TapeOps::unary(*this, x, "sigmoid", sigmoid_scalar, sigmoid_der); }
Var Tape::relu(Var x) { return TapeOps::unary(*this, x, "relu", relu_fwd, relu_der); }
Var Tape::gelu(Var x) { return TapeOps::unary(*this, x, "gelu", gelu_value, gelu_derivative); }

Var Tape::add_rowvec(Var a, Var v) {
  check(a, "add_rowvec");
  check(v, "add_rowvec");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& vv = nodes_[v.id].value;
  if (vv.rows() != 1 || vv.cols() != av.cols())
    throw ShapeError("add_rowvec: expected [1x" + std::to_string(av.cols()) + "], got " +
                     shape_str(vv));
  Tensor out(av.rows(), av.cols());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + vv.at(0, j);
  Var r = push(std::move(out), rg(a) || rg(v));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [a, v, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      if (t.rg(a)) t.grad_buf(a.id).add_scaled(g, 1.0);
      if (t.rg(v)) {
        Tensor& gv = t.grad_buf(v.id);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gv.at(0, j) += g.at(i, j);
      }
    };
  }
  return r;
}

Var Tape::mul_rowvec(Var a, Var v) {
  check(a, "mul_rowvec");
  check(v, "mul_rowvec");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& vv = nodes_[v.id].value;
  if (vv.rows() != 1 || vv.cols() != av.cols())
    throw ShapeError("mul_rowvec: expected [1x" + std::to_string(av.cols()) + "], got " +
                     shape_str(vv));
  Tensor out(av.rows(), av.cols());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) * vv.at(0, j);
  Var r = push(std::move(out), rg(a) || rg(v));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [a, v, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      const Tensor& av2 = t.nodes_[a.id].value;
      const Tensor& vv2 = t.nodes_[v.id].value;
      if (t.rg(a)) {
        Tensor& ga = t.grad_buf(a.id);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) ga.at(i, j) += g.at(i, j) * vv2.at(0, j);
      }
      if (t.rg(v)) {
        Tensor& gv = t.grad_buf(v.id);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gv.at(0, j) += g.at(i, j) * av2.at(i, j);
      }
    };
  }
  return r;
}

Var Tape::row_norm(Var x, double eps) {
  check(x, "row_norm");
  const Tensor& xv = nodes_[x.id].value;
  const int n = xv.rows(), d = xv.cols();
  if (d == 0) throw DomainError("row_norm: empty rows");
  Tensor out(n, d);
  Tensor inv_std(n, 1);
  for (int i = 0; i < n; ++i) {
    const double* row = xv.row(i);
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(i, 0) = is;
    for (int j = 0; j < d; ++j) out.at(i, j) = (row[j] - mu) * is;
  }
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r, inv_std = std::move(inv_std)](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      const Tensor& y = t.nodes_[r.id].value;
      Tensor& gx = t.grad_buf(x.id);
      const int n2 = g.rows(), d2 = g.cols();
      for (int i = 0; i < n2; ++i) {
        double gmean = 0.0, gymean = 0.0;
        for (int j = 0; j < d2; ++j) {
          gmean += g.at(i, j);
          gymean += g.at(i, j) * y.at(i, j);
        }
        gmean /= d2;
        gymean /= d2;
        const double is = inv_std.at(i, 0);
        for (int j = 0; j < d2; ++j)
          gx.at(i, j) += is * (g.at(i, j) - gmean - y.at(i, j) * gymean);
      }
    };
  }
  return r;
}

Var Tape::mean_rows(Var x) {
  check(x, "mean_rows");
  const Tensor& xv = nodes_[x.id].value;
  if (xv.empty()) throw DomainError("mean_rows: empty input");
  const int n = xv.rows(), d = xv.cols();
  Tensor out(1, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(0, j) += xv.at(i, j);
  for (int j = 0; j < d; ++j) out.at(0, j) /= n;
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r, n](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < gx.rows(); ++i)
        for (int j = 0; j < gx.cols(); ++j) gx.at(i, j) += g.at(0, j) / n;
    };
  }
  return r;
}

Var Tape::sum_all(Var x) {
  check(x, "sum_all");
  const Tensor& xv = nodes_[x.id].value;
  if (xv.empty()) throw DomainError("sum_all: empty input");
  Tensor out(1, 1);
  out.at(0, 0) = xv.sum();
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r](Tape& t) {
      const double g = t.nodes_[r.id].grad.at(0, 0);
      Tensor& gx = t.grad_buf(x.id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] += g;
    };
  }
  return r;
}

Var Tape::concat_cols(Var a, Var b) {
  check(a, "concat_cols");
  check(b, "concat_cols");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (av.rows() != bv.rows())
    throw ShapeError("concat_cols: row counts disagree " + shape_str(av) + " vs " + shape_str(bv));
  if (av.empty() && bv.empty()) throw DomainError("concat_cols: empty input");
  const int n = av.rows(), da = av.cols(), db = bv.cols();
  Tensor out(n, da + db);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < da; ++j) out.at(i, j) = av.at(i, j);
    for (int j = 0; j < db; ++j) out.at(i, da + j) = bv.at(i, j);
  }
  Var r = push(std::move(out), rg(a) || rg(b));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [a, b, r, da, db](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      if (t.rg(a)) {
        Tensor& ga = t.grad_buf(a.id);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < da; ++j) ga.at(i, j) += g.at(i, j);
      }
      if (t.rg(b)) {
        Tensor& gb = t.grad_buf(b.id);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < db; ++j) gb.at(i, j) += g.at(i, da + j);
      }
    };
  }
  return r;
}

Var Tape::slice_cols(Var x, int c0, int c1) {
  check(x, "slice_cols");
  const Tensor& xv = nodes_[x.id].value;
  if (c0 < 0 || c1 > xv.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for " + shape_str(xv));
  Tensor out(xv.rows(), c1 - c0);
  for (int i = 0; i < xv.rows(); ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = xv.at(i, j);
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r, c0](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gx.at(i, c0 + j) += g.at(i, j);
    };
  }
  return r;
}

Var Tape::rows_dot(Var a, Var b) {
  check(a, "rows_dot");
  check(b, "rows_dot");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  require_same_shape(av, bv, "rows_dot");
  const int s = av.rows(), c = av.cols();
  Tensor out(1, s);
  for (int i = 0; i < s; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += av.at(i, j) * bv.at(i, j);
    out.at(0, i) = acc;
  }
  Var r = push(std::move(out), rg(a) || rg(b));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [a, b, r](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      const Tensor& av2 = t.nodes_[a.id].value;
      const Tensor& bv2 = t.nodes_[b.id].value;
      for (int i = 0; i < av2.rows(); ++i) {
        const double gi = g.at(0, i);
        if (t.rg(a)) {
          Tensor& ga = t.grad_buf(a.id);
          for (int j = 0; j < av2.cols(); ++j) ga.at(i, j) += gi * bv2.at(i, j);
        }
        if (t.rg(b)) {
          Tensor& gb = t.grad_buf(b.id);
          for (int j = 0; j < av2.cols(); ++j) gb.at(i, j) += gi * av2.at(i, j);
        }
      }
    };
  }
  return r;
}

namespace {

void validate_adj(const AdjLists& adj, int limit, const char* op) {
  for (const auto& list : adj)
    for (int j : list)
      if (j < 0 || j >= limit)
        throw TopologyError(std::string(op) + ": neighbor index " + std::to_string(j) +
                            " out of range [0," + std::to_string(limit) + ")");
}

}  // namespace

Var Tape::max_rel(Var x, const AdjLists& adj) {
  check(x, "max_rel");
  const Tensor& xv = nodes_[x.id].value;
  const int n = xv.rows(), d = xv.cols();
  if (int(adj.size()) != n)
    throw TopologyError("max_rel: adjacency size " + std::to_string(adj.size()) +
                        " does not match node count " + std::to_string(n));
  validate_adj(adj, n, "max_rel");
  Tensor out(n, d);
  const bool want_grad = grad_enabled_ && rg(x);
  std::vector<std::int32_t> argmax;
  if (want_grad) argmax.assign(std::size_t(n) * d, -1);
  for (int i = 0; i < n; ++i) {
    if (adj[i].empty()) continue;  // isolated node: zero row
    const double* xi = xv.row(i);
    for (int c = 0; c < d; ++c) {
      double best = 0.0;
      int best_j = -1;
      for (int j : adj[i]) {
        const double diff = xv.at(j, c) - xi[c];
        if (best_j < 0 || diff > best || (diff == best && j < best_j)) {
          best = diff;
          best_j = j;
        }
      }
      out.at(i, c) = best;
      if (want_grad) argmax[std::size_t(i) * d + c] = best_j;
    }
  }
  Var r = push(std::move(out), rg(x));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, r, d, argmax = std::move(argmax)](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < d; ++c) {
          const int j = argmax[std::size_t(i) * d + c];
          if (j < 0) continue;
          const double gv = g.at(i, c);
          gx.at(j, c) += gv;
          gx.at(i, c) -= gv;
        }
    };
  }
  return r;
}

Var Tape::max_rel_cross(Var q, Var kv, const AdjLists& adj, bool query_minus_key) {
  check(q, "max_rel_cross");
  check(kv, "max_rel_cross");
  const Tensor& qv = nodes_[q.id].value;
  const Tensor& kvv = nodes_[kv.id].value;
  if (qv.cols() != kvv.cols())
    throw ShapeError("max_rel_cross: feature dims disagree " + shape_str(qv) + " vs " +
                     shape_str(kvv));
  const int s = qv.rows(), d = qv.cols();
  if (int(adj.size()) != s)
    throw TopologyError("max_rel_cross: adjacency size does not match query count");
  validate_adj(adj, kvv.rows(), "max_rel_cross");
  Tensor out(s, d);
  const bool want_grad = grad_enabled_ && (rg(q) || rg(kv));
  std::vector<std::int32_t> argmax;
  if (want_grad) argmax.assign(std::size_t(s) * d, -1);
  const double sign = query_minus_key ? 1.0 : -1.0;
  for (int i = 0; i < s; ++i) {
    if (adj[i].empty()) continue;
    for (int c = 0; c < d; ++c) {
      double best = 0.0;
      int best_j = -1;
      for (int j : adj[i]) {
        const double diff = sign * (qv.at(i, c) - kvv.at(j, c));
        if (best_j < 0 || diff > best || (diff == best && j < best_j)) {
          best = diff;
          best_j = j;
        }
      }
      out.at(i, c) = best;
      if (want_grad) argmax[std::size_t(i) * d + c] = best_j;
    }
  }
  Var r = push(std::move(out), rg(q) || rg(kv));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [q, kv, r, d, sign, argmax = std::move(argmax)](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < d; ++c) {
          const int j = argmax[std::size_t(i) * d + c];
          if (j < 0) continue;
          const double gv = g.at(i, c);
          if (t.rg(q)) t.grad_buf(q.id).at(i, c) += sign * gv;
          if (t.rg(kv)) t.grad_buf(kv.id).at(j, c) -= sign * gv;
        }
    };
  }
  return r;
}

namespace {

// Gather map for unrolling conv patches: for each (in_ch*k*k, out_h*out_w)
// cell, the source index into the [in_ch x H*W] input, or -1 for padding.
// Cached per geometry; building it is pure arithmetic.
const std::vector<std::int32_t>& conv_index_map(const ConvSpec& s) {
  using Key = std::tuple<int, int, int, int, int, int>;
  static std::map<Key, std::vector<std::int32_t>> cache;
  static std::mutex mu;
  const Key key{s.in_ch, s.height, s.width, s.kernel, s.stride, s.pad};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const int oh = s.out_h(), ow = s.out_w();
  std::vector<std::int32_t> map(std::size_t(s.in_ch) * s.kernel * s.kernel * oh * ow, -1);
  std::size_t idx = 0;
  for (int c = 0; c < s.in_ch; ++c)
    for (int ky = 0; ky < s.kernel; ++ky)
      for (int kx = 0; kx < s.kernel; ++kx)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const int iy = oy * s.stride + ky - s.pad;
            const int ix = ox * s.stride + kx - s.pad;
            if (iy >= 0 && iy < s.height && ix >= 0 && ix < s.width)
              map[idx] = c * s.height * s.width + iy * s.width + ix;
            ++idx;
          }
  return cache.emplace(key, std::move(map)).first->second;
}

}  // namespace

Var Tape::conv2d(Var x, Var w, Var bias, const ConvSpec& spec) {
  check(x, "conv2d");
  check(w, "conv2d");
  check(bias, "conv2d");
  const Tensor& xv = nodes_[x.id].value;
  const Tensor& wv = nodes_[w.id].value;
  const Tensor& bv = nodes_[bias.id].value;
  const int patch = spec.in_ch * spec.kernel * spec.kernel;
  if (xv.rows() != spec.in_ch || xv.cols() != spec.height * spec.width)
    throw ShapeError("conv2d: input " + shape_str(xv) + " does not match spec " +
                     shape_str(spec.in_ch, spec.height * spec.width));
  if (wv.rows() != spec.out_ch || wv.cols() != patch)
    throw ShapeError("conv2d: weight " + shape_str(wv) + " expected " +
                     shape_str(spec.out_ch, patch));
  if (bv.rows() != 1 || bv.cols() != spec.out_ch)
    throw ShapeError("conv2d: bias " + shape_str(bv) + " expected " + shape_str(1, spec.out_ch));
  const int oh = spec.out_h(), ow = spec.out_w();
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv2d: non-positive output size for input " +
                     shape_str(spec.height, spec.width));

  const auto& map = conv_index_map(spec);
  const int cols_n = oh * ow;
  Tensor patches(patch, cols_n);
  for (int r2 = 0; r2 < patch; ++r2) {
    double* dst = patches.row(r2);
    const std::int32_t* src_idx = map.data() + std::size_t(r2) * cols_n;
    const double* src = xv.data();
    for (int c = 0; c < cols_n; ++c) dst[c] = src_idx[c] >= 0 ? src[src_idx[c]] : 0.0;
  }
  Tensor out;
  gemm_nn(wv, patches, out);
  for (int oc = 0; oc < spec.out_ch; ++oc) {
    double* row = out.row(oc);
    const double b = bv.at(0, oc);
    for (int c = 0; c < cols_n; ++c) row[c] += b;
  }

  Var r = push(std::move(out), rg(x) || rg(w) || rg(bias));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [x, w, bias, r, spec, patches = std::move(patches)](Tape& t) {
      const Tensor& g = t.nodes_[r.id].grad;
      const auto& map2 = conv_index_map(spec);
      const int cols2 = spec.out_h() * spec.out_w();
      if (t.rg(w)) gemm_nt(g, patches, t.grad_buf(w.id), true);
      if (t.rg(bias)) {
        Tensor& gb = t.grad_buf(bias.id);
        for (int oc = 0; oc < spec.out_ch; ++oc) {
          double acc = 0.0;
          const double* row = g.row(oc);
          for (int c = 0; c < cols2; ++c) acc += row[c];
          gb.at(0, oc) += acc;
        }
      }
      if (t.rg(x)) {
        Tensor dpatches;
        gemm_tn(t.nodes_[w.id].value, g, dpatches, false);
        Tensor& gx = t.grad_buf(x.id);
        double* dst = gx.data();
        for (int r2 = 0; r2 < dpatches.rows(); ++r2) {
          const double* src = dpatches.row(r2);
          const std::int32_t* src_idx = map2.data() + std::size_t(r2) * cols2;
          for (int c = 0; c < cols2; ++c)
            if (src_idx[c] >= 0) dst[src_idx[c]] += src[c];
        }
      }
    };
  }
  return r;
}

Var Tape::bce_with_logits(Var logits, const Tensor& targets) {
  check(logits, "bce_with_logits");
  const Tensor& zv = nodes_[logits.id].value;
  require_same_shape(zv, targets, "bce_with_logits");
  if (zv.empty()) throw DomainError("bce_with_logits: empty input");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double tv = targets.data()[i];
    if (!(tv >= 0.0 && tv <= 1.0))
      throw DomainError("bce_with_logits: target outside [0,1]");
  }
  const double inv_s = 1.0 / double(zv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv.data()[i];
    const double tv = targets.data()[i];
    loss += std::max(z, 0.0) - z * tv + std::log1p(std::exp(-std::fabs(z)));
  }
  loss *= inv_s;
  if (!std::isfinite(loss)) throw NumericError("bce_with_logits: non-finite loss");
  Tensor out(1, 1);
  out.at(0, 0) = loss;
  Var r = push(std::move(out), rg(logits));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].pull = [logits, r, targets, inv_s](Tape& t) {
      const double g = t.nodes_[r.id].grad.at(0, 0);
      const Tensor& zv2 = t.nodes_[logits.id].value;
      Tensor& gz = t.grad_buf(logits.id);
      for (std::size_t i = 0; i < zv2.size(); ++i)
        gz.data()[i] += g * inv_s * (sigmoid_scalar(zv2.data()[i]) - targets.data()[i]);
    };
  }
  return r;
}

void Tape::backward(Var root) {
  check(root, "backward");
  if (!grad_enabled_) throw DomainError("backward: tape was built without gradients");
  const Tensor& rv = nodes_[root.id].value;
  if (!rv.is_scalar())
    throw ShapeError("backward: root must be scalar, got " + shape_str(rv));
  grad_buf(root.id).at(0, 0) = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.pull) continue;
    n.pull(*this);
  }
}

void Tape::add_param_grads(double scale) {
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    n.param->grad.add_scaled(n.grad, scale);
  }
}

double check_gradient(std::span<Parameter* const> params,
                      const std::function<double(bool)>& loss, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw DomainError("check_gradient: eps must be in (0, 1e-2]");
  for (Parameter* p : params) p->grad.fill(0.0);
  const double base = loss(true);
  if (!std::isfinite(base)) throw NumericError("check_gradient: non-finite forward value");
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + eps;
      const double fp = loss(false);
      p->value.data()[i] = orig - eps;
      const double fm = loss(false);
      p->value.data()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("check_gradient: non-finite forward value at " + p->name);
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel =
          std::fabs(analytic[pi].data()[i] - numeric) / std::max(1.0, std::fabs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace atgnn
