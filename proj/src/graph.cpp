#include "atgnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace atgnn {

Tensor pairwise_sq_dist(const Tensor& nodes) {
  const int n = nodes.rows(), d = nodes.cols();
  if (n < 1) throw DomainError("pairwise_sq_dist: need at least one node");
  Tensor out(n, n);
  for (int i = 0; i < n; ++i) {
    const double* xi = nodes.row(i);
    for (int j = i + 1; j < n; ++j) {
      const double* xj = nodes.row(j);
      double acc = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff = xi[c] - xj[c];
        acc += diff * diff;
      }
      out.at(i, j) = acc;
      out.at(j, i) = acc;
    }
  }
  return out;
}

namespace {

// Sorted (distance, index) candidates of node i, self excluded, ties by index.
std::vector<std::pair<double, int>> ranked_candidates(const Tensor& dist, const Tensor* bias,
                                                      int i) {
  const int n = dist.rows();
  std::vector<std::pair<double, int>> cand;
  cand.reserve(n - 1);
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    double v = dist.at(i, j);
    if (bias) v += bias->at(i, j);
    cand.emplace_back(v, j);
  }
  std::sort(cand.begin(), cand.end());
  return cand;
}

void check_bias(const Tensor* bias, int n) {
  if (bias && (bias->rows() != n || bias->cols() != n))
    throw ShapeError("knn bias must be " + shape_str(n, n) + ", got " + shape_str(*bias));
}

}  // namespace

FeatureGraph knn_graph(const Tensor& nodes, int k, const Tensor* bias) {
  return dilated_knn_graph(nodes, k, 1, bias);
}

FeatureGraph dilated_knn_graph(const Tensor& nodes, int k, int d, const Tensor* bias) {
  if (k < 1) throw DomainError("dilated_knn_graph: k must be >= 1");
  if (d < 1) throw DomainError("dilated_knn_graph: dilation must be >= 1");
  const int n = nodes.rows();
  check_bias(bias, n);
  const Tensor dist = pairwise_sq_dist(nodes);

  FeatureGraph g;
  g.node_count = n;
  g.k = k;
  g.dilation = d;
  g.neighbors.resize(n);

  const int kk = std::min(k, n - 1);
  if (kk <= 0) return g;  // single node: every list stays empty
  const int pool = std::min(k * d, n - 1);
  const int stride = kk > 1 ? std::min(d, (pool - 1) / (kk - 1)) : d;

  for (int i = 0; i < n; ++i) {
    const auto cand = ranked_candidates(dist, bias, i);
    auto& list = g.neighbors[i];
    list.reserve(kk);
    for (int m = 0; m < kk; ++m) list.push_back(cand[std::size_t(m) * stride].second);
  }
  return g;
}

Tensor relative_bias(const Tensor& rel) {
  if (!rel.all_finite()) throw DomainError("relative_bias: encodings must be finite");
  const int n = rel.rows(), d = rel.cols();
  Tensor out(n, n);
  for (int i = 0; i < n; ++i) {
    const double* ei = rel.row(i);
    for (int j = 0; j < n; ++j) {
      const double* ej = rel.row(j);
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += ei[c] * ej[c];
      out.at(i, j) = acc;
    }
  }
  return out;
}

std::vector<std::vector<int>> nearest_keys(const Tensor& queries, const Tensor& keys, int k) {
  if (k < 1) throw DomainError("nearest_keys: k must be >= 1");
  if (queries.cols() != keys.cols())
    throw ShapeError("nearest_keys: feature dims disagree " + shape_str(queries) + " vs " +
                     shape_str(keys));
  const int nq = queries.rows(), nk = keys.rows(), d = queries.cols();
  const int kk = std::min(k, nk);
  std::vector<std::vector<int>> out(nq);
  std::vector<std::pair<double, int>> cand(nk);
  for (int i = 0; i < nq; ++i) {
    const double* qi = queries.row(i);
    for (int j = 0; j < nk; ++j) {
      const double* kj = keys.row(j);
      double acc = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff = qi[c] - kj[c];
        acc += diff * diff;
      }
      cand[j] = {acc, j};
    }
    std::sort(cand.begin(), cand.end());
    out[i].reserve(kk);
    for (int m = 0; m < kk; ++m) out[i].push_back(cand[m].second);
  }
  return out;
}

std::string format_graph(const FeatureGraph& g) {
  std::ostringstream os;
  for (int i = 0; i < g.node_count; ++i) {
    os << i << ":";
    for (int j : g.neighbors[i]) os << " " << j;
    os << "\n";
  }
  return os.str();
}

}  // namespace atgnn
