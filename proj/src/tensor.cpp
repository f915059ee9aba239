#include "atgnn/tensor.hpp"

#include <cmath>
#include <cstring>

namespace atgnn {

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw ShapeError("tensor dimensions must be non-negative");
  data_.assign(std::size_t(rows) * std::size_t(cols), 0.0);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = int(rows.size());
  const int c = r > 0 ? int(rows.begin()->size()) : 0;
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (int(row.size()) != c) throw ShapeError("ragged initializer rows");
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::filled(int rows, int cols, double value) {
  Tensor t(rows, cols);
  t.fill(value);
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& o, double scale) {
  require_same_shape(*this, o, "add_scaled");
  const double* src = o.data();
  double* dst = data();
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += scale * src[i];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::mean() const {
  if (data_.empty()) throw DomainError("mean of empty tensor");
  return sum() / double(data_.size());
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

double Tensor::max_abs_diff(const Tensor& o) const {
  require_same_shape(*this, o, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < size(); ++i) m = std::max(m, std::fabs(data_[i] - o.data_[i]));
  return m;
}

bool Tensor::operator==(const Tensor& o) const {
  if (!same_shape(o)) return false;
  return std::memcmp(data_.data(), o.data_.data(), size() * sizeof(double)) == 0;
}

std::string shape_str(int rows, int cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

std::string shape_str(const Tensor& t) { return shape_str(t.rows(), t.cols()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a) + " vs " + shape_str(b));
  if (out.rows() != a.rows() || out.cols() != b.cols()) out = Tensor(a.rows(), b.cols());
  if (!accumulate) out.fill(0.0);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.row(p);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (+)= a . b^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dimensions disagree " + shape_str(a) + " vs " + shape_str(b));
  if (out.rows() != a.rows() || out.cols() != b.rows()) out = Tensor(a.rows(), b.rows());
  if (!accumulate) out.fill(0.0);
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < n; ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] += acc;
    }
  }
}

// out (+)= a^T . b
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: inner dimensions disagree " + shape_str(a) + " vs " + shape_str(b));
  if (out.rows() != a.cols() || out.cols() != b.cols()) out = Tensor(a.cols(), b.cols());
  if (!accumulate) out.fill(0.0);
  const int m = a.cols(), k = a.rows(), n = b.cols();
  for (int p = 0; p < k; ++p) {
    const double* arow = a.row(p);
    const double* brow = b.row(p);
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = out.row(i);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace atgnn
