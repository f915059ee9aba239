#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace atgnn {

// Error taxonomy shared across the library; the CLI maps these to exit codes.
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct TopologyError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DomainError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };

// Dense row-major matrix of 64-bit reals. Every numeric object in the library
// (spectrograms, node features, parameters, gradients) is one of these.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor filled(int rows, int cols, double value);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int r) { return data_.data() + std::size_t(r) * cols_; }
  const double* row(int r) const { return data_.data() + std::size_t(r) * cols_; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  void fill(double v);
  void add_scaled(const Tensor& o, double scale);  // *this += scale * o
  bool all_finite() const;
  double sum() const;
  double mean() const;
  double max_abs() const;
  double max_abs_diff(const Tensor& o) const;
  bool operator==(const Tensor& o) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(int rows, int cols);
std::string shape_str(const Tensor& t);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

// out (+)= a . b with optional transposes on either operand. `accumulate`
// adds into out, which must already have the right shape.
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

}  // namespace atgnn
