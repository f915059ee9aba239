#pragma once

#include <vector>

#include "atgnn/tensor.hpp"

namespace atgnn {

struct ApResult {
  double ap = 0.0;
  bool skipped = false;  // no positive targets for this class
};

// Ranked average precision: sort descending by score (ties by original
// index), then average precision-at-rank over the positive ranks.
ApResult average_precision(const std::vector<double>& scores, const std::vector<int>& targets);

struct EvalReport {
  double map = 0.0;
  std::vector<double> per_class;  // NaN markers replaced by skip flags below
  std::vector<bool> skipped;
};

// Unweighted mean of per-class AP over classes that have positives.
// scores and targets are [n x S]; targets must be 0/1.
EvalReport mean_average_precision(const Tensor& scores, const Tensor& targets);

}  // namespace atgnn
