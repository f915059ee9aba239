#include "atgnn/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace atgnn {

ApResult average_precision(const std::vector<double>& scores, const std::vector<int>& targets) {
  if (scores.size() != targets.size())
    throw ShapeError("average_precision: score/target lengths disagree");
  const int n = int(scores.size());
  int positives = 0;
  for (int t : targets) {
    if (t != 0 && t != 1) throw DomainError("average_precision: targets must be binary");
    positives += t;
  }
  if (positives == 0) return {0.0, true};

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double sum = 0.0;
  int hits = 0;
  for (int rank = 1; rank <= n; ++rank) {
    if (targets[order[rank - 1]] == 1) {
      ++hits;
      sum += double(hits) / double(rank);
    }
  }
  return {sum / double(positives), false};
}

EvalReport mean_average_precision(const Tensor& scores, const Tensor& targets) {
  require_same_shape(scores, targets, "mean_average_precision");
  const int n = scores.rows(), s = scores.cols();
  if (n == 0 || s == 0) throw DomainError("mean_average_precision: empty batch");

  EvalReport report;
  report.per_class.resize(s, 0.0);
  report.skipped.resize(s, false);
  double sum = 0.0;
  int counted = 0;
  std::vector<double> col_scores(n);
  std::vector<int> col_targets(n);
  for (int c = 0; c < s; ++c) {
    for (int i = 0; i < n; ++i) {
      col_scores[i] = scores.at(i, c);
      const double tv = targets.at(i, c);
      if (tv != 0.0 && tv != 1.0)
        throw DomainError("mean_average_precision: targets must be binary");
      col_targets[i] = int(tv);
    }
    const ApResult r = average_precision(col_scores, col_targets);
    report.per_class[c] = r.ap;
    report.skipped[c] = r.skipped;
    if (!r.skipped) {
      sum += r.ap;
      ++counted;
    }
  }
  if (counted == 0)
    throw DomainError("mean_average_precision: no class has positive targets");
  report.map = sum / double(counted);
  return report;
}

}  // namespace atgnn
