#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/tensor.hpp"

namespace ajepa {

/// Fraction of rows whose highest-scoring class (lowest index on ties) is in
/// that row's label set.
inline double metric_accuracy(const Mat<double>& scores, const std::vector<std::vector<int>>& labels) {
  if (scores.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ShapeError("accuracy: score rows and label count differ");
  }
  if (labels.empty()) throw MetricError("accuracy: no items");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    const auto& l = labels[static_cast<std::size_t>(i)];
    if (std::find(l.begin(), l.end(), static_cast<int>(best)) != l.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double metric_accuracy(const Mat<double>& scores, const std::vector<int>& labels) {
  std::vector<std::vector<int>> sets;
  sets.reserve(labels.size());
  for (int l : labels) sets.push_back({l});
  return metric_accuracy(scores, sets);
}

/// Non-interpolated average precision: items ranked by descending score
/// (ties broken by item index); mean of precision@rank over the positives.
/// Returns a negative value when there is no positive.
inline double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t found = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positive[order[rank]]) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(rank + 1);
    }
  }
  return found == 0 ? -1.0 : sum / static_cast<double>(found);
}

/// Mean over classes with at least one positive of per-class AP.
inline double metric_map(const Mat<double>& scores, const std::vector<std::vector<int>>& labels) {
  if (scores.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ShapeError("mAP: score rows and label count differ");
  }
  double total = 0.0;
  int evaluated = 0;
  std::vector<double> column(labels.size());
  std::vector<bool> positive(labels.size());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), c);
      const auto& l = labels[i];
      positive[i] = std::find(l.begin(), l.end(), static_cast<int>(c)) != l.end();
    }
    const double ap = average_precision(column, positive);
    if (ap >= 0) {
      total += ap;
      ++evaluated;
    }
  }
  if (evaluated == 0) throw MetricError("mAP: no class has a positive item");
  return total / evaluated;
}

}  // namespace ajepa
