#include "dilbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "dilbench/error.hpp"

namespace dilbench {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(ErrorKind::LengthMismatch, std::string(what) + ": scores and labels differ in length");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores.size(), labels.size(), "auc_roc");
  const auto idx = order_by_score(scores);
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // Ranks i+1..j share their average.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] > 0.5) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = idx.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::SingleClass, "auc_roc needs both classes");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double auc_pr(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores.size(), labels.size(), "auc_pr");
  const double total_pos =
      static_cast<double>(std::count_if(labels.begin(), labels.end(), [](double y) { return y > 0.5; }));
  if (total_pos == 0.0) throw Error(ErrorKind::NoPositives, "auc_pr needs at least one positive");
  auto idx = order_by_score(scores);
  std::reverse(idx.begin(), idx.end());
  double tp = 0.0, fp = 0.0, area = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] > 0.5 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return area;
}

MacroMicro macro_micro_auc(std::span<const double> scores, std::span<const double> labels, std::size_t columns) {
  check_lengths(scores.size(), labels.size(), "macro_micro_auc");
  if (columns == 0 || scores.size() % columns != 0) {
    throw Error(ErrorKind::ShapeMismatch, "score matrix is not n x columns");
  }
  const std::size_t n = scores.size() / columns;
  MacroMicro out;
  double sum = 0.0;
  std::size_t used = 0;
  std::vector<double> s(n), y(n);
  for (std::size_t c = 0; c < columns; ++c) {
    std::size_t pos = 0;
    for (std::size_t r = 0; r < n; ++r) {
      s[r] = scores[r * columns + c];
      y[r] = labels[r * columns + c];
      pos += y[r] > 0.5;
    }
    if (pos == 0 || pos == n) {
      out.skipped.push_back(c);
      continue;
    }
    sum += auc_roc(s, y);
    ++used;
  }
  if (used == 0) throw Error(ErrorKind::AllColumnsDegenerate, "no label column has both classes");
  out.macro = sum / static_cast<double>(used);
  out.micro = auc_roc(scores, labels);
  return out;
}

double cohen_kappa(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                   KappaWeighting weighting, std::size_t classes) {
  check_lengths(predicted.size(), truth.size(), "cohen_kappa");
  if (predicted.empty()) throw Error(ErrorKind::EmptyInput, "cohen_kappa of no predictions");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] >= classes || truth[i] >= classes) {
      throw Error(ErrorKind::DomainError, "class index outside 0.." + std::to_string(classes - 1));
    }
  }
  const std::size_t k = classes;
  std::vector<double> observed(k * k, 0.0), row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    observed[truth[i] * k + predicted[i]] += 1.0;
    row[truth[i]] += 1.0;
    col[predicted[i]] += 1.0;
  }
  const double n = static_cast<double>(predicted.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double w = weighting == KappaWeighting::linear ? std::abs(static_cast<double>(i) - static_cast<double>(j))
                                                           : (i == j ? 0.0 : 1.0);
      num += w * observed[i * k + j] / n;
      den += w * row[i] * col[j] / (n * n);
    }
  }
  // Only one class in both marginals: every prediction agrees.
  if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

double los_class_midpoint(std::size_t cls) {
  if (cls <= 7) return 24.0 * static_cast<double>(cls) + 12.0;
  if (cls == 8) return 264.0;
  if (cls == 9) return 420.0;
  throw Error(ErrorKind::DomainError, "LOS class outside 0..9");
}

double mad(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, MadUnits units) {
  check_lengths(predicted.size(), truth.size(), "mad");
  if (predicted.empty()) throw Error(ErrorKind::EmptyInput, "mad of no predictions");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (units == MadUnits::hours) {
      sum += std::abs(los_class_midpoint(predicted[i]) - los_class_midpoint(truth[i]));
    } else {
      sum += std::abs(static_cast<double>(predicted[i]) - static_cast<double>(truth[i]));
    }
  }
  return sum / static_cast<double>(predicted.size());
}

double psa(std::span<const double> per_source, std::size_t s) {
  if (s == 0 || per_source.size() != s) {
    throw Error(ErrorKind::LengthMismatch,
                "psa expects " + std::to_string(s) + " values, got " + std::to_string(per_source.size()));
  }
  return std::accumulate(per_source.begin(), per_source.end(), 0.0) / static_cast<double>(s);
}

}  // namespace dilbench
