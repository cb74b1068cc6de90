#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace oracle {

namespace {
double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

void lstm_step(const std::vector<double>& x, const std::vector<double>& h_prev, const std::vector<double>& c_prev,
               const std::vector<double>& w_ih, const std::vector<double>& w_hh, const std::vector<double>& bias,
               std::vector<double>& h, std::vector<double>& c) {
  const std::size_t H = h_prev.size();
  const std::size_t in = x.size();
  h.assign(H, 0.0);
  c.assign(H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    double pre[4];
    for (int g = 0; g < 4; ++g) {
      const std::size_t col = static_cast<std::size_t>(g) * H + k;
      double z = bias[col];
      for (std::size_t r = 0; r < in; ++r) z += x[r] * w_ih[r * 4 * H + col];
      for (std::size_t r = 0; r < H; ++r) z += h_prev[r] * w_hh[r * 4 * H + col];
      pre[g] = z;
    }
    const double i = logistic(pre[0]);
    const double f = logistic(pre[1]);
    const double g = std::tanh(pre[2]);
    const double o = logistic(pre[3]);
    c[k] = f * c_prev[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

double auc_roc(const std::vector<double>& scores, const std::vector<double>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t a = 0; a < scores.size(); ++a) {
    if (labels[a] != 1.0) continue;
    for (std::size_t b = 0; b < scores.size(); ++b) {
      if (labels[b] != 0.0) continue;
      pairs += 1.0;
      if (scores[a] > scores[b]) wins += 1.0;
      if (scores[a] == scores[b]) wins += 0.5;
    }
  }
  return wins / pairs;
}

double auc_pr(const std::vector<double>& scores, const std::vector<double>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double positives = 0.0;
  for (const double y : labels) positives += y;
  double area = 0.0;
  double prev_recall = 0.0;
  for (const double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        if (labels[i] == 1.0) {
          tp += 1.0;
        } else {
          fp += 1.0;
        }
      }
    }
    const double recall = tp / positives;
    const double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

double kappa(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth, bool linear,
             std::size_t classes) {
  std::vector<std::vector<double>> observed(classes, std::vector<double>(classes, 0.0));
  for (std::size_t n = 0; n < pred.size(); ++n) observed[truth[n]][pred[n]] += 1.0;
  const double total = static_cast<double>(pred.size());
  std::vector<double> row(classes, 0.0), col(classes, 0.0);
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      row[i] += observed[i][j];
      col[j] += observed[i][j];
    }
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      const double w = linear ? std::fabs(static_cast<double>(i) - static_cast<double>(j)) : (i == j ? 0.0 : 1.0);
      const double expected = row[i] * col[j] / total;
      num += w * observed[i][j];
      den += w * expected;
    }
  }
  if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

double mad(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += std::fabs(static_cast<double>(pred[i]) - static_cast<double>(truth[i]));
  }
  return s / static_cast<double>(pred.size());
}

void macro_micro(const std::vector<double>& scores, const std::vector<double>& labels, std::size_t columns,
                 double& macro, double& micro) {
  const std::size_t n = scores.size() / columns;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < columns; ++c) {
    std::vector<double> s, y;
    for (std::size_t r = 0; r < n; ++r) {
      s.push_back(scores[r * columns + c]);
      y.push_back(labels[r * columns + c]);
    }
    const bool has_pos = std::count(y.begin(), y.end(), 1.0) > 0;
    const bool has_neg = std::count(y.begin(), y.end(), 0.0) > 0;
    if (has_pos && has_neg) {
      sum += auc_roc(s, y);
      ++used;
    }
  }
  macro = sum / static_cast<double>(used);
  micro = auc_roc(scores, labels);
}

double traditional_weight_current(std::size_t s) { return 1.0 / static_cast<double>(s); }
double adjusted_weight_current(std::size_t s) { return 1.0 - 1.0 / static_cast<double>(s); }

std::vector<std::optional<std::size_t>> schedule(std::size_t steps, std::size_t buffer_size,
                                                 std::size_t buffer_length) {
  // p by repeated subtraction rather than division.
  std::size_t p = 0;
  for (std::size_t left = steps; left >= buffer_size; left -= buffer_size) ++p;
  std::vector<std::optional<std::size_t>> out(steps);
  std::size_t next = 0;
  std::size_t countdown = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    if (countdown == 0) {
      if (next < buffer_length) out[i] = next;
      ++next;
      countdown = p;
    }
    --countdown;
  }
  return out;
}

double ewc_penalty(const std::vector<double>& theta, const std::vector<double>& star, const std::vector<double>& f,
                   double lambda) {
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - star[i];
    s += 0.5 * f[i] * d * d;
  }
  return lambda * s;
}

double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

double bce(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(p[i], 1e-12), 1.0 - 1e-12);
    s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

}  // namespace oracle
