#pragma once

// Straight-from-the-definition reference implementations. They share no code
// with the library and favour obviousness over speed.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace oracle {

struct Counts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

// predicted: 0, 1, or 2 for invalid. Invalid is wrong whatever the label.
inline Counts count(const std::vector<int>& predicted, const std::vector<int>& label) {
  Counts c;
  for (std::size_t i = 0; i < label.size(); ++i) {
    int p = predicted[i];
    if (p == 2) p = 1 - label[i];
    if (p == 1 && label[i] == 1) ++c.tp;
    if (p == 1 && label[i] == 0) ++c.fp;
    if (p == 0 && label[i] == 1) ++c.fn;
    if (p == 0 && label[i] == 0) ++c.tn;
  }
  return c;
}

inline std::optional<double> f1(const Counts& c) {
  if (c.tp + c.fp + c.fn == 0) return std::nullopt;
  if (c.tp == 0) return 0.0;
  const double precision = double(c.tp) / double(c.tp + c.fp);
  const double recall = double(c.tp) / double(c.tp + c.fn);
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

inline long cost(const Counts& c) { return 5 * c.fn + 1 * c.fp; }

inline std::optional<double> pearson(const std::vector<int>& x, const std::vector<int>& y) {
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// h: hallucination flag, e: misclassification flag.
inline std::optional<double> risk_difference(const std::vector<int>& h, const std::vector<int>& e) {
  double wrong1 = 0, n1 = 0, wrong0 = 0, n0 = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] == 1) {
      n1 += 1;
      wrong1 += e[i];
    } else {
      n0 += 1;
      wrong0 += e[i];
    }
  }
  if (n1 == 0 || n0 == 0) return std::nullopt;
  return wrong1 / n1 - wrong0 / n0;
}

inline std::optional<double> balanced_accuracy(const std::vector<double>& prob, const std::vector<int>& truth) {
  double tp = 0, p = 0, tn = 0, n = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const int pred = prob[i] >= 0.5 ? 1 : 0;
    if (truth[i] == 1) {
      p += 1;
      tp += pred == 1;
    } else {
      n += 1;
      tn += pred == 0;
    }
  }
  if (p == 0 || n == 0) return std::nullopt;
  return 100.0 * (tp / p + tn / n) / 2.0;
}

// Average precision with pessimistic ties: at equal probability every
// negative ranks above every positive. Each positive's precision is computed
// from a pairwise count of the items ranked at or above it.
inline std::optional<double> auprc(const std::vector<double>& prob, const std::vector<int>& truth) {
  double positives = 0;
  for (int t : truth) positives += t;
  if (positives == 0) return std::nullopt;
  double sum = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (truth[i] != 1) continue;
    double at_or_above = 1, hits = 1;
    for (std::size_t j = 0; j < prob.size(); ++j) {
      if (j == i) continue;
      bool above = prob[j] > prob[i];
      if (prob[j] == prob[i]) above = truth[j] == 0 || j < i;
      if (above) {
        at_or_above += 1;
        hits += truth[j];
      }
    }
    sum += hits / at_or_above;
  }
  return 100.0 * sum / positives;
}

// Two-sided permutation p-value of the rank-sum statistic by enumerating every
// labelling of the pooled sample as a bitmask.
inline double wilcoxon_exact(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int total = int(pooled.size());
  const int n = int(a.size());
  const int m = int(b.size());
  auto twice_u = [&](std::uint32_t mask) {
    long u2 = 0;
    for (int i = 0; i < total; ++i) {
      if (!(mask >> i & 1)) continue;
      for (int j = 0; j < total; ++j) {
        if (mask >> j & 1) continue;
        if (pooled[i] > pooled[j]) u2 += 2;
        if (pooled[i] == pooled[j]) u2 += 1;
      }
    }
    return u2;
  };
  const long center = long(n) * m;  // twice n*m/2
  const long observed = std::labs(twice_u((1u << n) - 1) - center);
  double extreme = 0, all = 0;
  for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
    if (__builtin_popcount(mask) != n) continue;
    all += 1;
    if (std::labs(twice_u(mask) - center) >= observed) extreme += 1;
  }
  return extreme / all;
}

}  // namespace oracle
