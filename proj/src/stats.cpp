#include "factguard/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "factguard/errors.hpp"

namespace factguard::stats {

int effective_prediction(Decision predicted, int label) {
  switch (predicted) {
    case Decision::kGood:
      return 1;
    case Decision::kBad:
      return 0;
    case Decision::kInvalid:
      break;
  }
  return 1 - label;
}

Confusion confusion(std::span<const LabeledOutcome> outcomes) {
  Confusion c;
  for (const auto& o : outcomes) {
    if (o.label != 0 && o.label != 1) {
      throw ContractViolation("label must be 0 or 1 for case " + o.case_id);
    }
    const int pred = effective_prediction(o.predicted, o.label);
    if (pred == 1 && o.label == 1) ++c.tp;
    else if (pred == 1 && o.label == 0) ++c.fp;
    else if (pred == 0 && o.label == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

int aggregate_h(std::span<const int> point_flags) {
  if (point_flags.empty()) {
    throw ContractViolation("aggregate_h: empty point list");
  }
  return std::any_of(point_flags.begin(), point_flags.end(), [](int v) { return v != 0; }) ? 1 : 0;
}

std::optional<double> pearson(std::span<const int> h, std::span<const int> e) {
  if (h.size() != e.size()) {
    throw ContractViolation("pearson: length mismatch");
  }
  if (h.size() < 2) {
    throw ContractViolation("pearson: need at least two observations");
  }
  const double n = static_cast<double>(h.size());
  const double mean_h = std::accumulate(h.begin(), h.end(), 0.0) / n;
  const double mean_e = std::accumulate(e.begin(), e.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double dx = h[i] - mean_h;
    const double dy = e[i] - mean_e;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> risk_difference(std::span<const LabeledOutcome> outcomes) {
  std::int64_t wrong[2] = {0, 0};
  std::int64_t total[2] = {0, 0};
  for (const auto& o : outcomes) {
    if (!o.h_rsn) {
      throw ContractViolation("risk_difference: missing h_rsn for case " + o.case_id);
    }
    const int g = *o.h_rsn != 0 ? 1 : 0;
    ++total[g];
    if (effective_prediction(o.predicted, o.label) != o.label) ++wrong[g];
  }
  if (total[0] == 0 || total[1] == 0) return std::nullopt;
  return static_cast<double>(wrong[1]) / static_cast<double>(total[1]) -
         static_cast<double>(wrong[0]) / static_cast<double>(total[0]);
}

std::optional<double> f1(const Confusion& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

std::optional<double> f1(std::span<const LabeledOutcome> outcomes) {
  if (outcomes.empty()) throw ContractViolation("f1: empty outcome list");
  return f1(confusion(outcomes));
}

std::int64_t weighted_cost(const Confusion& c) {
  return kFalseNegativeCost * c.fn + kFalsePositiveCost * c.fp;
}

std::int64_t weighted_cost(std::span<const LabeledOutcome> outcomes) {
  if (outcomes.empty()) throw ContractViolation("weighted_cost: empty outcome list");
  return weighted_cost(confusion(outcomes));
}

namespace {

void check_points(std::span<const ScoredPoint> points) {
  for (const auto& p : points) {
    if (!std::isfinite(p.prob) || p.prob < 0.0 || p.prob > 1.0) {
      throw ContractViolation("scored point probability outside [0,1]");
    }
    if (p.truth != 0 && p.truth != 1) {
      throw ContractViolation("scored point truth must be 0 or 1");
    }
  }
}

}  // namespace

std::optional<double> balanced_accuracy(std::span<const ScoredPoint> points, double threshold) {
  check_points(points);
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (const auto& p : points) {
    const bool flagged = p.prob >= threshold;
    if (p.truth == 1) (flagged ? tp : fn)++;
    else (flagged ? fp : tn)++;
  }
  if (tp + fn == 0 || tn + fp == 0) return std::nullopt;
  const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return 100.0 * (tpr + tnr) / 2.0;
}

std::optional<double> auprc(std::span<const ScoredPoint> points) {
  check_points(points);
  std::vector<ScoredPoint> ranked(points.begin(), points.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredPoint& a, const ScoredPoint& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.truth < b.truth;
  });
  const auto positives = std::count_if(ranked.begin(), ranked.end(),
                                       [](const ScoredPoint& p) { return p.truth == 1; });
  if (positives == 0) return std::nullopt;
  double ap = 0.0;
  std::int64_t hits = 0;
  for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
    if (ranked[rank].truth == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return 100.0 * ap / static_cast<double>(positives);
}

namespace {

// Midranks of the pooled sample, doubled so that every rank is an integer.
std::vector<std::int64_t> doubled_midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return pooled[x] < pooled[y]; });
  std::vector<std::int64_t> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    // ranks i+1 .. j+1 share (i+1 + j+1) / 2; doubled: i + j + 2
    const auto r2 = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r2;
    i = j + 1;
  }
  return ranks;
}

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw ContractViolation("wilcoxon_rank_sum: both samples must be non-empty");
  }
  for (double v : a) {
    if (!std::isfinite(v)) throw ContractViolation("wilcoxon_rank_sum: non-finite value");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw ContractViolation("wilcoxon_rank_sum: non-finite value");
  }
}

bool all_identical(std::span<const double> a, std::span<const double> b) {
  const double v = a.front();
  return std::all_of(a.begin(), a.end(), [v](double x) { return x == v; }) &&
         std::all_of(b.begin(), b.end(), [v](double x) { return x == v; });
}

}  // namespace

double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) u += 1.0;
      else if (x == y) u += 0.5;
    }
  }
  return u;
}

double wilcoxon_rank_sum_exact(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  if (all_identical(a, b)) return 1.0;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = doubled_midranks(pooled);
  const std::size_t n = a.size();
  const std::size_t total = pooled.size();
  const auto n64 = static_cast<std::int64_t>(n);
  const auto m64 = static_cast<std::int64_t>(b.size());

  // Doubled U = doubled rank sum - n(n+1); its null mean (doubled) is n*m.
  auto doubled_u = [&](const std::vector<std::size_t>& members) {
    std::int64_t w2 = 0;
    for (std::size_t idx : members) w2 += ranks[idx];
    return w2 - n64 * (n64 + 1);
  };
  std::vector<std::size_t> observed(n);
  std::iota(observed.begin(), observed.end(), 0);
  const std::int64_t mean2 = n64 * m64;
  const std::int64_t observed_dev = std::llabs(doubled_u(observed) - mean2);

  // Walk every n-subset of the pooled positions in lexicographic order.
  std::vector<std::size_t> combo(n);
  std::iota(combo.begin(), combo.end(), 0);
  std::uint64_t extreme = 0;
  std::uint64_t count = 0;
  while (true) {
    ++count;
    if (std::llabs(doubled_u(combo) - mean2) >= observed_dev) ++extreme;
    std::size_t pos = n;
    while (pos > 0 && combo[pos - 1] == total - n + pos - 1) --pos;
    if (pos == 0) break;
    ++combo[pos - 1];
    for (std::size_t k = pos; k < n; ++k) combo[k] = combo[k - 1] + 1;
  }
  return static_cast<double>(extreme) / static_cast<double>(count);
}

double wilcoxon_rank_sum_normal(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  if (all_identical(a, b)) return 1.0;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  const double total = n + m;
  const double variance = n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
  if (variance <= 0.0) return 1.0;
  const double u = mann_whitney_u(a, b);
  const double dev = std::max(std::abs(u - n * m / 2.0) - 0.5, 0.0);
  const double z = dev / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

double wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.size() + b.size() <= kExactCutover) return wilcoxon_rank_sum_exact(a, b);
  return wilcoxon_rank_sum_normal(a, b);
}

DensityHistogram density_bins(std::span<const ScoredPoint> points, int bins) {
  if (bins < 2) throw ContractViolation("density_bins: bins must be >= 2");
  check_points(points);
  DensityHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / bins;
  h.freq_h0.assign(static_cast<std::size_t>(bins), 0.0);
  h.freq_h1.assign(static_cast<std::size_t>(bins), 0.0);
  std::size_t count0 = 0, count1 = 0;
  for (const auto& p : points) {
    const int idx = std::min(static_cast<int>(std::floor(p.prob * bins)), bins - 1);
    auto& target = p.truth == 1 ? h.freq_h1 : h.freq_h0;
    target[static_cast<std::size_t>(idx)] += 1.0;
    (p.truth == 1 ? count1 : count0)++;
  }
  for (auto& f : h.freq_h0) f = count0 ? f / static_cast<double>(count0) : 0.0;
  for (auto& f : h.freq_h1) f = count1 ? f / static_cast<double>(count1) : 0.0;
  h.h0_empty = count0 == 0;
  h.h1_empty = count1 == 0;
  return h;
}

std::string DensityHistogram::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "bin_low,bin_high,freq_h0,freq_h1\n";
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    out << edges[i] << ',' << edges[i + 1] << ',' << freq_h0[i] << ',' << freq_h1[i] << '\n';
  }
  return out.str();
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

}  // namespace factguard::stats
