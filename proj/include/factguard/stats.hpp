#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace factguard::stats {

// Model decision after parsing. kInvalid covers malformed or missing output.
enum class Decision : int { kBad = 0, kGood = 1, kInvalid = 2 };

struct LabeledOutcome {
  std::string case_id;
  Decision predicted = Decision::kInvalid;
  int label = 0;                  // 1 = good profile
  std::optional<int> h_rsn;       // 1 = reasoning contains a hallucinated point
};

struct ScoredPoint {
  double prob = 0.0;  // predicted probability of a factual error
  int truth = 0;      // human judgment for the point
};

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  bool operator==(const Confusion&) const = default;
};

// Invalid predictions are scored as the complement of the label, so they are
// always wrong: an FN when label=1 and an FP when label=0.
int effective_prediction(Decision predicted, int label);

Confusion confusion(std::span<const LabeledOutcome> outcomes);

int aggregate_h(std::span<const int> point_flags);

std::optional<double> pearson(std::span<const int> h, std::span<const int> e);

// P(wrong | h_rsn=1) - P(wrong | h_rsn=0). NA if either subgroup is empty.
std::optional<double> risk_difference(std::span<const LabeledOutcome> outcomes);

// Positive-class F1 as a percentage. NA when tp+fp+fn == 0.
std::optional<double> f1(std::span<const LabeledOutcome> outcomes);
std::optional<double> f1(const Confusion& c);

inline constexpr std::int64_t kFalseNegativeCost = 5;
inline constexpr std::int64_t kFalsePositiveCost = 1;

std::int64_t weighted_cost(std::span<const LabeledOutcome> outcomes);
std::int64_t weighted_cost(const Confusion& c);

inline constexpr double kDefaultThreshold = 0.5;

// (TPR + TNR) / 2 * 100 with prediction = prob >= threshold. NA when truth is
// single-class.
std::optional<double> balanced_accuracy(std::span<const ScoredPoint> points,
                                        double threshold = kDefaultThreshold);

// Average precision * 100. Points are ranked by descending prob; within a tie
// negatives rank ahead of positives, so 100 is reached only under strict
// separation. NA when there are no positives.
std::optional<double> auprc(std::span<const ScoredPoint> points);

// Two-sided Wilcoxon rank-sum (Mann-Whitney U) p-value. Exact enumeration of
// all group assignments when |a|+|b| <= kExactCutover, otherwise the normal
// approximation with tie and continuity correction.
inline constexpr std::size_t kExactCutover = 20;

double wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);
double wilcoxon_rank_sum_exact(std::span<const double> a, std::span<const double> b);
double wilcoxon_rank_sum_normal(std::span<const double> a, std::span<const double> b);

// Mann-Whitney U of sample a: sum over pairs of [a>b] + 0.5 [a==b].
double mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct DensityHistogram {
  std::vector<double> edges;       // bins + 1 edges over [0, 1]
  std::vector<double> freq_h0;     // normalized, sums to 1 unless empty
  std::vector<double> freq_h1;
  bool h0_empty = false;
  bool h1_empty = false;

  std::string to_csv() const;
};

DensityHistogram density_bins(std::span<const ScoredPoint> points, int bins);

// Rounded to two decimals for reporting.
double round2(double value);

}  // namespace factguard::stats
