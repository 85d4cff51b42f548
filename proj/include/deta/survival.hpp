#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deta/autodiff.hpp"
#include "deta/graph.hpp"

namespace deta::survival {

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbFloor = 1e-12;

struct SurvivalRecord {
  int time_bin = 1;  // 1..K
  int censor = 1;    // 1 = event observed
  std::vector<double> hazard;
};

/// Maps times to bins 1..k_bins. Bin edges are the quantiles of the
/// uncensored times at j / k_bins; a time lands in the first bin whose upper
/// edge it does not exceed.
std::vector<int> discretize_times(std::span<const double> times, std::span<const int> censors,
                                  std::size_t k_bins);
/// The k_bins - 1 interior edges used by discretize_times.
std::vector<double> quantile_edges(std::span<const double> times, std::span<const int> censors,
                                   std::size_t k_bins);
/// Bin (1-based) of one time against precomputed edges.
int assign_bin(double time, std::span<const double> edges);

/// S(y) = prod_{j <= y} (1 - h(j)).
std::vector<double> survival_function(std::span<const double> hazard);

/// Negative log-likelihood summed over records:
///   -c [log S(y) + log h(y)] - (1 - c) log S(min(y + 1, K)).
/// hazards are 1 x K rows on the tape.
ad::Tensor surv_nll(ad::Tape& tape, std::span<const ad::Tensor> hazards,
                    std::span<const SurvivalLabel> labels);
double surv_nll(std::span<const SurvivalRecord> records);

/// -sum_y S(y). Larger means earlier expected event.
double risk_score(std::span<const double> hazard);

/// Harrell's concordance. Pairs (i, j) with T_i < T_j and c_i = 1 are
/// comparable; risk_i > risk_j is concordant, equal risks count one half.
double c_index(std::span<const double> risks, std::span<const int> times, std::span<const int> censors);

struct KmPoint {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
  std::size_t events = 0;
};

/// Product-limit estimate, one point per distinct event time. Subjects
/// censored at t are still at risk at t.
std::vector<KmPoint> kaplan_meier(std::span<const double> times, std::span<const int> events);

struct TimeEvent {
  double time = 0.0;
  int event = 1;
};

struct LogRankResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample log-rank test, chi-square with one degree of freedom.
LogRankResult log_rank(std::span<const TimeEvent> group_a, std::span<const TimeEvent> group_b);

/// Upper tail of chi-square(1): erfc(sqrt(x / 2)).
double chi2_1df_sf(double x);

}  // namespace deta::survival
