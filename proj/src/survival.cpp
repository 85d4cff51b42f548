#include "deta/survival.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace deta::survival {

using ad::Tape;
using ad::Tensor;

std::vector<double> quantile_edges(std::span<const double> times, std::span<const int> censors,
                                   std::size_t k_bins) {
  if (times.size() != censors.size()) throw std::invalid_argument("discretize_times: length mismatch");
  if (k_bins < 2) throw std::invalid_argument("discretize_times: need at least 2 bins");
  std::vector<double> events;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (censors[i] == 1) events.push_back(times[i]);
  if (events.empty()) throw std::invalid_argument("discretize_times: every time is censored");
  std::sort(events.begin(), events.end());

  // Linear-interpolation quantiles at j / k_bins for j = 1..k_bins-1.
  std::vector<double> edges;
  for (std::size_t j = 1; j < k_bins; ++j) {
    const double pos = static_cast<double>(j) / static_cast<double>(k_bins) *
                       static_cast<double>(events.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, events.size() - 1);
    edges.push_back(events[lo] + (pos - static_cast<double>(lo)) * (events[hi] - events[lo]));
  }
  return edges;
}

int assign_bin(double time, std::span<const double> edges) {
  return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), time) - edges.begin()) + 1;
}

std::vector<int> discretize_times(std::span<const double> times, std::span<const int> censors,
                                  std::size_t k_bins) {
  const auto edges = quantile_edges(times, censors, k_bins);
  std::vector<int> bins(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) bins[i] = assign_bin(times[i], edges);
  return bins;
}

std::vector<double> survival_function(std::span<const double> hazard) {
  std::vector<double> s(hazard.size());
  double acc = 1.0;
  for (std::size_t j = 0; j < hazard.size(); ++j) s[j] = acc *= (1.0 - hazard[j]);
  return s;
}

Tensor surv_nll(Tape& tape, std::span<const Tensor> hazards, std::span<const SurvivalLabel> labels) {
  if (hazards.empty()) throw std::invalid_argument("surv_nll: no records");
  if (hazards.size() != labels.size()) throw std::invalid_argument("surv_nll: hazards/labels length mismatch");
  std::vector<Tensor> terms;
  terms.reserve(hazards.size());
  for (std::size_t i = 0; i < hazards.size(); ++i) {
    const auto& h = hazards[i];
    const auto k = static_cast<int>(h.cols());
    const auto [y, c] = labels[i];
    if (y < 1 || y > k)
      throw std::invalid_argument("surv_nll: time bin " + std::to_string(y) + " outside 1.." + std::to_string(k));
    // log S(m) = sum_{j <= m} log(1 - h_j)
    auto log_surv = [&](int m) {
      std::vector<std::size_t> cols(static_cast<std::size_t>(m));
      std::iota(cols.begin(), cols.end(), std::size_t{0});
      auto one_minus = tape.add_scalar(tape.neg(tape.select_cols(h, cols)), 1.0);
      return tape.sum(tape.log(tape.clamp(one_minus, kProbFloor, 1.0)));
    };
    if (c == 1) {
      const std::size_t col = static_cast<std::size_t>(y - 1);
      auto log_h = tape.log(tape.clamp(tape.select_cols(h, std::span(&col, 1)), kProbFloor, 1.0));
      terms.push_back(tape.neg(tape.add(log_surv(y), log_h)));
    } else {
      terms.push_back(tape.neg(log_surv(std::min(y + 1, k))));
    }
  }
  return tape.sum(tape.concat_rows(terms));
}

double surv_nll(std::span<const SurvivalRecord> records) {
  Tape tape;
  std::vector<Tensor> hazards;
  std::vector<SurvivalLabel> labels;
  for (const auto& r : records) {
    hazards.push_back(Tensor::row(r.hazard));
    labels.push_back({r.time_bin, r.censor});
  }
  return surv_nll(tape, hazards, labels).item();
}

double risk_score(std::span<const double> hazard) {
  const auto s = survival_function(hazard);
  return -std::accumulate(s.begin(), s.end(), 0.0);
}

double c_index(std::span<const double> risks, std::span<const int> times, std::span<const int> censors) {
  const std::size_t n = risks.size();
  if (times.size() != n || censors.size() != n) throw std::invalid_argument("c_index: length mismatch");
  if (n < 2) throw std::invalid_argument("c_index: need at least two records");
  // Sort by time so each event only scans strictly later subjects.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });
  double concordant = 0.0;
  double comparable = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto i = order[a];
    if (censors[i] != 1) continue;
    std::size_t b = a + 1;
    while (b < n && times[order[b]] == times[i]) ++b;
    for (; b < n; ++b) {
      const auto j = order[b];
      comparable += 1.0;
      if (risks[i] > risks[j])
        concordant += 1.0;
      else if (risks[i] == risks[j])
        concordant += 0.5;
    }
  }
  if (comparable == 0.0) throw std::invalid_argument("c_index: no comparable pairs (need an observed event before a later time)");
  return concordant / comparable;
}

std::vector<KmPoint> kaplan_meier(std::span<const double> times, std::span<const int> events) {
  if (times.size() != events.size()) throw std::invalid_argument("kaplan_meier: length mismatch");
  if (times.empty()) throw std::invalid_argument("kaplan_meier: no records");
  std::map<double, std::pair<std::size_t, std::size_t>> by_time;  // time -> (events, removed)
  for (std::size_t i = 0; i < times.size(); ++i) {
    auto& [d, r] = by_time[times[i]];
    d += events[i] == 1 ? 1 : 0;
    ++r;
  }
  std::vector<KmPoint> curve;
  std::size_t at_risk = times.size();
  double s = 1.0;
  for (const auto& [t, dr] : by_time) {
    const auto [d, r] = dr;
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      curve.push_back({t, s, at_risk, d});
    }
    at_risk -= r;
  }
  return curve;
}

double chi2_1df_sf(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

LogRankResult log_rank(std::span<const TimeEvent> group_a, std::span<const TimeEvent> group_b) {
  if (group_a.empty() || group_b.empty()) throw std::invalid_argument("log_rank: both groups must be non-empty");
  struct Counts {
    std::size_t events_a = 0, events_b = 0, leave_a = 0, leave_b = 0;
  };
  std::map<double, Counts> by_time;
  for (const auto& r : group_a) {
    auto& c = by_time[r.time];
    c.events_a += r.event == 1;
    ++c.leave_a;
  }
  for (const auto& r : group_b) {
    auto& c = by_time[r.time];
    c.events_b += r.event == 1;
    ++c.leave_b;
  }
  double n_a = static_cast<double>(group_a.size());
  double n_b = static_cast<double>(group_b.size());
  double o_minus_e = 0.0;
  double var = 0.0;
  std::size_t total_events = 0;
  for (const auto& [t, c] : by_time) {
    const double d = static_cast<double>(c.events_a + c.events_b);
    const double n = n_a + n_b;
    if (d > 0.0) {
      total_events += c.events_a + c.events_b;
      o_minus_e += static_cast<double>(c.events_a) - d * n_a / n;
      if (n > 1.0) var += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
    }
    n_a -= static_cast<double>(c.leave_a);
    n_b -= static_cast<double>(c.leave_b);
  }
  if (total_events == 0) throw std::invalid_argument("log_rank: no events in either group");
  LogRankResult out;
  out.statistic = var > 0.0 ? o_minus_e * o_minus_e / var : 0.0;
  out.p_value = chi2_1df_sf(out.statistic);
  return out;
}

}  // namespace deta::survival
