#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "deta/graph.hpp"

namespace deta::synth {

/// Knobs of the two-domain generator.
///
/// Each graph draws a latent class l from its domain's prior and a severity
/// r = (l + u) / L with u ~ U(0, 1). Node features are r * signal_strength
/// along a fixed signal direction, plus a per-graph nuisance offset along an
/// orthogonal direction, plus isotropic node noise. The target domain moves
/// the nuisance offset by mu_shift and scales its spread and the node noise by
/// sigma_shift. Latent event times are exponential with log-rate
/// risk_slope * (r - 0.5); bins are the source's time quartiles (k_bins
/// quantiles in general), applied to both domains. With probability
/// censoring_rate a uniform censor bin is drawn and censors the record if it
/// comes before the event bin.
struct ShiftConfig {
  std::size_t graphs_per_domain = 400;
  std::size_t nodes_min = 10;
  std::size_t nodes_max = 16;
  std::size_t feature_dim = 8;
  std::size_t latent_classes = 4;
  double mu_shift = 2.0;
  double sigma_shift = 1.5;
  std::vector<double> source_prior{0.25, 0.25, 0.25, 0.25};
  std::vector<double> target_prior{0.1, 0.2, 0.3, 0.4};
  double censoring_rate = 0.2;
  std::size_t k_bins = 4;
  std::size_t knn_k = 8;
  double signal_strength = 3.0;
  double node_noise = 1.0;
  double nuisance_jitter = 0.3;
  double risk_slope = 12.0;
  std::uint64_t seed = 7;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct DomainPair {
  std::vector<WSIGraph> source;
  std::vector<WSIGraph> target;
};

/// Both domains carry labels; consumers decide whether to use the target's.
DomainPair generate_domain_pair(const ShiftConfig& config);

/// Graphs of one domain, generated with per-graph seeds derived from
/// (config.seed, domain, index).
std::vector<WSIGraph> generate_domain(const ShiftConfig& config, Domain domain);

struct DatasetSummary {
  std::vector<std::size_t> bin_counts;       // index 0 = bin 1
  std::vector<std::size_t> event_counts;     // uncensored per bin
  std::vector<double> feature_mean;          // over all nodes
  std::vector<double> feature_var;           // population variance over all nodes
  std::size_t graphs = 0;
  std::size_t nodes = 0;
};

/// Throws std::invalid_argument for an empty or unlabeled dataset.
DatasetSummary dataset_summary(const std::vector<WSIGraph>& graphs, std::size_t k_bins);

/// CSV with columns kind,index,value.
void write_summary_csv(std::ostream& out, const DatasetSummary& summary);

}  // namespace deta::synth
