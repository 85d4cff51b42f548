#include "deta/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>

#include "deta/error.hpp"
#include "deta/survival.hpp"

namespace deta::synth {

using ad::Tensor;

void ShiftConfig::validate() const {
  if (graphs_per_domain == 0) throw ConfigError("synth.graphs_per_domain must be positive");
  if (nodes_min < 2 || nodes_max < nodes_min) throw ConfigError("synth.nodes_min/nodes_max must satisfy 2 <= min <= max");
  if (feature_dim < 2) throw ConfigError("synth.feature_dim must be at least 2");
  if (latent_classes < 1) throw ConfigError("synth.latent_classes must be at least 1");
  if (k_bins < 2) throw ConfigError("synth.k_bins must be at least 2");
  if (knn_k == 0) throw ConfigError("synth.knn_k must be positive");
  if (censoring_rate < 0.0 || censoring_rate > 1.0) throw ConfigError("synth.censoring_rate must be in [0, 1]");
  if (sigma_shift <= 0.0) throw ConfigError("synth.sigma_shift must be positive");
  if (node_noise < 0.0 || nuisance_jitter < 0.0) throw ConfigError("synth noise scales must be non-negative");
  for (const auto* prior : {&source_prior, &target_prior}) {
    if (prior->size() != latent_classes)
      throw ConfigError("synth prior has " + std::to_string(prior->size()) + " entries but latent_classes is " +
                        std::to_string(latent_classes));
    double sum = 0.0;
    for (double p : *prior) {
      if (p < 0.0 || p > 1.0) throw ConfigError("synth prior entries must lie in [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synth prior must sum to 1");
  }
}

namespace {

// Signal lives on the first half of the feature dimensions, nuisance on the rest.
std::vector<double> half_direction(std::size_t d, bool first_half) {
  std::vector<double> v(d, 0.0);
  const std::size_t split = d / 2;
  const std::size_t lo = first_half ? 0 : split;
  const std::size_t hi = first_half ? split : d;
  const double w = 1.0 / std::sqrt(static_cast<double>(hi - lo));
  for (std::size_t i = lo; i < hi; ++i) v[i] = w;
  return v;
}

std::seed_seq graph_seed(const ShiftConfig& cfg, Domain domain, std::size_t index, std::uint32_t stream) {
  return std::seed_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                       static_cast<std::uint32_t>(domain == Domain::source ? 1 : 2),
                       static_cast<std::uint32_t>(index), stream};
}

// Label-side draws live on their own stream so the source time scale can be
// recomputed without regenerating features.
struct Latent {
  double severity = 0.0;
  double time = 0.0;
  double censor_u = 1.0;
  int censor_bin = 1;
};

Latent draw_latent(const ShiftConfig& cfg, Domain domain, std::size_t index) {
  auto seq = graph_seed(cfg, domain, index, 1);
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& prior = domain == Domain::target ? cfg.target_prior : cfg.source_prior;
  std::discrete_distribution<std::size_t> class_dist(prior.begin(), prior.end());
  Latent l;
  const std::size_t cls = class_dist(rng);
  l.severity = (static_cast<double>(cls) + unif(rng)) / static_cast<double>(cfg.latent_classes);
  std::exponential_distribution<double> time_dist(std::exp(cfg.risk_slope * (l.severity - 0.5)));
  l.time = time_dist(rng);
  l.censor_u = unif(rng);
  std::uniform_int_distribution<int> cens_dist(1, static_cast<int>(cfg.k_bins));
  l.censor_bin = cens_dist(rng);
  return l;
}

// Bin edges come from the source's latent event times and are shared by both
// domains, so the target's prior skew shows up as a shifted bin histogram.
std::vector<double> source_edges(const ShiftConfig& cfg) {
  std::vector<double> times(cfg.graphs_per_domain);
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = draw_latent(cfg, Domain::source, i).time;
  const std::vector<int> all(times.size(), 1);
  return survival::quantile_edges(times, all, cfg.k_bins);
}

WSIGraph generate_graph(const ShiftConfig& cfg, Domain domain, std::size_t index, std::span<const double> edges) {
  const Latent lat = draw_latent(cfg, domain, index);
  auto seq = graph_seed(cfg, domain, index, 0);
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  const bool tgt = domain == Domain::target;
  std::uniform_int_distribution<std::size_t> size_dist(cfg.nodes_min, cfg.nodes_max);
  const std::size_t n = size_dist(rng);
  const std::size_t d = cfg.feature_dim;
  const auto signal_dir = half_direction(d, true);
  const auto nuisance_dir = half_direction(d, false);
  const double spread = tgt ? cfg.sigma_shift : 1.0;
  const double offset = (tgt ? cfg.mu_shift : 0.0) + cfg.nuisance_jitter * spread * normal(rng);

  Tensor feats(n, d);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t c = 0; c < d; ++c)
      feats.at(v, c) = lat.severity * cfg.signal_strength * signal_dir[c] + offset * nuisance_dir[c] +
                       cfg.node_noise * spread * normal(rng);

  WSIGraph g;
  g.domain = domain;
  g.features = feats;
  g.edges = knn_graph(feats, std::min(cfg.knn_k, n - 1));

  const int event_bin = survival::assign_bin(lat.time, edges);
  SurvivalLabel label{event_bin, 1};
  if (lat.censor_u < cfg.censoring_rate && lat.censor_bin < event_bin) label = {lat.censor_bin, 0};
  g.label = label;
  return g;
}

}  // namespace

std::vector<WSIGraph> generate_domain(const ShiftConfig& config, Domain domain) {
  config.validate();
  const auto edges = source_edges(config);
  std::vector<WSIGraph> out;
  out.reserve(config.graphs_per_domain);
  for (std::size_t i = 0; i < config.graphs_per_domain; ++i) out.push_back(generate_graph(config, domain, i, edges));
  return out;
}

DomainPair generate_domain_pair(const ShiftConfig& config) {
  return {generate_domain(config, Domain::source), generate_domain(config, Domain::target)};
}

DatasetSummary dataset_summary(const std::vector<WSIGraph>& graphs, std::size_t k_bins) {
  if (graphs.empty()) throw std::invalid_argument("dataset_summary: empty dataset");
  const std::size_t d = graphs.front().feature_dim();
  DatasetSummary s;
  s.bin_counts.assign(k_bins, 0);
  s.event_counts.assign(k_bins, 0);
  s.feature_mean.assign(d, 0.0);
  s.feature_var.assign(d, 0.0);
  s.graphs = graphs.size();
  for (const auto& g : graphs) {
    if (!g.label) throw std::invalid_argument("dataset_summary: unlabeled graph");
    if (g.feature_dim() != d) throw std::invalid_argument("dataset_summary: mixed feature widths");
    const auto bin = static_cast<std::size_t>(g.label->time_bin);
    if (bin < 1 || bin > k_bins) throw std::invalid_argument("dataset_summary: time bin out of range");
    ++s.bin_counts[bin - 1];
    if (g.label->censor == 1) ++s.event_counts[bin - 1];
    s.nodes += g.num_nodes();
  }
  // Sort node rows so the floating-point sums do not depend on graph order.
  std::vector<std::vector<double>> rows;
  rows.reserve(s.nodes);
  for (const auto& g : graphs)
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      auto r = g.features.data().subspan(v * d, d);
      rows.emplace_back(r.begin(), r.end());
    }
  std::sort(rows.begin(), rows.end());
  for (const auto& r : rows)
    for (std::size_t c = 0; c < d; ++c) s.feature_mean[c] += r[c];
  const double inv = 1.0 / static_cast<double>(s.nodes);
  for (double& m : s.feature_mean) m *= inv;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = r[c] - s.feature_mean[c];
      s.feature_var[c] += diff * diff;
    }
  for (double& v : s.feature_var) v *= inv;
  return s;
}

void write_summary_csv(std::ostream& out, const DatasetSummary& s) {
  out.precision(17);
  out << "kind,index,value\n";
  out << "graphs,0," << s.graphs << "\n";
  out << "nodes,0," << s.nodes << "\n";
  for (std::size_t b = 0; b < s.bin_counts.size(); ++b) out << "bin_count," << b + 1 << "," << s.bin_counts[b] << "\n";
  for (std::size_t b = 0; b < s.event_counts.size(); ++b)
    out << "event_count," << b + 1 << "," << s.event_counts[b] << "\n";
  for (std::size_t c = 0; c < s.feature_mean.size(); ++c) out << "feature_mean," << c << "," << s.feature_mean[c] << "\n";
  for (std::size_t c = 0; c < s.feature_var.size(); ++c) out << "feature_var," << c << "," << s.feature_var[c] << "\n";
}

}  // namespace deta::synth
