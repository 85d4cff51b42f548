#include <cmath>
#include <sstream>

#include "doctest.h"
#include "deta/error.hpp"
#include "deta/synthdata.hpp"
#include "deta/trainer.hpp"
#include "oracles.hpp"

using namespace deta;
using namespace deta::synth;

namespace {

// Per-graph mean node features, source and target interleaved so the probe's
// even/odd split sees both domains.
double domain_probe(const ShiftConfig& cfg) {
  const auto pair = generate_domain_pair(cfg);
  oracle::Mat x;
  std::vector<int> y;
  auto mean_row = [](const WSIGraph& g) {
    std::vector<double> m(g.features.cols(), 0.0);
    for (std::size_t v = 0; v < g.num_nodes(); ++v)
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += g.features.at(v, j) / static_cast<double>(g.num_nodes());
    return m;
  };
  for (std::size_t i = 0; i < pair.source.size(); ++i) {
    // alternate which domain lands on the training half
    const bool flip = (i / 2) % 2;
    x.push_back(mean_row(flip ? pair.target[i] : pair.source[i]));
    y.push_back(flip ? 0 : 1);
    x.push_back(mean_row(flip ? pair.source[i] : pair.target[i]));
    y.push_back(flip ? 1 : 0);
  }
  return oracle::logistic_probe(x, y);
}

std::string to_jsonl(const std::vector<WSIGraph>& g) {
  std::ostringstream os;
  write_graphs_jsonl(os, g);
  return os.str();
}

}  // namespace

TEST_CASE("no shift: domains are indistinguishable") {
  ShiftConfig cfg;
  cfg.mu_shift = 0.0;
  cfg.sigma_shift = 1.0;
  cfg.target_prior = cfg.source_prior;
  const double acc = domain_probe(cfg);
  CAPTURE(acc);
  CHECK(acc <= 0.55);
}

TEST_CASE("large shift: domains separate") {
  ShiftConfig cfg;
  cfg.mu_shift = 3.0;
  const double acc = domain_probe(cfg);
  CAPTURE(acc);
  CHECK(acc >= 0.95);
}

TEST_CASE("censoring rate zero means every event is observed") {
  ShiftConfig cfg;
  cfg.censoring_rate = 0.0;
  cfg.graphs_per_domain = 100;
  const auto pair = generate_domain_pair(cfg);
  for (const auto* d : {&pair.source, &pair.target})
    for (const auto& g : *d) {
      REQUIRE(g.label);
      CHECK(g.label->censor == 1);
    }
  cfg.censoring_rate = 1.0;
  std::size_t censored = 0;
  for (const auto& g : generate_domain(cfg, Domain::source)) censored += g.label->censor == 0;
  CHECK(censored > 0);
}

TEST_CASE("uniform prior gives balanced bins") {
  // binomial(400, 1/4): sd = sqrt(75)
  const double bound = 3 * std::sqrt(75.0);
  for (std::uint64_t seed : {1, 2, 3, 7}) {
    ShiftConfig cfg;
    cfg.seed = seed;
    cfg.target_prior = cfg.source_prior;
    const auto s = dataset_summary(generate_domain(cfg, Domain::source), cfg.k_bins);
    CHECK(s.graphs == 400);
    for (std::size_t c : s.bin_counts) {
      CAPTURE(c);
      CHECK(std::abs(static_cast<double>(c) - 100.0) <= bound);
    }
  }
}

TEST_CASE("target prior skew shifts bins") {
  ShiftConfig cfg;
  const auto pair = generate_domain_pair(cfg);
  const auto s = dataset_summary(pair.source, 4), t = dataset_summary(pair.target, 4);
  // target prior puts more mass on high-severity (early event) classes
  CHECK(t.bin_counts[0] > s.bin_counts[0]);
  CHECK(t.bin_counts[3] < s.bin_counts[3]);
}

TEST_CASE("summary is permutation-invariant and well formed") {
  ShiftConfig cfg;
  cfg.graphs_per_domain = 60;
  auto g = generate_domain(cfg, Domain::target);
  const auto a = dataset_summary(g, 4);
  std::mt19937_64 rng(3);
  std::shuffle(g.begin(), g.end(), rng);
  const auto b = dataset_summary(g, 4);
  CHECK(a.bin_counts == b.bin_counts);
  CHECK(a.event_counts == b.event_counts);
  CHECK(a.nodes == b.nodes);
  for (std::size_t j = 0; j < a.feature_mean.size(); ++j) {
    CHECK(a.feature_mean[j] == doctest::Approx(b.feature_mean[j]).epsilon(1e-12));
    CHECK(a.feature_var[j] == doctest::Approx(b.feature_var[j]).epsilon(1e-12));
  }
  std::ostringstream csv;
  write_summary_csv(csv, a);
  CHECK(csv.str().rfind("kind,index,value\n", 0) == 0);
  CHECK_THROWS_AS(dataset_summary(std::vector<WSIGraph>{}, 4), std::invalid_argument);
}

TEST_CASE("same seed, same bytes") {
  ShiftConfig cfg;
  cfg.graphs_per_domain = 50;
  const auto a = generate_domain_pair(cfg), b = generate_domain_pair(cfg);
  CHECK(to_jsonl(a.source) == to_jsonl(b.source));
  CHECK(to_jsonl(a.target) == to_jsonl(b.target));
  cfg.seed = 8;
  CHECK(to_jsonl(generate_domain_pair(cfg).source) != to_jsonl(a.source));
  // a domain generated alone equals the same domain from the pair
  cfg.seed = 7;
  CHECK(to_jsonl(generate_domain(cfg, Domain::target)) == to_jsonl(a.target));
}

TEST_CASE("graphs follow the config") {
  ShiftConfig cfg;
  cfg.graphs_per_domain = 30;
  for (const auto& g : generate_domain(cfg, Domain::source)) {
    CHECK(g.num_nodes() >= cfg.nodes_min);
    CHECK(g.num_nodes() <= cfg.nodes_max);
    CHECK(g.features.cols() == cfg.feature_dim);
    CHECK(g.domain == Domain::source);
    CHECK(g.edges == knn_graph(g.features, cfg.knn_k));
    CHECK(g.label->time_bin >= 1);
    CHECK(g.label->time_bin <= 4);
  }
}

TEST_CASE("config validation") {
  ShiftConfig cfg;
  cfg.latent_classes = 0;
  cfg.source_prior = cfg.target_prior = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ShiftConfig{};
  cfg.latent_classes = 6;  // more classes than bins is fine
  cfg.source_prior = cfg.target_prior = std::vector<double>(6, 1.0 / 6);
  CHECK_NOTHROW(cfg.validate());
  CHECK(generate_domain(cfg, Domain::source).size() == 400);
  cfg = ShiftConfig{};
  cfg.target_prior = {0.5, 0.5, 0.5, -0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ShiftConfig{};
  cfg.source_prior = {0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ShiftConfig{};
  cfg.censoring_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("planted signal is learnable on the source domain") {
  ShiftConfig s;
  const auto train = generate_domain(s, Domain::source);
  s.seed = 1007;
  const auto held_out = generate_domain(s, Domain::source);
  TrainConfig cfg;
  cfg.encoder.hidden = 16;
  cfg.encoder.head_hidden = 16;
  cfg.encoder.dclf_hidden = 16;
  cfg.pretrain_epochs = 15;
  const double c = evaluate(pretrain(train, cfg).params, held_out).c_index;
  CAPTURE(c);
  CHECK(c > 0.9);
}
