#include <sstream>

#include "doctest.h"
#include "deta/config.hpp"
#include "deta/error.hpp"

using namespace deta;

namespace {
std::string dump(const RunConfig& c) {
  std::ostringstream os;
  write_run_config(os, c);
  return os.str();
}

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

void expect_error_at(const std::string& text, const std::string& needle) {
  try {
    parse(text);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CAPTURE(e.what());
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}
}  // namespace

TEST_CASE("defaults round-trip") {
  RunConfig c;
  c.sync_shared();
  CHECK(dump(parse(dump(c))) == dump(c));
  CHECK_NOTHROW(parse(dump(c)).validate());
}

TEST_CASE("edited values survive a round trip") {
  const auto c = parse(R"(
# comment
[synth]
graphs_per_domain = 120   # trailing comment
mu_shift = 2.5
target_prior = [0.4, 0.3, 0.2, 0.1]
feature_dim = 6

[train]
zeta = 0.9
perturb_supervised = false
optimizer = "sgd"

[paths]
out = "runs/#1"
)");
  CHECK(c.synth.graphs_per_domain == 120);
  CHECK(c.synth.mu_shift == 2.5);
  CHECK(c.synth.target_prior == std::vector<double>{0.4, 0.3, 0.2, 0.1});
  CHECK(c.train.zeta == 0.9);
  CHECK(!c.train.perturb_supervised);
  CHECK(c.train.optimizer == ad::OptimizerConfig::Kind::sgd);
  CHECK(c.paths.out == "runs/#1");
  CHECK(c.train.encoder.in_dim == 6);  // shared with the generator
  CHECK(dump(parse(dump(c))) == dump(c));

  RunConfig s = c;
  s.set_seed(99);
  CHECK(s.synth.seed == 99);
  CHECK(s.train.seed == 99);
}

TEST_CASE("rejections name the line") {
  expect_error_at("[synth]\nseed = 3\n[bogus]\n", "line 3");
  expect_error_at("[synth]\n\nnot_a_key = 1\n", "line 3");
  expect_error_at("[synth]\nnot_a_key = 1\n", "synth.not_a_key");
  expect_error_at("seed = 1\n", "line 1");
  expect_error_at("[train]\nzeta 0.5\n", "line 2");
  expect_error_at("[train]\nzeta = \"high\"\n", "line 2");
  expect_error_at("[train]\nbatch_size = 2.5\n", "batch_size");
  expect_error_at("[train]\noptimizer = \"rmsprop\"\n", "optimizer");
  expect_error_at("[synth]\nsource_prior = [0.5, x]\n", "line 2");
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.toml"), IoError);
}

TEST_CASE("parsed values still go through validation") {
  const auto c = parse("[train]\nzeta = 1.5\n");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const auto d = parse("[encoder]\nhidden = 7\n");
  CHECK_THROWS_AS(d.validate(), ConfigError);
}
