#include <cmath>
#include <numeric>

#include "doctest.h"
#include "deta/alignment.hpp"
#include "oracles.hpp"

using namespace deta;
using namespace deta::align;
using deta::ad::Optimizer;
using deta::ad::OptimizerConfig;
using deta::ad::Tape;
using deta::ad::Tensor;

namespace {

BranchOutput with_hazard(std::vector<double> h, std::size_t hidden = 2) {
  BranchOutput b;
  b.graph_embedding = Tensor(1, hidden, 0.1);
  b.hazard = Tensor::row(std::move(h));
  return b;
}

DualOutput dual(std::vector<double> mp, std::vector<double> sp) { return {with_hazard(mp), with_hazard(sp)}; }

EncoderConfig small_config() {
  EncoderConfig c;
  c.in_dim = 2;
  c.hidden = 4;
  c.head_hidden = 4;
  c.dclf_hidden = 4;
  c.k_sp = 2;
  c.k_bins = 3;
  return c;
}

std::vector<PreparedGraph> random_prepared(int count, std::size_t n, std::mt19937_64& rng, double shift = 0.0,
                                           std::size_t d = 2) {
  std::vector<PreparedGraph> out;
  for (int i = 0; i < count; ++i) {
    auto g = oracle::random_graph(n, d, 0.4, rng);
    for (std::size_t v = 0; v < n; ++v) g.features.at(v, 0) += shift;
    g.label = SurvivalLabel{1 + i % 3, (i % 4) ? 1 : 0};
    out.emplace_back(g, 2);
  }
  return out;
}

}  // namespace

TEST_CASE("filter examples") {
  const std::vector<std::vector<double>> d{{0.9, 0.1}, {0.6, 0.4}};
  auto b = filter_pseudo_labels(d, 0.8);
  CHECK(b.kept_indices == std::vector<std::size_t>{0});
  CHECK(b.labels == std::vector<int>{1});
  CHECK(b.confidences == std::vector<double>{0.9});
  CHECK(filter_pseudo_labels(d, 0.95).size() == 0);
  CHECK(filter_pseudo_labels(d, 0.0).size() == 2);
  CHECK(filter_pseudo_labels(std::vector<std::vector<double>>{{0.45, 0.1, 0.45}}, 0.3).labels == std::vector<int>{1});
  // strictly greater than zeta
  CHECK(filter_pseudo_labels(std::vector<std::vector<double>>{{0.8, 0.2}}, 0.8).size() == 0);
  CHECK_THROWS_AS(filter_pseudo_labels(d, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(filter_pseudo_labels(d, -0.1), std::invalid_argument);
}

TEST_CASE("filter is monotone in zeta") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> d(200, std::vector<double>(4));
  for (auto& row : d) {
    double s = 0;
    for (auto& v : row) s += v = std::pow(u(rng), 4);
    for (auto& v : row) v /= s;
  }
  std::size_t prev = d.size() + 1;
  for (double z = 0.0; z < 1.0; z += 0.01) {
    const auto b = filter_pseudo_labels(d, z);
    CHECK(b.size() <= prev);
    for (double c : b.confidences) CHECK(c > z);
    prev = b.size();
  }
}

TEST_CASE("coupled losses, hand-built cases") {
  const std::vector<DualOutput> target{dual({0.9, 0.05, 0.05}, {0.6, 0.3, 0.1}),
                                       dual({0.5, 0.3, 0.2}, {0.1, 0.1, 0.8}),
                                       dual({0.1, 0.85, 0.05}, {0.2, 0.7, 0.1})};
  const std::vector<DualOutput> source{dual({0.7, 0.2, 0.1}, {0.4, 0.4, 0.2}), dual({0.2, 0.2, 0.6}, {0.1, 0.3, 0.6})};
  const std::vector<SurvivalLabel> labels{{1, 1}, {3, 1}};
  Tape t;
  // MP keeps targets 0 (bin 1) and 2 (bin 2); SP keeps target 1 (bin 3).
  const double l1 = coupled_loss_l1(t, source, labels, target, 0.8).item();
  CHECK(l1 == doctest::Approx(-(std::log(0.6) + std::log(0.7)) / 2 - (std::log(0.7) + std::log(0.6)) / 2).epsilon(1e-14));
  const double l2 = coupled_loss_l2(t, source, labels, target, 0.79).item();
  CHECK(l2 == doctest::Approx(-std::log(0.2) - (std::log(0.4) + std::log(0.6)) / 2).epsilon(1e-14));

  SUBCASE("empty filter leaves the source term") {
    const double only = coupled_loss_l1(t, source, labels, target, 0.95).item();
    CHECK(only == doctest::Approx(-(std::log(0.7) + std::log(0.6)) / 2).epsilon(1e-14));
    const double only2 = coupled_loss_l2(t, source, labels, target, 0.95).item();
    CHECK(only2 == doctest::Approx(-(std::log(0.4) + std::log(0.6)) / 2).epsilon(1e-14));
  }
  SUBCASE("censored source graphs are left out of the supervised term") {
    const std::vector<SurvivalLabel> cens{{1, 1}, {3, 0}};
    const double v = coupled_loss_l1(t, source, cens, target, 0.95).item();
    CHECK(v == doctest::Approx(-std::log(0.7)).epsilon(1e-14));
  }
  SUBCASE("one-hot fit drives the loss to zero") {
    const std::vector<DualOutput> tg{dual({1.0, 0.0, 0.0}, {1.0, 0.0, 0.0})};
    const std::vector<DualOutput> sr{dual({0.0, 1.0, 0.0}, {0.0, 1.0, 0.0})};
    const std::vector<SurvivalLabel> lb{{2, 1}};
    CHECK(coupled_loss_l1(t, sr, lb, tg, 0.8).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(coupled_loss_l2(t, sr, lb, tg, 0.8).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("identical branches give L1 = L2") {
    std::vector<DualOutput> tg, sr;
    for (const auto& o : target) tg.push_back({o.mp, o.mp});
    for (const auto& o : source) sr.push_back({o.sp, o.sp});
    CHECK(coupled_loss_l1(t, sr, labels, tg, 0.5).item() == coupled_loss_l2(t, sr, labels, tg, 0.5).item());
  }
  CHECK_THROWS_AS(coupled_loss_l1(t, std::vector<DualOutput>{}, std::vector<SurvivalLabel>{}, target, 0.8),
                  std::invalid_argument);
}

TEST_CASE("pseudo-label term does not reach the teacher") {
  const auto p = DualEncoderParams::initialize(small_config(), 2);
  std::mt19937_64 rng(2);
  auto src = random_prepared(3, 6, rng);
  auto tgt = random_prepared(5, 6, rng, 1.0);
  std::vector<SurvivalLabel> censored(3, SurvivalLabel{2, 0});  // no supervised term
  for (auto [teacher, student] : {std::pair{Branch::mp, Branch::sp}, std::pair{Branch::sp, Branch::mp}}) {
    for (auto x : p.encoder_tensors()) x.clear_grad();
    Tape t;
    std::vector<DualOutput> s, g;
    for (auto& x : src) s.push_back(dual_forward(t, x, p));
    for (auto& x : tgt) g.push_back(dual_forward(t, x, p));
    auto loss = coupled_loss(t, teacher, s, censored, g, 0.0);
    t.backward(loss);
    const auto teacher_params = teacher == Branch::mp ? p.mp_tensors() : p.sp_tensors();
    const auto student_params = student == Branch::mp ? p.mp_tensors() : p.sp_tensors();
    for (const auto& x : teacher_params)
      if (x.has_grad())
        for (double v : x.grad()) CHECK(v == 0.0);
    double student_mass = 0;
    for (const auto& x : student_params)
      if (x.has_grad())
        for (double v : x.grad()) student_mass += std::abs(v);
    CHECK(student_mass > 0.0);
  }
}

TEST_CASE("coupled loss and L_AP gradients") {
  const auto p = DualEncoderParams::initialize(small_config(), 3);
  std::mt19937_64 rng(3);
  auto src = random_prepared(3, 7, rng);
  auto tgt = random_prepared(3, 7, rng, 0.5);
  std::vector<SurvivalLabel> labels{{1, 1}, {2, 1}, {3, 0}};
  auto l1 = [&](Tape& t) {
    std::vector<DualOutput> s, g;
    for (auto& x : src) s.push_back(dual_forward(t, x, p));
    for (auto& x : tgt) g.push_back(dual_forward(t, x, p));
    return coupled_loss_l1(t, s, labels, g, 0.3);
  };
  auto lap = [&](Tape& t) {
    std::vector<DualOutput> s, g;
    for (auto& x : src) s.push_back(dual_forward(t, x, p));
    for (auto& x : tgt) g.push_back(dual_forward(t, x, p));
    return adversarial_loss_dual(t, s, g, p);
  };
  auto check = [&](auto&& loss, const std::vector<Tensor>& params) {
    for (auto x : p.named_tensors()) x.second.clear_grad();
    {
      Tape t;
      t.backward(loss(t));
    }
    for (auto x : params) {
      std::vector<double> a(x.has_grad() ? x.grad().size() : x.size(), 0.0);
      if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), a.begin());
      const auto fd = oracle::numeric_grad(x, [&] {
        Tape t;
        return loss(t).item();
      });
      CHECK(oracle::rel_error(a, fd) < 1e-4);
    }
  };
  check(l1, p.sp_tensors());
  check(l1, p.mp_tensors());
  check(lap, p.encoder_tensors());
  check(lap, p.dclf_tensors());
}

TEST_CASE("adversarial loss values") {
  auto p = DualEncoderParams::initialize(small_config(), 4);
  for (auto& [name, t] : p.named_tensors())
    if (name.rfind("dclf", 0) == 0)
      for (double& v : t.data()) v = 0.0;
  std::vector<BranchOutput> s{with_hazard({0.2, 0.3, 0.5}, 4)}, g{with_hazard({0.1, 0.1, 0.8}, 4)};
  Tape t;
  CHECK(adversarial_loss(t, s, g, p).item() == doctest::Approx(2 * std::log(0.5)).epsilon(1e-15));
  CHECK(adversarial_loss(t, s, g, p).item() == doctest::Approx(-1.386294).epsilon(1e-6));
  CHECK_THROWS_AS(adversarial_loss(t, s, std::vector<BranchOutput>{}, p), std::invalid_argument);

  // a classifier that separates the two embeddings perfectly
  s[0].graph_embedding = Tensor(1, 4, {1, 0, 0, 0});
  g[0].graph_embedding = Tensor(1, 4, {-1, 0, 0, 0});
  p.dclf.w1.at(0, 0) = 100.0;
  p.dclf.w1.at(0, 1) = -100.0;
  p.dclf.w2.at(0, 0) = 1.0;
  p.dclf.w2.at(1, 0) = -1.0;
  const double perfect = adversarial_loss(t, s, g, p).item();
  CHECK(perfect <= 0.0);
  CHECK(perfect > -1e-9);

  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const auto q = DualEncoderParams::initialize(small_config(), 40 + rep);
    for (auto& [name, x] : q.named_tensors())
      for (double& v : x.data()) v *= 30.0;  // push D to saturation
    std::vector<BranchOutput> a, b;
    for (int i = 0; i < 3; ++i) {
      BranchOutput o;
      o.graph_embedding = oracle::random_tensor(1, 4, rng, -5, 5);
      o.hazard = Tensor::row({0.3, 0.3, 0.4});
      a.push_back(o);
      o.graph_embedding = oracle::random_tensor(1, 4, rng, -5, 5);
      b.push_back(o);
    }
    const double v = adversarial_loss(t, a, b, q).item();
    CHECK(std::isfinite(v));
    CHECK(v <= 0.0);
  }
}

TEST_CASE("projection") {
  CHECK(project_perturbation(Tensor::row({3, 4}), 10.0).to_vector() == std::vector<double>{3, 4});
  const auto p = project_perturbation(Tensor::row({3, 4}), 1.0).to_vector();
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(project_perturbation(Tensor::row({0, 0}), 1.0).to_vector() == std::vector<double>{0, 0});
  CHECK(project_perturbation(Tensor::row({3, 4}), 0.0).to_vector() == std::vector<double>{0, 0});
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = oracle::random_tensor(5, 3, rng, -2, 2);
    const auto once = project_perturbation(d, 0.7);
    const auto twice = project_perturbation(once, 0.7).to_vector();
    for (std::size_t i = 0; i < twice.size(); ++i) CHECK(twice[i] == doctest::Approx(once.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("adversarial rounds respect the epsilon ball") {
  for (double eps : {0.0, 0.05, 0.5}) {
    CAPTURE(eps);
    const auto p = DualEncoderParams::initialize(small_config(), 6);
    std::mt19937_64 rng(6);
    const auto src = random_prepared(8, 6, rng);
    const auto tgt = random_prepared(8, 6, rng, 2.0);
    auto delta = Perturbations::zeros(src, eps);
    Optimizer dopt({OptimizerConfig::Kind::adam, 1e-2}, p.dclf_tensors());
    Optimizer eopt({OptimizerConfig::Kind::adam, 1e-3}, p.encoder_tensors());
    AdversarialConfig cfg;
    cfg.delta_lr = 0.2;
    std::vector<std::size_t> si{0, 1, 2, 3}, sj{4, 5, 6, 7}, ti{0, 1, 2, 3};
    for (int round = 0; round < 30; ++round) {
      adversarial_round(src, round % 2 ? sj : si, tgt, ti, p, delta, dopt, &eopt, cfg);
      CHECK(delta.max_row_norm() <= eps + 1e-12);
    }
    if (eps == 0.0) CHECK(delta.max_row_norm() == 0.0);
    if (eps > 0.0) CHECK(delta.max_row_norm() > 0.0);
  }
}

TEST_CASE("classifier ascent does not lower L_AP on its batch") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = DualEncoderParams::initialize(small_config(), 70 + rep);
    const auto src = random_prepared(4, 6, rng);
    const auto tgt = random_prepared(4, 6, rng, 1.0);
    auto delta = Perturbations::zeros(src, 0.5);
    Optimizer dopt({OptimizerConfig::Kind::sgd, 1e-3}, p.dclf_tensors());
    AdversarialConfig cfg;
    cfg.update_encoder = false;
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto stats = adversarial_round(src, idx, tgt, idx, p, delta, dopt, nullptr, cfg);
    CHECK(stats.loss_after_ascent >= stats.loss_before);
  }
}

namespace {

// Fraction of graphs the classifier puts on the right side of 0.5, both branches.
double d_accuracy(const std::vector<PreparedGraph>& src, const std::vector<PreparedGraph>& tgt,
                  const DualEncoderParams& p) {
  double right = 0, total = 0;
  Tape t;
  for (auto* set : {&src, &tgt})
    for (const auto& g : *set) {
      const auto o = dual_forward(t, g, p);
      for (const auto* b : {&o.mp, &o.sp}) {
        const double d = domain_classifier(t, b->graph_embedding, b->hazard, p).item();
        right += (set == &src) == (d > 0.5);
        total += 1;
      }
    }
  return right / total;
}

std::vector<PreparedGraph> toy(int count, double centre, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<PreparedGraph> out;
  for (int i = 0; i < count; ++i) {
    WSIGraph g;
    g.features = Tensor(4, 2);
    for (std::size_t v = 0; v < 4; ++v) {
      g.features.at(v, 0) = centre + noise(rng);
      g.features.at(v, 1) = noise(rng);
    }
    g.edges = {{0, 1}, {1, 2}, {2, 3}};
    out.emplace_back(g, 2);
  }
  return out;
}

}  // namespace

TEST_CASE("1-D toy: adversarial rounds confuse the classifier") {
  std::mt19937_64 rng(8);
  const auto src = toy(16, 1.0, rng);
  const auto tgt = toy(16, -1.0, rng);
  std::vector<std::size_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);

  auto run = [&](bool adapt_encoder) {
    auto p = DualEncoderParams::initialize(small_config(), 8);
    auto frozen = Perturbations::zeros(src, 0.0);
    Optimizer dopt({OptimizerConfig::Kind::adam, 1e-2}, p.dclf_tensors());
    Optimizer eopt({OptimizerConfig::Kind::adam, 1e-2}, p.encoder_tensors());
    AdversarialConfig warm;
    warm.update_encoder = false;
    // train D alone first
    for (int r = 0; r < 100; ++r) adversarial_round(src, idx, tgt, idx, p, frozen, dopt, nullptr, warm);
    auto delta = Perturbations::zeros(src, adapt_encoder ? 0.5 : 0.0);
    const double before = d_accuracy(src, tgt, p);
    AdversarialConfig cfg;
    cfg.update_encoder = adapt_encoder;
    for (int r = 0; r < 200; ++r) adversarial_round(src, idx, tgt, idx, p, delta, dopt, &eopt, cfg);
    return std::pair{before, d_accuracy(src, tgt, p)};
  };
  const auto [ctrl_before, ctrl_after] = run(false);
  const auto [before, after] = run(true);
  CAPTURE(ctrl_before);
  CAPTURE(ctrl_after);
  CAPTURE(before);
  CAPTURE(after);
  CHECK(before >= 0.95);
  CHECK(ctrl_after >= 0.95);
  CHECK(after <= 0.75);
}
