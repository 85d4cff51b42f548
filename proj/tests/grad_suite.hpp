#pragma once
// Finite-difference checks shared by the unit tests and the acceptance run.

#include <functional>
#include <string>

#include "deta/alignment.hpp"
#include "deta/survival.hpp"
#include "oracles.hpp"

namespace gradcheck {

using deta::ad::Tape;
using deta::ad::Tensor;

using OpFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;
using MakeInputs = std::function<std::vector<Tensor>(std::mt19937_64&)>;

// Gradient of sum(W * op(inputs)) against central differences, 20 random draws.
inline double worst_op_error(const MakeInputs& make, const OpFn& op, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto inputs = make(rng);
    Tensor weights;
    auto value = [&]() {
      Tape t;
      auto out = op(t, inputs);
      if (weights.size() == 0) weights = oracle::random_tensor(out.rows(), out.cols(), rng);
      return t.sum(t.mul(out, weights)).item();
    };
    value();
    for (auto& x : inputs) x.clear_grad();
    {
      Tape t;
      auto loss = t.sum(t.mul(op(t, inputs), weights));
      t.backward(loss);
    }
    for (auto& x : inputs) {
      std::vector<double> g(x.grad().begin(), x.grad().end());
      worst = std::max(worst, oracle::rel_error(g, oracle::numeric_grad(x, value)));
    }
  }
  return worst;
}

inline MakeInputs shapes(std::vector<std::pair<std::size_t, std::size_t>> dims, double lo = -1, double hi = 1) {
  return [=](std::mt19937_64& rng) {
    std::vector<Tensor> v;
    for (auto [r, c] : dims) v.push_back(oracle::random_tensor(r, c, rng, lo, hi));
    return v;
  };
}

// Values bounded away from zero so a kink is never straddled.
inline MakeInputs away_from_zero(std::size_t r, std::size_t c) {
  return [=](std::mt19937_64& rng) {
    auto t = oracle::random_tensor(r, c, rng, 0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data())
      if (sign(rng)) v = -v;
    return std::vector<Tensor>{t};
  };
}


struct OpCase {
  const char* name;
  MakeInputs make;
  OpFn op;
};

// Every tape primitive, plus one composition.
inline std::vector<OpCase> op_cases() {
  return std::vector<OpCase>{
      {"matmul", shapes({{3, 4}, {4, 2}}), [](Tape& t, auto& x) { return t.matmul(x[0], x[1]); }},
      {"add", shapes({{3, 4}, {3, 4}}), [](Tape& t, auto& x) { return t.add(x[0], x[1]); }},
      {"add_broadcast", shapes({{3, 4}, {1, 4}}), [](Tape& t, auto& x) { return t.add(x[0], x[1]); }},
      {"sub", shapes({{3, 4}, {1, 4}}), [](Tape& t, auto& x) { return t.sub(x[0], x[1]); }},
      {"mul", shapes({{3, 4}, {3, 4}}), [](Tape& t, auto& x) { return t.mul(x[0], x[1]); }},
      {"neg", shapes({{2, 3}}), [](Tape& t, auto& x) { return t.neg(x[0]); }},
      {"scale", shapes({{2, 3}}), [](Tape& t, auto& x) { return t.scale(x[0], -1.7); }},
      {"add_scalar", shapes({{2, 3}}), [](Tape& t, auto& x) { return t.add_scalar(x[0], 0.3); }},
      {"log", shapes({{2, 3}}, 0.2, 2.0), [](Tape& t, auto& x) { return t.log(x[0]); }},
      {"exp", shapes({{2, 3}}), [](Tape& t, auto& x) { return t.exp(x[0]); }},
      {"sigmoid", shapes({{2, 3}}, -3, 3), [](Tape& t, auto& x) { return t.sigmoid(x[0]); }},
      {"relu", away_from_zero(3, 3), [](Tape& t, auto& x) { return t.relu(x[0]); }},
      {"clamp", away_from_zero(3, 3), [](Tape& t, auto& x) { return t.clamp(x[0], -0.5 + 1e-3, 0.5 + 1e-3); }},
      {"softmax_rows", shapes({{3, 4}}, -2, 2), [](Tape& t, auto& x) { return t.softmax_rows(x[0]); }},
      {"sum", shapes({{3, 4}}), [](Tape& t, auto& x) { return t.sum(x[0]); }},
      {"mean", shapes({{3, 4}}), [](Tape& t, auto& x) { return t.mean(x[0]); }},
      {"mean_rows", shapes({{3, 4}}), [](Tape& t, auto& x) { return t.mean_rows(x[0]); }},
      {"concat_rows", shapes({{2, 3}, {1, 3}}),
       [](Tape& t, auto& x) { return t.concat_rows(std::span<const Tensor>(x.data(), 2)); }},
      {"concat_cols", shapes({{2, 3}, {2, 1}}), [](Tape& t, auto& x) { return t.concat_cols(x[0], x[1]); }},
      {"select_rows", shapes({{3, 2}}), [](Tape& t, auto& x) {
         const std::vector<std::size_t> rows{0, 2};
         return t.select_rows(x[0], rows);
       }},
      {"select_cols", shapes({{2, 3}}), [](Tape& t, auto& x) {
         const std::vector<std::size_t> cols{2, 0, 1};
         return t.select_cols(x[0], cols);
       }},
      // composed: a small perceptron with a log-softmax output
      {"composed", shapes({{4, 3}, {3, 5}, {1, 5}}, -1, 1),
       [](Tape& t, auto& x) {
         auto h = t.sigmoid(t.add(t.matmul(x[0], x[1]), x[2]));
         return t.log(t.softmax_rows(h));
       }},
  };
}

// ---- end-to-end losses --------------------------------------------------------

struct LossErrors {
  double surv = 0, l1 = 0, l2 = 0, ap = 0;
};

// Worst relative error of every parameter (and perturbation) gradient of each
// loss, computed through both encoder branches on small random graphs.
inline LossErrors loss_errors(std::uint64_t seed) {
  using namespace deta;
  EncoderConfig cfg;
  cfg.in_dim = 4;
  cfg.hidden = 4;
  cfg.head_hidden = 4;
  cfg.dclf_hidden = 4;
  cfg.k_sp = 2;
  cfg.k_bins = 3;
  const auto p = DualEncoderParams::initialize(cfg, seed);
  std::mt19937_64 rng(seed);
  // zero biases put relu inputs exactly on the kink whenever an embedding
  // entry is zero; move them off it
  for (auto& [name, x] : p.named_tensors())
    if (name.find(".b") != std::string::npos)
      for (auto& v : x.data()) v = std::uniform_real_distribution<double>(0.05, 0.2)(rng);
  std::vector<PreparedGraph> src, tgt;
  std::vector<SurvivalLabel> labels;
  for (int i = 0; i < 3; ++i) {
    auto s = oracle::random_graph(6 + i, 4, 0.4, rng);
    src.emplace_back(s, 2);
    labels.push_back({1 + i, i == 1 ? 0 : 1});
    auto t = oracle::random_graph(10 - i, 4, 0.4, rng);
    for (auto& v : t.features.data()) v += 0.5;
    tgt.emplace_back(t, 2);
  }
  auto deltas = align::Perturbations::zeros(src, 1.0);
  for (auto* set : {&deltas.delta_mp, &deltas.delta_sp})
    for (auto& d : *set)
      for (auto& v : d.data()) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);

  auto forward = [&](Tape& t, std::vector<align::DualOutput>& s, std::vector<align::DualOutput>& g) {
    for (std::size_t i = 0; i < src.size(); ++i)
      s.push_back(align::dual_forward(t, src[i], p, &deltas.delta_mp[i], &deltas.delta_sp[i]));
    for (const auto& x : tgt) g.push_back(align::dual_forward(t, x, p));
  };
  using LossFn = std::function<Tensor(Tape&)>;
  const LossFn surv = [&](Tape& t) {
    std::vector<align::DualOutput> s, g;
    forward(t, s, g);
    std::vector<Tensor> hm, hs;
    for (const auto& o : s) {
      hm.push_back(o.mp.hazard);
      hs.push_back(o.sp.hazard);
    }
    return t.add(survival::surv_nll(t, hm, labels), survival::surv_nll(t, hs, labels));
  };
  const LossFn l1 = [&](Tape& t) {
    std::vector<align::DualOutput> s, g;
    forward(t, s, g);
    return align::coupled_loss_l1(t, s, labels, g, 0.2);
  };
  const LossFn l2 = [&](Tape& t) {
    std::vector<align::DualOutput> s, g;
    forward(t, s, g);
    return align::coupled_loss_l2(t, s, labels, g, 0.2);
  };
  const LossFn ap = [&](Tape& t) {
    std::vector<align::DualOutput> s, g;
    forward(t, s, g);
    return align::adversarial_loss_dual(t, s, g, p);
  };

  std::vector<Tensor> wrt;
  for (const auto& [name, x] : p.named_tensors()) wrt.push_back(x);
  for (const auto& d : deltas.delta_mp) wrt.push_back(d);
  for (const auto& d : deltas.delta_sp) wrt.push_back(d);

  auto worst = [&](const LossFn& loss) {
    for (auto& x : wrt) x.clear_grad();
    {
      Tape t;
      t.backward(loss(t));
    }
    double w = 0.0;
    for (auto& x : wrt) {
      std::vector<double> a(x.size(), 0.0);
      if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), a.begin());
      const auto fd = oracle::numeric_grad(x, [&] {
        Tape t;
        return loss(t).item();
      });
      w = std::max(w, oracle::rel_error(a, fd));
    }
    return w;
  };
  return {worst(surv), worst(l1), worst(l2), worst(ap)};
}

}  // namespace gradcheck
