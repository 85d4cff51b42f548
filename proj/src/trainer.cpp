#include "deta/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include "deta/error.hpp"
#include "deta/log.hpp"

namespace deta {

using ad::Tape;
using ad::Tensor;

void TrainConfig::validate() const {
  encoder.validate();
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("train.") + name + " must be positive");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0)) throw ConfigError(std::string("train.") + name + " must be non-negative");
  };
  positive(static_cast<double>(knn_k), "knn_k");
  positive(lr_encoder, "lr_encoder");
  positive(lr_adapt, "lr_adapt");
  positive(lr_dclf, "lr_dclf");
  positive(lr_delta, "lr_delta");
  positive(static_cast<double>(batch_size), "batch_size");
  non_negative(epsilon, "epsilon");
  non_negative(lambda_surv, "lambda_surv");
  non_negative(lambda_1, "lambda_1");
  non_negative(lambda_2, "lambda_2");
  non_negative(lambda_ap, "lambda_ap");
  if (zeta < 0.0 || zeta >= 1.0) throw ConfigError("train.zeta must be in [0, 1)");
}

namespace {

ad::OptimizerConfig opt_config(const TrainConfig& c, double lr) {
  ad::OptimizerConfig o;
  o.kind = c.optimizer;
  o.lr = lr;
  return o;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void require_labeled(const std::vector<WSIGraph>& graphs, const char* what) {
  if (graphs.empty()) throw std::invalid_argument(std::string(what) + ": no graphs");
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if (!graphs[i].label) throw std::invalid_argument(std::string(what) + ": graph " + std::to_string(i) + " is unlabeled");
}

Tensor branch_nll(Tape& tape, const std::vector<Tensor>& hazards, const std::vector<SurvivalLabel>& labels) {
  return tape.scale(survival::surv_nll(tape, hazards, labels), 1.0 / static_cast<double>(hazards.size()));
}

}  // namespace

PretrainResult pretrain(const std::vector<WSIGraph>& source, const TrainConfig& config) {
  config.validate();
  require_labeled(source, "pretrain");
  PretrainResult result{DualEncoderParams::initialize(config.encoder, config.seed), {}};
  const auto graphs = prepare_all(source, config.encoder.k_sp);
  ad::Optimizer opt(opt_config(config, config.lr_encoder), result.params.encoder_tensors());
  std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);

  for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    const auto order = shuffled(graphs.size(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      std::vector<Tensor> h_mp, h_sp;
      std::vector<SurvivalLabel> labels;
      for (std::size_t b = start; b < end; ++b) {
        const auto& g = graphs[order[b]];
        h_mp.push_back(mp_forward(tape, g, result.params).hazard);
        h_sp.push_back(sp_forward(tape, g, result.params).hazard);
        labels.push_back(*g.graph.label);
      }
      auto loss = tape.add(branch_nll(tape, h_mp, labels), branch_nll(tape, h_sp, labels));
      total += loss.item() * static_cast<double>(end - start);
      opt.prepare();
      tape.backward(loss);
      opt.step();
    }
    result.loss_trace.push_back(total / static_cast<double>(graphs.size()));
    log::info("pretrain epoch " + std::to_string(epoch) + " loss " + std::to_string(result.loss_trace.back()));
  }
  return result;
}

AdaptResult adapt(const DualEncoderParams& initial, const std::vector<WSIGraph>& source,
                  const std::vector<WSIGraph>& target, const TrainConfig& config,
                  const EpochObserver& observer) {
  config.validate();
  require_same_config(config.encoder, initial.config);
  require_labeled(source, "adapt (source)");
  if (target.empty()) throw std::invalid_argument("adapt: no target graphs");

  std::vector<WSIGraph> unlabeled = target;
  std::size_t leaked = 0;
  for (auto& g : unlabeled)
    if (g.label) {
      g.label.reset();
      ++leaked;
    }
  if (leaked > 0)
    log::warn("adapt: ignoring labels on " + std::to_string(leaked) + " target graphs");

  AdaptResult result{initial.clone(), {}, 0, 0, 0, 0.0};
  auto& params = result.params;
  const auto src = prepare_all(source, config.encoder.k_sp);
  const auto tgt = prepare_all(unlabeled, config.encoder.k_sp);
  auto deltas = align::Perturbations::zeros(src, config.epsilon);

  ad::Optimizer enc_opt(opt_config(config, config.lr_adapt), params.encoder_tensors());
  ad::Optimizer dclf_opt(opt_config(config, config.lr_dclf), params.dclf_tensors());
  align::AdversarialConfig adv;
  adv.n_d = config.n_d;
  adv.delta_lr = config.lr_delta;
  adv.weight = config.lambda_ap;
  adv.update_encoder = config.lambda_ap > 0.0;

  std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 2);
  std::vector<std::size_t> target_order = shuffled(tgt.size(), rng);
  std::size_t target_pos = 0;

  for (std::size_t epoch = 0; epoch < config.adapt_epochs; ++epoch) {
    const auto order = shuffled(src.size(), rng);
    AdaptEpoch ep;
    std::size_t n_iter = 0, n_l1 = 0, n_l2 = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> s_idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> t_idx;
      for (std::size_t b = 0; b < s_idx.size(); ++b) {
        if (target_pos == target_order.size()) {
          target_order = shuffled(tgt.size(), rng);
          target_pos = 0;
        }
        t_idx.push_back(target_order[target_pos++]);
      }

      if (config.lambda_ap > 0.0) {
        auto stats = align::adversarial_round(src, s_idx, tgt, t_idx, params, deltas, dclf_opt, &enc_opt, adv);
        ep.ap += stats.loss_before;
      }

      const bool use_l1 = result.iterations % 2 == 0;
      const double lambda_c = use_l1 ? config.lambda_1 : config.lambda_2;
      Tape tape;
      std::vector<align::DualOutput> s_out, t_out;
      std::vector<SurvivalLabel> labels;
      for (auto i : s_idx) {
        const bool perturb = config.perturb_supervised && config.lambda_ap > 0.0;
        s_out.push_back(align::dual_forward(tape, src[i], params, perturb ? &deltas.delta_mp[i] : nullptr,
                                            perturb ? &deltas.delta_sp[i] : nullptr));
        labels.push_back(*src[i].graph.label);
      }
      std::vector<Tensor> h_mp, h_sp;
      for (const auto& o : s_out) {
        h_mp.push_back(o.mp.hazard);
        h_sp.push_back(o.sp.hazard);
      }
      auto surv = tape.add(branch_nll(tape, h_mp, labels), branch_nll(tape, h_sp, labels));
      Tensor loss = tape.scale(surv, config.lambda_surv);
      if (lambda_c > 0.0) {
        for (auto j : t_idx) t_out.push_back(align::dual_forward(tape, tgt[j], params));
        auto coupled = use_l1 ? align::coupled_loss_l1(tape, s_out, labels, t_out, config.zeta)
                              : align::coupled_loss_l2(tape, s_out, labels, t_out, config.zeta);
        (use_l1 ? ep.l1 : ep.l2) += coupled.item();
        loss = tape.add(loss, tape.scale(coupled, lambda_c));
      }
      (use_l1 ? n_l1 : n_l2) += 1;
      (use_l1 ? result.l1_steps : result.l2_steps) += 1;
      ep.surv += surv.item();
      enc_opt.prepare();
      tape.backward(loss);
      for (auto t : params.dclf_tensors()) t.clear_grad();
      for (auto i : s_idx) {
        deltas.delta_mp[i].clear_grad();
        deltas.delta_sp[i].clear_grad();
      }
      enc_opt.step();
      ++n_iter;
      ++result.iterations;
    }
    ep.surv /= static_cast<double>(n_iter);
    ep.ap /= static_cast<double>(n_iter);
    if (n_l1 > 0) ep.l1 /= static_cast<double>(n_l1);
    if (n_l2 > 0) ep.l2 /= static_cast<double>(n_l2);
    for (double v : {ep.surv, ep.l1, ep.l2, ep.ap})
      if (!std::isfinite(v)) throw std::runtime_error("adapt: non-finite loss in epoch " + std::to_string(epoch));
    result.trace.push_back(ep);
    log::info("adapt epoch " + std::to_string(epoch) + " surv " + std::to_string(ep.surv) + " l1 " +
              std::to_string(ep.l1) + " l2 " + std::to_string(ep.l2) + " ap " + std::to_string(ep.ap));
    if (observer) observer(epoch, params);
  }
  result.max_delta_norm = deltas.max_row_norm();
  return result;
}

EvalResult evaluate(const DualEncoderParams& params, const std::vector<WSIGraph>& labeled, std::size_t threads) {
  require_labeled(labeled, "evaluate");
  const std::size_t n = labeled.size();
  EvalResult r;
  r.hazards.resize(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      r.hazards[i] = fused_predict(PreparedGraph(labeled[i], params.config.k_sp), params);
  };
  threads = std::clamp<std::size_t>(threads, 1, n);
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(work, std::min(n, t * chunk), std::min(n, (t + 1) * chunk));
  }

  std::vector<int> times, censors;
  for (std::size_t i = 0; i < n; ++i) {
    r.risks.push_back(survival::risk_score(r.hazards[i]));
    const auto& h = r.hazards[i];
    r.predicted_bins.push_back(static_cast<int>(std::max_element(h.begin(), h.end()) - h.begin()) + 1);
    times.push_back(labeled[i].label->time_bin);
    censors.push_back(labeled[i].label->censor);
  }
  r.c_index = survival::c_index(r.risks, times, censors);

  std::vector<double> sorted = r.risks;
  std::sort(sorted.begin(), sorted.end());
  r.median_risk = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<survival::TimeEvent> low, high;
  std::vector<double> low_t, high_t;
  std::vector<int> low_e, high_e;
  for (std::size_t i = 0; i < n; ++i) {
    const survival::TimeEvent te{static_cast<double>(times[i]), censors[i]};
    if (r.risks[i] > r.median_risk) {
      high.push_back(te);
      high_t.push_back(te.time);
      high_e.push_back(te.event);
    } else {
      low.push_back(te);
      low_t.push_back(te.time);
      low_e.push_back(te.event);
    }
  }
  if (!low.empty()) r.km_low = survival::kaplan_meier(low_t, low_e);
  if (!high.empty()) r.km_high = survival::kaplan_meier(high_t, high_e);
  if (!low.empty() && !high.empty()) r.log_rank = survival::log_rank(low, high);
  return r;
}

void write_pretrain_trace(std::ostream& out, const PretrainResult& r) {
  out.precision(17);
  out << "stage,epoch,term,value\n";
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) out << "pretrain," << e << ",surv," << r.loss_trace[e] << "\n";
}

void write_adapt_trace(std::ostream& out, const AdaptResult& r) {
  out.precision(17);
  out << "stage,epoch,term,value\n";
  for (std::size_t e = 0; e < r.trace.size(); ++e) {
    const auto& t = r.trace[e];
    out << "adapt," << e << ",surv," << t.surv << "\n";
    out << "adapt," << e << ",l1," << t.l1 << "\n";
    out << "adapt," << e << ",l2," << t.l2 << "\n";
    out << "adapt," << e << ",ap," << t.ap << "\n";
  }
}

}  // namespace deta
