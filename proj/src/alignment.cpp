#include "deta/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "deta/survival.hpp"

namespace deta::align {

using ad::Tape;
using ad::Tensor;

PseudoLabelBatch filter_pseudo_labels(std::span<const std::vector<double>> dists, double zeta) {
  if (zeta < 0.0 || zeta >= 1.0) throw std::invalid_argument("filter_pseudo_labels: zeta must be in [0, 1)");
  PseudoLabelBatch batch;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const auto& d = dists[i];
    if (d.empty()) continue;
    const auto best = std::max_element(d.begin(), d.end());  // first maximum on ties
    if (*best > zeta) {
      batch.kept_indices.push_back(i);
      batch.labels.push_back(static_cast<int>(best - d.begin()) + 1);
      batch.confidences.push_back(*best);
    }
  }
  return batch;
}

Tensor cross_entropy(Tape& tape, std::span<const Tensor> dists, std::span<const int> labels) {
  if (dists.empty()) throw std::invalid_argument("cross_entropy: no rows");
  if (dists.size() != labels.size()) throw std::invalid_argument("cross_entropy: length mismatch");
  std::vector<Tensor> picked;
  picked.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const auto col = static_cast<std::size_t>(labels[i] - 1);
    if (labels[i] < 1 || col >= dists[i].cols())
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    picked.push_back(tape.select_cols(dists[i], std::span(&col, 1)));
  }
  auto logs = tape.log(tape.clamp(tape.concat_rows(picked), survival::kProbFloor, 1.0));
  return tape.neg(tape.mean(logs));
}

Tensor coupled_loss(Tape& tape, Branch teacher, std::span<const DualOutput> source,
                    std::span<const SurvivalLabel> source_labels, std::span<const DualOutput> target,
                    double zeta) {
  if (source.empty()) throw std::invalid_argument("coupled_loss: empty source batch");
  if (source.size() != source_labels.size()) throw std::invalid_argument("coupled_loss: source labels length mismatch");
  const Branch student = teacher == Branch::mp ? Branch::sp : Branch::mp;

  std::vector<std::vector<double>> teacher_dists;
  teacher_dists.reserve(target.size());
  for (const auto& t : target) teacher_dists.push_back(t.of(teacher).hazard.to_vector());
  const auto pseudo = filter_pseudo_labels(teacher_dists, zeta);

  std::vector<Tensor> sup_dists;
  std::vector<int> sup_labels;
  for (std::size_t i = 0; i < source.size(); ++i)
    if (source_labels[i].censor == 1) {
      sup_dists.push_back(source[i].of(teacher).hazard);
      sup_labels.push_back(source_labels[i].time_bin);
    }

  Tensor total = Tensor::scalar(0.0);
  bool have = false;
  auto accumulate = [&](Tensor term) {
    total = have ? tape.add(total, term) : term;
    have = true;
  };
  if (pseudo.size() > 0) {
    std::vector<Tensor> student_dists;
    for (auto idx : pseudo.kept_indices) student_dists.push_back(target[idx].of(student).hazard);
    accumulate(cross_entropy(tape, student_dists, pseudo.labels));
  }
  if (!sup_dists.empty()) accumulate(cross_entropy(tape, sup_dists, sup_labels));
  if (!have) accumulate(tape.scale(tape.sum(source.front().of(teacher).hazard), 0.0));
  return total;
}

Tensor coupled_loss_l1(Tape& tape, std::span<const DualOutput> source, std::span<const SurvivalLabel> source_labels,
                       std::span<const DualOutput> target, double zeta) {
  return coupled_loss(tape, Branch::mp, source, source_labels, target, zeta);
}

Tensor coupled_loss_l2(Tape& tape, std::span<const DualOutput> source, std::span<const SurvivalLabel> source_labels,
                       std::span<const DualOutput> target, double zeta) {
  return coupled_loss(tape, Branch::sp, source, source_labels, target, zeta);
}

Tensor adversarial_loss(Tape& tape, std::span<const BranchOutput> source, std::span<const BranchOutput> target,
                        const DualEncoderParams& params) {
  if (source.empty() || target.empty()) throw std::invalid_argument("adversarial_loss: empty source or target side");
  constexpr double lo = survival::kProbFloor;
  constexpr double hi = 1.0 - survival::kProbFloor;
  std::vector<Tensor> src, tgt;
  for (const auto& s : source) src.push_back(domain_classifier(tape, s.graph_embedding, s.hazard, params));
  for (const auto& t : target) tgt.push_back(domain_classifier(tape, t.graph_embedding, t.hazard, params));
  auto log_d_src = tape.log(tape.clamp(tape.concat_rows(src), lo, hi));
  auto one_minus_tgt = tape.add_scalar(tape.neg(tape.concat_rows(tgt)), 1.0);
  auto log_1m_tgt = tape.log(tape.clamp(one_minus_tgt, lo, hi));
  return tape.add(tape.mean(log_1m_tgt), tape.mean(log_d_src));
}

Tensor adversarial_loss_dual(Tape& tape, std::span<const DualOutput> source, std::span<const DualOutput> target,
                             const DualEncoderParams& params) {
  std::vector<BranchOutput> s_mp, s_sp, t_mp, t_sp;
  for (const auto& s : source) {
    s_mp.push_back(s.mp);
    s_sp.push_back(s.sp);
  }
  for (const auto& t : target) {
    t_mp.push_back(t.mp);
    t_sp.push_back(t.sp);
  }
  auto mp = adversarial_loss(tape, s_mp, t_mp, params);
  auto sp = adversarial_loss(tape, s_sp, t_sp, params);
  return tape.scale(tape.add(mp, sp), 0.5);
}

void project_perturbation_inplace(Tensor& delta, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("project_perturbation: epsilon must be non-negative");
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < delta.cols(); ++c) sq += delta.at(r, c) * delta.at(r, c);
    const double norm = std::sqrt(sq);
    if (norm <= epsilon) continue;
    const double s = epsilon / norm;
    for (std::size_t c = 0; c < delta.cols(); ++c) delta.at(r, c) *= s;
  }
}

Tensor project_perturbation(const Tensor& delta, double epsilon) {
  Tensor out = delta.clone();
  out.clear_grad();
  project_perturbation_inplace(out, epsilon);
  return out;
}

Perturbations Perturbations::zeros(std::span<const PreparedGraph> graphs, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("perturbation epsilon must be non-negative");
  Perturbations p;
  p.epsilon = epsilon;
  for (const auto& g : graphs) {
    p.delta_mp.emplace_back(g.graph.num_nodes(), g.graph.feature_dim());
    p.delta_sp.emplace_back(g.graph.num_nodes(), g.graph.feature_dim());
  }
  return p;
}

double Perturbations::max_row_norm() const {
  double best = 0.0;
  for (const auto* set : {&delta_mp, &delta_sp})
    for (const auto& d : *set)
      for (std::size_t r = 0; r < d.rows(); ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < d.cols(); ++c) sq += d.at(r, c) * d.at(r, c);
        best = std::max(best, std::sqrt(sq));
      }
  return best;
}

DualOutput dual_forward(Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const Tensor* delta_mp, const Tensor* delta_sp) {
  return DualOutput{mp_forward(tape, g, params, delta_mp), sp_forward(tape, g, params, delta_sp)};
}

namespace {

BranchOutput detached(const BranchOutput& b) {
  BranchOutput out;
  out.graph_embedding = b.graph_embedding.clone();
  out.graph_embedding.clear_grad();
  out.hazard = b.hazard.clone();
  out.hazard.clear_grad();
  return out;
}

// Row-normalized descent: each row moves delta_lr along its negative gradient direction.
void descend_rows(Tensor& delta, double lr) {
  if (!delta.has_grad()) return;
  auto g = delta.grad();
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < delta.cols(); ++c) sq += g[r * delta.cols() + c] * g[r * delta.cols() + c];
    if (sq == 0.0) continue;
    const double s = lr / std::sqrt(sq);
    for (std::size_t c = 0; c < delta.cols(); ++c) delta.at(r, c) -= s * g[r * delta.cols() + c];
  }
  delta.clear_grad();
}

}  // namespace

RoundStats adversarial_round(std::span<const PreparedGraph> source, std::span<const std::size_t> source_idx,
                             std::span<const PreparedGraph> target, std::span<const std::size_t> target_idx,
                             const DualEncoderParams& params, Perturbations& perturbations,
                             ad::Optimizer& dclf_opt, ad::Optimizer* encoder_opt, const AdversarialConfig& config) {
  if (source_idx.empty() || target_idx.empty()) throw std::invalid_argument("adversarial_round: empty batch");
  RoundStats stats;

  // Encoder forward once; it stays valid through the ascent phase because
  // neither the encoder nor the deltas change there.
  Tape tape;
  std::vector<DualOutput> src, tgt;
  for (auto i : source_idx)
    src.push_back(dual_forward(tape, source[i], params, &perturbations.delta_mp[i], &perturbations.delta_sp[i]));
  for (auto j : target_idx) tgt.push_back(dual_forward(tape, target[j], params));

  std::vector<DualOutput> src_const, tgt_const;
  for (const auto& s : src) src_const.push_back({detached(s.mp), detached(s.sp)});
  for (const auto& t : tgt) tgt_const.push_back({detached(t.mp), detached(t.sp)});

  for (std::size_t step = 0; step < config.n_d; ++step) {
    Tape dtape;
    auto loss = adversarial_loss_dual(dtape, src_const, tgt_const, params);
    if (step == 0) stats.loss_before = loss.item();
    dclf_opt.prepare();
    dtape.backward(dtape.neg(loss));
    dclf_opt.step();
  }
  {
    Tape dtape;
    stats.loss_after_ascent = adversarial_loss_dual(dtape, src_const, tgt_const, params).item();
    if (config.n_d == 0) stats.loss_before = stats.loss_after_ascent;
  }

  auto loss = adversarial_loss_dual(tape, src, tgt, params);
  if (encoder_opt && config.update_encoder) encoder_opt->prepare();
  tape.backward(loss);
  for (auto t : params.dclf_tensors()) t.clear_grad();

  for (auto i : source_idx) {
    descend_rows(perturbations.delta_mp[i], config.delta_lr);
    descend_rows(perturbations.delta_sp[i], config.delta_lr);
    project_perturbation_inplace(perturbations.delta_mp[i], perturbations.epsilon);
    project_perturbation_inplace(perturbations.delta_sp[i], perturbations.epsilon);
  }

  auto enc = params.encoder_tensors();
  if (encoder_opt && config.update_encoder) {
    for (auto& t : enc)
      for (double& g : t.grad()) g *= config.weight;
    encoder_opt->step();
  } else {
    for (auto& t : enc) t.clear_grad();
  }
  return stats;
}

}  // namespace deta::align
