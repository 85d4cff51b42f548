#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deta/autodiff.hpp"
#include "deta/encoder.hpp"
#include "deta/graph.hpp"

namespace deta::align {

/// Target graphs whose filtering-branch confidence exceeds the threshold.
struct PseudoLabelBatch {
  std::vector<std::size_t> kept_indices;
  std::vector<int> labels;  // 1-based bins
  std::vector<double> confidences;

  std::size_t size() const { return kept_indices.size(); }
};

/// Keeps distributions whose maximum is strictly above zeta. The label is the
/// argmax, ties to the smaller bin.
PseudoLabelBatch filter_pseudo_labels(std::span<const std::vector<double>> dists, double zeta);

/// Outputs of both branches for one graph.
struct DualOutput {
  BranchOutput mp;
  BranchOutput sp;

  const BranchOutput& of(Branch b) const { return b == Branch::mp ? mp : sp; }
};

/// Cross-entropy -mean log p(label) over rows, probabilities floored at 1e-12.
ad::Tensor cross_entropy(ad::Tape& tape, std::span<const ad::Tensor> dists, std::span<const int> labels);

/// Coupled category loss with `teacher` producing the target pseudo-labels:
///   -mean_{kept} log student(pseudo) - mean_{source events} log teacher(y_s)
/// The teacher's labels are read as plain values, so no gradient reaches the
/// teacher through the pseudo-label term. An empty filter drops that term.
/// Censored source graphs do not contribute to the supervised term.
ad::Tensor coupled_loss(ad::Tape& tape, Branch teacher, std::span<const DualOutput> source,
                        std::span<const SurvivalLabel> source_labels, std::span<const DualOutput> target,
                        double zeta);

/// L1: MP filters and teaches SP on the target, MP fits source labels.
ad::Tensor coupled_loss_l1(ad::Tape& tape, std::span<const DualOutput> source,
                           std::span<const SurvivalLabel> source_labels, std::span<const DualOutput> target,
                           double zeta);
/// L2: roles exchanged.
ad::Tensor coupled_loss_l2(ad::Tape& tape, std::span<const DualOutput> source,
                           std::span<const SurvivalLabel> source_labels, std::span<const DualOutput> target,
                           double zeta);

/// mean_t log(1 - D(H_t, p_t)) + mean_s log D(H_s, p_s) for one branch, with D
/// clamped to [1e-12, 1 - 1e-12].
ad::Tensor adversarial_loss(ad::Tape& tape, std::span<const BranchOutput> source,
                            std::span<const BranchOutput> target, const DualEncoderParams& params);

/// Mean of adversarial_loss over the two branches.
ad::Tensor adversarial_loss_dual(ad::Tape& tape, std::span<const DualOutput> source,
                                 std::span<const DualOutput> target, const DualEncoderParams& params);

/// Rescales every row whose Euclidean norm exceeds epsilon onto the
/// epsilon-sphere. epsilon = 0 zeroes every row.
ad::Tensor project_perturbation(const ad::Tensor& delta, double epsilon);
void project_perturbation_inplace(ad::Tensor& delta, double epsilon);

/// Per-source-graph feature offsets for both branches.
struct Perturbations {
  std::vector<ad::Tensor> delta_mp;
  std::vector<ad::Tensor> delta_sp;
  double epsilon = 0.5;

  /// Zero offsets shaped like each graph's features.
  static Perturbations zeros(std::span<const PreparedGraph> graphs, double epsilon);
  double max_row_norm() const;
};

struct AdversarialConfig {
  std::size_t n_d = 1;          // classifier ascent steps per round
  double delta_lr = 0.1;        // step length of the row-normalized descent on delta
  double weight = 1.0;          // scales the encoder's share of the descent step
  bool update_encoder = true;
};

struct RoundStats {
  double loss_before = 0.0;  // L_AP at the start of the round
  double loss_after_ascent = 0.0;
};

/// One min-max round on a batch:
///  (a) n_d ascent steps on the domain classifier, encoder and deltas frozen;
///  (b) one descent step on the deltas (and encoder, if enabled), classifier frozen;
///  (c) projection of both deltas onto the epsilon ball.
/// source_idx selects graphs (and their deltas); target_idx selects target graphs.
RoundStats adversarial_round(std::span<const PreparedGraph> source, std::span<const std::size_t> source_idx,
                             std::span<const PreparedGraph> target, std::span<const std::size_t> target_idx,
                             const DualEncoderParams& params, Perturbations& perturbations,
                             ad::Optimizer& dclf_opt, ad::Optimizer* encoder_opt,
                             const AdversarialConfig& config);

/// Forward both branches; deltas (may be null) are applied to the matching branch.
DualOutput dual_forward(ad::Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const ad::Tensor* delta_mp = nullptr, const ad::Tensor* delta_sp = nullptr);

}  // namespace deta::align
