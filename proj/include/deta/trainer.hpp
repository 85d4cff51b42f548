#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "deta/alignment.hpp"
#include "deta/encoder.hpp"
#include "deta/graph.hpp"
#include "deta/survival.hpp"

namespace deta {

struct TrainConfig {
  EncoderConfig encoder;
  std::size_t knn_k = 8;
  double lr_encoder = 1e-3;
  double lr_adapt = 5e-4;
  double lr_dclf = 1e-3;
  double lr_delta = 0.1;
  double zeta = 0.8;
  double epsilon = 0.5;
  std::size_t n_d = 1;
  std::size_t pretrain_epochs = 30;
  std::size_t adapt_epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  double lambda_surv = 1.0;
  double lambda_1 = 1.0;
  double lambda_2 = 1.0;
  double lambda_ap = 1.0;
  /// Feed the learned source perturbations into the supervised terms too.
  bool perturb_supervised = true;
  ad::OptimizerConfig::Kind optimizer = ad::OptimizerConfig::Kind::adam;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct PretrainResult {
  DualEncoderParams params;
  std::vector<double> loss_trace;  // mean per-graph NLL (both branches summed) per epoch
};

struct AdaptEpoch {
  double surv = 0.0;
  double l1 = 0.0;  // mean over iterations that used L1
  double l2 = 0.0;
  double ap = 0.0;  // L_AP at the start of each round, averaged
};

struct AdaptResult {
  DualEncoderParams params;
  std::vector<AdaptEpoch> trace;
  std::size_t l1_steps = 0;
  std::size_t l2_steps = 0;
  std::size_t iterations = 0;
  double max_delta_norm = 0.0;
};

/// Source-only training of both branches on the summed survival NLL.
/// Throws std::invalid_argument if any source graph is unlabeled.
PretrainResult pretrain(const std::vector<WSIGraph>& source, const TrainConfig& config);

/// Called after every adaptation epoch with the current parameters.
using EpochObserver = std::function<void(std::size_t epoch, const DualEncoderParams& params)>;

/// Domain-adaptation stage. Target labels are stripped before use; a warning
/// is logged when any are present.
AdaptResult adapt(const DualEncoderParams& params, const std::vector<WSIGraph>& source,
                  const std::vector<WSIGraph>& target, const TrainConfig& config,
                  const EpochObserver& observer = {});

struct EvalResult {
  double c_index = 0.0;
  double median_risk = 0.0;
  survival::LogRankResult log_rank;
  std::vector<survival::KmPoint> km_low;
  std::vector<survival::KmPoint> km_high;
  std::vector<double> risks;
  std::vector<int> predicted_bins;  // argmax of the fused hazard, 1-based
  std::vector<std::vector<double>> hazards;
};

/// Fused prediction per graph, C-index, and median-risk stratification.
/// Work fans out over `threads` workers; results do not depend on the count.
EvalResult evaluate(const DualEncoderParams& params, const std::vector<WSIGraph>& labeled,
                    std::size_t threads = 1);

/// loss-trace CSV: stage,epoch,term,value
void write_pretrain_trace(std::ostream& out, const PretrainResult& r);
void write_adapt_trace(std::ostream& out, const AdaptResult& r);

}  // namespace deta
