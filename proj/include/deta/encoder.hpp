#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deta/autodiff.hpp"
#include "deta/graph.hpp"

namespace deta {

struct EncoderConfig {
  std::size_t in_dim = 8;
  std::size_t hidden = 64;  // must be even: position encodings share this width
  std::size_t mp_layers = 2;
  std::size_t sp_layers = 2;
  std::size_t k_sp = 3;
  std::size_t k_bins = 4;
  std::size_t head_hidden = 32;
  std::size_t dclf_hidden = 32;

  bool operator==(const EncoderConfig&) const = default;
  /// Throws ConfigError on zero sizes or odd widths.
  void validate() const;
};

/// Two-layer perceptron: relu(x W1 + b1) W2 + b2.
struct Mlp {
  ad::Tensor w1, b1, w2, b2;

  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x) const;
};

/// Learnable weights of both encoder branches, their hazard heads, and the
/// domain classifier.
struct DualEncoderParams {
  EncoderConfig config;
  std::vector<ad::Tensor> mp_weights;    // GCN layer weights
  std::vector<ad::Tensor> sp_combine;    // self path
  std::vector<ad::Tensor> sp_aggregate;  // shortest-path neighbourhood path
  Mlp head_mp;
  Mlp head_sp;
  Mlp dclf;

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  static DualEncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  /// Every tensor with a stable name, encoder parameters first.
  std::vector<std::pair<std::string, ad::Tensor>> named_tensors() const;
  std::vector<ad::Tensor> mp_tensors() const;       // MP layers + MP head
  std::vector<ad::Tensor> sp_tensors() const;       // SP layers + SP head
  std::vector<ad::Tensor> encoder_tensors() const;  // both branches and heads
  std::vector<ad::Tensor> dclf_tensors() const;
  DualEncoderParams clone() const;
};

/// A graph together with the structures every forward pass needs.
struct PreparedGraph {
  WSIGraph graph;
  ad::Tensor adjacency;                 // normalized, n x n
  SPNeighborhoods sp_sets;
  std::vector<ad::Tensor> sp_masks;     // per path length k, 0/1 n x n; empty tensor when N_k is empty everywhere

  PreparedGraph(WSIGraph g, std::size_t k_sp);
  /// Throws std::invalid_argument if sp_sets was built for a different node count.
  PreparedGraph(WSIGraph g, SPNeighborhoods sets);
};

std::vector<PreparedGraph> prepare_all(const std::vector<WSIGraph>& graphs, std::size_t k_sp);

enum class Branch { mp, sp };

struct BranchOutput {
  ad::Tensor node_embeddings;  // n x hidden
  ad::Tensor graph_embedding;  // 1 x hidden
  ad::Tensor hazard;           // 1 x k_bins, softmax

  const ad::Tensor& category_dist() const { return hazard; }
};

/// Sinusoidal encoding of path length k: entry 2i = sin(k / 10000^(2i/d)),
/// entry 2i+1 = cos of the same angle.
std::vector<double> position_encoding(std::size_t k, std::size_t d);

/// Mean over nodes.
ad::Tensor readout(ad::Tape& tape, const ad::Tensor& node_embeddings);

/// Stacked relu(A_hat H W) layers. perturbation, if given, is added to the node
/// features first and must match their shape.
BranchOutput mp_forward(ad::Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const ad::Tensor* perturbation = nullptr);

/// Shortest-path layers: relu(M C + (sum_k sum_{v in N_k(u)} relu(m_v + TE(k))) A).
BranchOutput sp_forward(ad::Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const ad::Tensor* perturbation = nullptr);

BranchOutput branch_forward(Branch branch, ad::Tape& tape, const PreparedGraph& g,
                            const DualEncoderParams& params, const ad::Tensor* perturbation = nullptr);

/// Probability that (embedding, category distribution) comes from the source domain.
ad::Tensor domain_classifier(ad::Tape& tape, const ad::Tensor& graph_embedding,
                             const ad::Tensor& category_dist, const DualEncoderParams& params);

/// Elementwise mean of two hazard vectors, renormalized.
std::vector<double> fuse_hazards(const std::vector<double>& a, const std::vector<double>& b);

/// Evaluation-time prediction: both branches, fused.
std::vector<double> fused_predict(const PreparedGraph& g, const DualEncoderParams& params);

/// JSON checkpoint: {"format", "config", "tensors": {name: {"shape", "data"}}}.
/// Doubles are written with round-trip precision.
void save_checkpoint(const std::string& path, const DualEncoderParams& params);
DualEncoderParams load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const DualEncoderParams& params);
DualEncoderParams checkpoint_from_string(const std::string& text);

/// Throws ConfigError naming the first field where the two configs disagree.
void require_same_config(const EncoderConfig& expected, const EncoderConfig& actual);

}  // namespace deta
