#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deta/autodiff.hpp"

namespace deta {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Observed survival outcome. censor = 1 means the event was observed.
struct SurvivalLabel {
  int time_bin = 1;
  int censor = 1;

  bool operator==(const SurvivalLabel&) const = default;
};

/// Undirected edge stored with first < second.
using Edge = std::pair<std::size_t, std::size_t>;

/// A slide represented as a patch graph: node features, undirected edges, an
/// optional survival label and a domain tag.
struct WSIGraph {
  ad::Tensor features;  // n x d
  std::vector<Edge> edges;
  std::optional<SurvivalLabel> label;
  Domain domain = Domain::source;

  std::size_t num_nodes() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws if an edge is out of range, a self-loop, or not normalized.
  void validate() const;
};

/// Sorts, deduplicates and orients (i < j) an edge list; drops self-loops.
std::vector<Edge> canonical_edges(std::vector<Edge> edges);

/// Symmetrized k-nearest-neighbour graph under Euclidean distance. Distance
/// ties resolve to the smaller node index.
std::vector<Edge> knn_graph(const ad::Tensor& features, std::size_t k);

/// For each node u and each k in 1..max_len, the nodes at shortest-path
/// distance exactly k from u.
class SPNeighborhoods {
 public:
  SPNeighborhoods() = default;
  SPNeighborhoods(std::size_t num_nodes, std::size_t max_len);

  std::size_t num_nodes() const { return sets_.size(); }
  std::size_t max_len() const { return max_len_; }
  /// k is 1-based.
  const std::vector<std::size_t>& at(std::size_t u, std::size_t k) const;
  std::vector<std::size_t>& at(std::size_t u, std::size_t k);

 private:
  std::size_t max_len_ = 0;
  std::vector<std::vector<std::vector<std::size_t>>> sets_;
};

SPNeighborhoods shortest_path_sets(const WSIGraph& graph, std::size_t max_len);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
ad::Tensor normalized_adjacency(const WSIGraph& graph);

/// One graph per line:
/// {"domain": "source"|"target", "features": [[...]], "edges": [[i,j],...],
///  "time_bin": int|null, "censor": 0|1|null}
/// Lines without "edges" get a knn_graph with min(knn_k, n - 1) neighbours.
std::vector<WSIGraph> read_graphs_jsonl(std::istream& in, std::size_t knn_k);
std::vector<WSIGraph> read_graphs_jsonl(const std::string& path, std::size_t knn_k);
void write_graphs_jsonl(std::ostream& out, const std::vector<WSIGraph>& graphs);
void write_graphs_jsonl(const std::string& path, const std::vector<WSIGraph>& graphs);

}  // namespace deta
