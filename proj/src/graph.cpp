#include "deta/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include "json.hpp"

#include "deta/error.hpp"

namespace deta {

using ad::Tensor;
using nlohmann::json;

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw IoError("unknown domain tag '" + s + "'");
}

void WSIGraph::validate() const {
  const auto n = num_nodes();
  for (const auto& [a, b] : edges) {
    if (a >= n || b >= n)
      throw std::invalid_argument("edge (" + std::to_string(a) + "," + std::to_string(b) +
                                  ") outside graph of " + std::to_string(n) + " nodes");
    if (a >= b) throw std::invalid_argument("edge (" + std::to_string(a) + "," + std::to_string(b) +
                                            ") is a self-loop or not oriented i < j");
  }
  if (label && (label->censor < 0 || label->censor > 1))
    throw std::invalid_argument("censor flag must be 0 or 1");
}

std::vector<Edge> canonical_edges(std::vector<Edge> edges) {
  for (auto& e : edges)
    if (e.first > e.second) std::swap(e.first, e.second);
  std::erase_if(edges, [](const Edge& e) { return e.first == e.second; });
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<Edge> knn_graph(const Tensor& features, std::size_t k) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n < 2) throw std::invalid_argument("knn_graph: need at least 2 nodes, got " + std::to_string(n));
  if (k == 0 || k >= n)
    throw std::invalid_argument("knn_graph: k=" + std::to_string(k) + " must be in [1, " +
                                std::to_string(n - 1) + "]");
  std::vector<Edge> edges;
  edges.reserve(n * k);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = features.at(i, c) - features.at(j, c);
        s += diff * diff;
      }
      dist.emplace_back(s, j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    for (std::size_t t = 0; t < k; ++t) edges.emplace_back(i, dist[t].second);
  }
  return canonical_edges(std::move(edges));
}

SPNeighborhoods::SPNeighborhoods(std::size_t num_nodes, std::size_t max_len)
    : max_len_(max_len), sets_(num_nodes, std::vector<std::vector<std::size_t>>(max_len)) {}

const std::vector<std::size_t>& SPNeighborhoods::at(std::size_t u, std::size_t k) const {
  return sets_.at(u).at(k - 1);
}

std::vector<std::size_t>& SPNeighborhoods::at(std::size_t u, std::size_t k) {
  return sets_.at(u).at(k - 1);
}

namespace {

std::vector<std::vector<std::size_t>> adjacency_lists(const WSIGraph& g) {
  std::vector<std::vector<std::size_t>> adj(g.num_nodes());
  for (const auto& [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& l : adj) std::sort(l.begin(), l.end());
  return adj;
}

}  // namespace

SPNeighborhoods shortest_path_sets(const WSIGraph& graph, std::size_t max_len) {
  graph.validate();
  const std::size_t n = graph.num_nodes();
  SPNeighborhoods out(n, max_len);
  const auto adj = adjacency_lists(graph);
  constexpr std::size_t unseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(n);
  for (std::size_t src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), unseen);
    dist[src] = 0;
    std::queue<std::size_t> q;
    q.push(src);
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      if (dist[u] == max_len) continue;
      for (auto v : adj[u])
        if (dist[v] == unseen) {
          dist[v] = dist[u] + 1;
          q.push(v);
        }
    }
    for (std::size_t v = 0; v < n; ++v)
      if (dist[v] != unseen && dist[v] >= 1) out.at(src, dist[v]).push_back(v);
  }
  return out;
}

Tensor normalized_adjacency(const WSIGraph& graph) {
  graph.validate();
  const std::size_t n = graph.num_nodes();
  Tensor a = Tensor::identity(n);
  for (const auto& [i, j] : graph.edges) {
    a.at(i, j) = 1.0;
    a.at(j, i) = 1.0;
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return a;
}

// ---------------------------------------------------------------- JSONL

namespace {

WSIGraph graph_from_json(const json& j, std::size_t knn_k) {
  WSIGraph g;
  g.domain = domain_from_string(j.at("domain").get<std::string>());
  const auto& feats = j.at("features");
  if (!feats.is_array() || feats.empty()) throw IoError("graph has no feature rows");
  const std::size_t n = feats.size();
  const std::size_t d = feats.front().size();
  std::vector<double> values;
  values.reserve(n * d);
  for (const auto& row : feats) {
    if (row.size() != d) throw IoError("ragged feature matrix");
    for (const auto& v : row) values.push_back(v.get<double>());
  }
  g.features = Tensor(n, d, std::move(values));

  if (j.contains("edges") && !j.at("edges").is_null()) {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (e.size() != 2) throw IoError("edge entries must be [i, j] pairs");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    g.edges = canonical_edges(std::move(edges));
  } else if (n >= 2) {
    g.edges = knn_graph(g.features, std::min(knn_k, n - 1));
  }

  const bool has_time = j.contains("time_bin") && !j.at("time_bin").is_null();
  const bool has_censor = j.contains("censor") && !j.at("censor").is_null();
  if (has_time != has_censor) throw IoError("time_bin and censor must be given together");
  if (has_time) g.label = SurvivalLabel{j.at("time_bin").get<int>(), j.at("censor").get<int>()};
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(e.what());
  }
  return g;
}

}  // namespace

std::vector<WSIGraph> read_graphs_jsonl(std::istream& in, std::size_t knn_k) {
  std::vector<WSIGraph> graphs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      graphs.push_back(graph_from_json(json::parse(line), knn_k));
    } catch (const json::exception& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return graphs;
}

std::vector<WSIGraph> read_graphs_jsonl(const std::string& path, std::size_t knn_k) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file '" + path + "'");
  try {
    return read_graphs_jsonl(in, knn_k);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_graphs_jsonl(std::ostream& out, const std::vector<WSIGraph>& graphs) {
  for (const auto& g : graphs) {
    json j;
    j["domain"] = to_string(g.domain);
    json feats = json::array();
    for (std::size_t r = 0; r < g.num_nodes(); ++r) {
      json row = json::array();
      for (std::size_t c = 0; c < g.feature_dim(); ++c) row.push_back(g.features.at(r, c));
      feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
    json edges = json::array();
    for (const auto& [a, b] : g.edges) edges.push_back({a, b});
    j["edges"] = std::move(edges);
    j["time_bin"] = g.label ? json(g.label->time_bin) : json(nullptr);
    j["censor"] = g.label ? json(g.label->censor) : json(nullptr);
    out << j.dump() << '\n';
  }
}

void write_graphs_jsonl(const std::string& path, const std::vector<WSIGraph>& graphs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file '" + path + "'");
  write_graphs_jsonl(out, graphs);
}

}  // namespace deta
