#include "deta/encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "deta/error.hpp"

namespace deta {

using ad::Tape;
using ad::Tensor;
using nlohmann::json;

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("encoder.") + name + " must be positive");
  };
  positive(in_dim, "in_dim");
  positive(hidden, "hidden");
  positive(mp_layers, "mp_layers");
  positive(sp_layers, "sp_layers");
  positive(k_sp, "k_sp");
  positive(head_hidden, "head_hidden");
  positive(dclf_hidden, "dclf_hidden");
  if (k_bins < 2) throw ConfigError("encoder.k_bins must be at least 2");
  if (hidden % 2 != 0) throw ConfigError("encoder.hidden must be even");
  if (in_dim % 2 != 0) throw ConfigError("encoder.in_dim must be even for shortest-path encodings");
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  auto h = tape.relu(tape.add(tape.matmul(x, w1), b1));
  return tape.add(tape.matmul(h, w2), b2);
}

namespace {

Tensor uniform_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w(fan_in, fan_out);
  for (double& v : w.data()) v = dist(rng);
  return w;
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  return Mlp{uniform_weight(in, hidden, rng), Tensor(1, hidden), uniform_weight(hidden, out, rng),
             Tensor(1, out)};
}

void append_mlp(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const Mlp& m) {
  out.emplace_back(prefix + ".w1", m.w1);
  out.emplace_back(prefix + ".b1", m.b1);
  out.emplace_back(prefix + ".w2", m.w2);
  out.emplace_back(prefix + ".b2", m.b2);
}

Mlp clone_mlp(const Mlp& m) { return Mlp{m.w1.clone(), m.b1.clone(), m.w2.clone(), m.b2.clone()}; }

}  // namespace

DualEncoderParams DualEncoderParams::initialize(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  DualEncoderParams p;
  p.config = config;
  for (std::size_t l = 0; l < config.mp_layers; ++l)
    p.mp_weights.push_back(uniform_weight(l == 0 ? config.in_dim : config.hidden, config.hidden, rng));
  for (std::size_t l = 0; l < config.sp_layers; ++l) {
    const std::size_t in = l == 0 ? config.in_dim : config.hidden;
    p.sp_combine.push_back(uniform_weight(in, config.hidden, rng));
    p.sp_aggregate.push_back(uniform_weight(in, config.hidden, rng));
  }
  p.head_mp = make_mlp(config.hidden, config.head_hidden, config.k_bins, rng);
  p.head_sp = make_mlp(config.hidden, config.head_hidden, config.k_bins, rng);
  p.dclf = make_mlp(config.hidden + config.k_bins, config.dclf_hidden, 1, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor>> DualEncoderParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < mp_weights.size(); ++l)
    out.emplace_back("mp." + std::to_string(l) + ".w", mp_weights[l]);
  for (std::size_t l = 0; l < sp_combine.size(); ++l) {
    out.emplace_back("sp." + std::to_string(l) + ".combine", sp_combine[l]);
    out.emplace_back("sp." + std::to_string(l) + ".aggregate", sp_aggregate[l]);
  }
  append_mlp(out, "head_mp", head_mp);
  append_mlp(out, "head_sp", head_sp);
  append_mlp(out, "dclf", dclf);
  return out;
}

std::vector<Tensor> DualEncoderParams::mp_tensors() const {
  std::vector<Tensor> out(mp_weights.begin(), mp_weights.end());
  out.insert(out.end(), {head_mp.w1, head_mp.b1, head_mp.w2, head_mp.b2});
  return out;
}

std::vector<Tensor> DualEncoderParams::sp_tensors() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < sp_combine.size(); ++l) {
    out.push_back(sp_combine[l]);
    out.push_back(sp_aggregate[l]);
  }
  out.insert(out.end(), {head_sp.w1, head_sp.b1, head_sp.w2, head_sp.b2});
  return out;
}

std::vector<Tensor> DualEncoderParams::encoder_tensors() const {
  auto out = mp_tensors();
  auto sp = sp_tensors();
  out.insert(out.end(), sp.begin(), sp.end());
  return out;
}

std::vector<Tensor> DualEncoderParams::dclf_tensors() const {
  return {dclf.w1, dclf.b1, dclf.w2, dclf.b2};
}

DualEncoderParams DualEncoderParams::clone() const {
  DualEncoderParams p;
  p.config = config;
  for (const auto& w : mp_weights) p.mp_weights.push_back(w.clone());
  for (const auto& w : sp_combine) p.sp_combine.push_back(w.clone());
  for (const auto& w : sp_aggregate) p.sp_aggregate.push_back(w.clone());
  p.head_mp = clone_mlp(head_mp);
  p.head_sp = clone_mlp(head_sp);
  p.dclf = clone_mlp(dclf);
  return p;
}

// ---------------------------------------------------------------- graphs

PreparedGraph::PreparedGraph(WSIGraph g, std::size_t k_sp)
    : PreparedGraph(g, shortest_path_sets(g, k_sp)) {}

PreparedGraph::PreparedGraph(WSIGraph g, SPNeighborhoods sets)
    : graph(std::move(g)), adjacency(normalized_adjacency(graph)), sp_sets(std::move(sets)) {
  const std::size_t n = graph.num_nodes();
  if (sp_sets.num_nodes() != n)
    throw std::invalid_argument("shortest-path sets cover " + std::to_string(sp_sets.num_nodes()) +
                                " nodes but the graph has " + std::to_string(n));
  for (std::size_t k = 1; k <= sp_sets.max_len(); ++k) {
    Tensor mask(n, n);
    bool any = false;
    for (std::size_t u = 0; u < n; ++u)
      for (auto v : sp_sets.at(u, k)) {
        mask.at(u, v) = 1.0;
        any = true;
      }
    sp_masks.push_back(any ? mask : Tensor());
  }
}

std::vector<PreparedGraph> prepare_all(const std::vector<WSIGraph>& graphs, std::size_t k_sp) {
  std::vector<PreparedGraph> out;
  out.reserve(graphs.size());
  for (const auto& g : graphs) out.emplace_back(g, k_sp);
  return out;
}

// ---------------------------------------------------------------- branches

std::vector<double> position_encoding(std::size_t k, std::size_t d) {
  if (d % 2 != 0) throw std::invalid_argument("position_encoding: width " + std::to_string(d) + " is odd");
  std::vector<double> te(d);
  for (std::size_t i = 0; 2 * i < d; ++i) {
    const double angle =
        static_cast<double>(k) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    te[2 * i] = std::sin(angle);
    te[2 * i + 1] = std::cos(angle);
  }
  return te;
}

Tensor readout(Tape& tape, const Tensor& node_embeddings) {
  if (node_embeddings.rows() == 0) throw std::invalid_argument("readout: graph has no nodes");
  return tape.mean_rows(node_embeddings);
}

namespace {

Tensor input_features(Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                      const Tensor* perturbation) {
  const auto& x = g.graph.features;
  if (x.cols() != params.config.in_dim)
    throw std::invalid_argument("graph feature width " + std::to_string(x.cols()) +
                                " does not match encoder in_dim " + std::to_string(params.config.in_dim));
  if (!perturbation) return x;
  if (perturbation->rows() != x.rows() || perturbation->cols() != x.cols())
    throw std::invalid_argument("perturbation shape " + perturbation->shape_string() +
                                " does not match features " + x.shape_string());
  return tape.add(x, *perturbation);
}

BranchOutput finish(Tape& tape, Tensor nodes, const Mlp& head) {
  auto pooled = readout(tape, nodes);
  auto hazard = tape.softmax_rows(head.forward(tape, pooled));
  return BranchOutput{std::move(nodes), std::move(pooled), std::move(hazard)};
}

}  // namespace

BranchOutput mp_forward(Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const Tensor* perturbation) {
  Tensor h = input_features(tape, g, params, perturbation);
  for (const auto& w : params.mp_weights) h = tape.relu(tape.matmul(g.adjacency, tape.matmul(h, w)));
  return finish(tape, std::move(h), params.head_mp);
}

BranchOutput sp_forward(Tape& tape, const PreparedGraph& g, const DualEncoderParams& params,
                        const Tensor* perturbation) {
  if (g.sp_sets.max_len() != params.config.k_sp)
    throw std::invalid_argument("graph prepared with path length " + std::to_string(g.sp_sets.max_len()) +
                                " but encoder expects " + std::to_string(params.config.k_sp));
  Tensor m = input_features(tape, g, params, perturbation);
  for (std::size_t l = 0; l < params.sp_combine.size(); ++l) {
    const std::size_t width = m.cols();
    Tensor agg;
    bool have_agg = false;
    for (std::size_t k = 1; k <= g.sp_masks.size(); ++k) {
      const auto& mask = g.sp_masks[k - 1];
      if (mask.size() == 0) continue;
      auto msg = tape.relu(tape.add(m, Tensor::row(position_encoding(k, width))));
      auto part = tape.matmul(mask, msg);
      agg = have_agg ? tape.add(agg, part) : part;
      have_agg = true;
    }
    Tensor pre = tape.matmul(m, params.sp_combine[l]);
    if (have_agg) pre = tape.add(pre, tape.matmul(agg, params.sp_aggregate[l]));
    m = tape.relu(pre);
  }
  return finish(tape, std::move(m), params.head_sp);
}

BranchOutput branch_forward(Branch branch, Tape& tape, const PreparedGraph& g,
                            const DualEncoderParams& params, const Tensor* perturbation) {
  return branch == Branch::mp ? mp_forward(tape, g, params, perturbation)
                              : sp_forward(tape, g, params, perturbation);
}

Tensor domain_classifier(Tape& tape, const Tensor& graph_embedding, const Tensor& category_dist,
                         const DualEncoderParams& params) {
  const auto& c = params.config;
  if (graph_embedding.rows() != 1 || category_dist.rows() != 1 ||
      graph_embedding.cols() + category_dist.cols() != c.hidden + c.k_bins)
    throw std::invalid_argument("domain_classifier: inputs " + graph_embedding.shape_string() + " and " +
                                category_dist.shape_string() + " do not concatenate to width " +
                                std::to_string(c.hidden + c.k_bins));
  auto x = tape.concat_cols(graph_embedding, category_dist);
  return tape.sigmoid(params.dclf.forward(tape, x));
}

std::vector<double> fuse_hazards(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("fuse_hazards: length mismatch");
  std::vector<double> out(a.size());
  double z = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) z += out[i] = 0.5 * (a[i] + b[i]);
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> fused_predict(const PreparedGraph& g, const DualEncoderParams& params) {
  Tape tape;
  auto mp = mp_forward(tape, g, params);
  auto sp = sp_forward(tape, g, params);
  return fuse_hazards(mp.hazard.to_vector(), sp.hazard.to_vector());
}

// ---------------------------------------------------------------- checkpoints

namespace {

json config_to_json(const EncoderConfig& c) {
  return json{{"in_dim", c.in_dim},         {"hidden", c.hidden},
              {"mp_layers", c.mp_layers},   {"sp_layers", c.sp_layers},
              {"k_sp", c.k_sp},             {"k_bins", c.k_bins},
              {"head_hidden", c.head_hidden}, {"dclf_hidden", c.dclf_hidden}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.in_dim = j.at("in_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.mp_layers = j.at("mp_layers").get<std::size_t>();
  c.sp_layers = j.at("sp_layers").get<std::size_t>();
  c.k_sp = j.at("k_sp").get<std::size_t>();
  c.k_bins = j.at("k_bins").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.dclf_hidden = j.at("dclf_hidden").get<std::size_t>();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const DualEncoderParams& params) {
  json tensors = json::object();
  for (const auto& [name, t] : params.named_tensors())
    tensors[name] = json{{"shape", {t.rows(), t.cols()}}, {"data", t.to_vector()}};
  json root{{"format", "deta-checkpoint-v1"}, {"config", config_to_json(params.config)},
            {"tensors", std::move(tensors)}};
  return root.dump(1) + "\n";
}

DualEncoderParams checkpoint_from_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (root.at("format").get<std::string>() != "deta-checkpoint-v1")
      throw IoError("unsupported checkpoint format");
    const auto config = config_from_json(root.at("config"));
    auto params = DualEncoderParams::initialize(config, 0);
    const auto& tensors = root.at("tensors");
    for (auto& [name, t] : params.named_tensors()) {
      if (!tensors.contains(name)) throw ConfigError("checkpoint is missing tensor '" + name + "'");
      const auto& entry = tensors.at(name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
        throw ConfigError("checkpoint tensor '" + name + "' has shape mismatch with config, expected " +
                          t.shape_string());
      const auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != t.size()) throw ConfigError("checkpoint tensor '" + name + "' has wrong length");
      std::copy(data.begin(), data.end(), t.data().begin());
    }
    return params;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const DualEncoderParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_string(params);
}

DualEncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

void require_same_config(const EncoderConfig& expected, const EncoderConfig& actual) {
  auto check = [](std::size_t e, std::size_t a, const char* field) {
    if (e != a)
      throw ConfigError(std::string("checkpoint/config mismatch in field '") + field + "': config has " +
                        std::to_string(e) + ", checkpoint has " + std::to_string(a));
  };
  check(expected.in_dim, actual.in_dim, "in_dim");
  check(expected.hidden, actual.hidden, "hidden");
  check(expected.mp_layers, actual.mp_layers, "mp_layers");
  check(expected.sp_layers, actual.sp_layers, "sp_layers");
  check(expected.k_sp, actual.k_sp, "k_sp");
  check(expected.k_bins, actual.k_bins, "k_bins");
  check(expected.head_hidden, actual.head_hidden, "head_hidden");
  check(expected.dclf_hidden, actual.dclf_hidden, "dclf_hidden");
}

}  // namespace deta
