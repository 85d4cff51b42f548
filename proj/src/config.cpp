#include "deta/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "deta/error.hpp"

namespace deta {

namespace {

struct Value {
  enum class Kind { number, boolean, string, array } kind = Kind::number;
  double number = 0.0;
  bool boolean = false;
  std::string text;
  std::vector<double> array;
  std::string raw;
};

struct Field {
  std::function<void(RunConfig&, const Value&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double as_number(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::number) throw ConfigError("'" + key + "' expects a number, got " + v.raw);
  return v.number;
}

std::size_t as_count(const Value& v, const std::string& key) {
  const double d = as_number(v, key);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
    throw ConfigError("'" + key + "' expects a non-negative integer, got " + v.raw);
  return static_cast<std::size_t>(d);
}

template <class T>
Field count_field(T RunConfig::*group, std::size_t T::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) { (c.*group).*member = as_count(v, key); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <class T>
Field number_field(T RunConfig::*group, double T::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) { (c.*group).*member = as_number(v, key); },
          [=](const RunConfig& c) { return format_double((c.*group).*member); }};
}

template <class T>
Field seed_field(T RunConfig::*group, std::uint64_t T::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) { (c.*group).*member = as_count(v, key); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <class T>
Field array_field(T RunConfig::*group, std::vector<double> T::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) {
            if (v.kind != Value::Kind::array) throw ConfigError("'" + key + "' expects an array, got " + v.raw);
            (c.*group).*member = v.array;
          },
          [=](const RunConfig& c) {
            std::string s = "[";
            const auto& a = (c.*group).*member;
            for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ", " : "") + format_double(a[i]);
            return s + "]";
          }};
}

Field path_field(std::string RunPaths::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) {
            if (v.kind != Value::Kind::string) throw ConfigError("'" + key + "' expects a string, got " + v.raw);
            c.paths.*member = v.text;
          },
          [=](const RunConfig& c) { return "\"" + c.paths.*member + "\""; }};
}

// Encoder fields live one level deeper (RunConfig::train.encoder).
Field encoder_field(std::size_t EncoderConfig::*member, std::string key) {
  return {[=](RunConfig& c, const Value& v) { c.train.encoder.*member = as_count(v, key); },
          [=](const RunConfig& c) { return std::to_string(c.train.encoder.*member); }};
}

using Registry = std::vector<std::pair<std::string, Field>>;

const Registry& registry() {
  using S = synth::ShiftConfig;
  using T = TrainConfig;
  static const Registry r = [] {
    Registry reg;
    auto add = [&](std::string key, Field f) { reg.emplace_back(std::move(key), std::move(f)); };
    const auto syn = &RunConfig::synth;
    add("synth.graphs_per_domain", count_field(syn, &S::graphs_per_domain, "synth.graphs_per_domain"));
    add("synth.nodes_min", count_field(syn, &S::nodes_min, "synth.nodes_min"));
    add("synth.nodes_max", count_field(syn, &S::nodes_max, "synth.nodes_max"));
    add("synth.feature_dim", count_field(syn, &S::feature_dim, "synth.feature_dim"));
    add("synth.latent_classes", count_field(syn, &S::latent_classes, "synth.latent_classes"));
    add("synth.mu_shift", number_field(syn, &S::mu_shift, "synth.mu_shift"));
    add("synth.sigma_shift", number_field(syn, &S::sigma_shift, "synth.sigma_shift"));
    add("synth.source_prior", array_field(syn, &S::source_prior, "synth.source_prior"));
    add("synth.target_prior", array_field(syn, &S::target_prior, "synth.target_prior"));
    add("synth.censoring_rate", number_field(syn, &S::censoring_rate, "synth.censoring_rate"));
    add("synth.k_bins", count_field(syn, &S::k_bins, "synth.k_bins"));
    add("synth.knn_k", count_field(syn, &S::knn_k, "synth.knn_k"));
    add("synth.signal_strength", number_field(syn, &S::signal_strength, "synth.signal_strength"));
    add("synth.node_noise", number_field(syn, &S::node_noise, "synth.node_noise"));
    add("synth.nuisance_jitter", number_field(syn, &S::nuisance_jitter, "synth.nuisance_jitter"));
    add("synth.risk_slope", number_field(syn, &S::risk_slope, "synth.risk_slope"));
    add("synth.seed", seed_field(syn, &S::seed, "synth.seed"));

    add("encoder.hidden", encoder_field(&EncoderConfig::hidden, "encoder.hidden"));
    add("encoder.mp_layers", encoder_field(&EncoderConfig::mp_layers, "encoder.mp_layers"));
    add("encoder.sp_layers", encoder_field(&EncoderConfig::sp_layers, "encoder.sp_layers"));
    add("encoder.k_sp", encoder_field(&EncoderConfig::k_sp, "encoder.k_sp"));
    add("encoder.head_hidden", encoder_field(&EncoderConfig::head_hidden, "encoder.head_hidden"));
    add("encoder.dclf_hidden", encoder_field(&EncoderConfig::dclf_hidden, "encoder.dclf_hidden"));

    const auto tr = &RunConfig::train;
    add("train.lr_encoder", number_field(tr, &T::lr_encoder, "train.lr_encoder"));
    add("train.lr_adapt", number_field(tr, &T::lr_adapt, "train.lr_adapt"));
    add("train.lr_dclf", number_field(tr, &T::lr_dclf, "train.lr_dclf"));
    add("train.lr_delta", number_field(tr, &T::lr_delta, "train.lr_delta"));
    add("train.zeta", number_field(tr, &T::zeta, "train.zeta"));
    add("train.epsilon", number_field(tr, &T::epsilon, "train.epsilon"));
    add("train.n_d", count_field(tr, &T::n_d, "train.n_d"));
    add("train.pretrain_epochs", count_field(tr, &T::pretrain_epochs, "train.pretrain_epochs"));
    add("train.adapt_epochs", count_field(tr, &T::adapt_epochs, "train.adapt_epochs"));
    add("train.batch_size", count_field(tr, &T::batch_size, "train.batch_size"));
    add("train.seed", seed_field(tr, &T::seed, "train.seed"));
    add("train.lambda_surv", number_field(tr, &T::lambda_surv, "train.lambda_surv"));
    add("train.lambda_1", number_field(tr, &T::lambda_1, "train.lambda_1"));
    add("train.lambda_2", number_field(tr, &T::lambda_2, "train.lambda_2"));
    add("train.lambda_ap", number_field(tr, &T::lambda_ap, "train.lambda_ap"));
    add("train.perturb_supervised",
        Field{[](RunConfig& c, const Value& v) {
                if (v.kind != Value::Kind::boolean)
                  throw ConfigError("'train.perturb_supervised' expects true/false, got " + v.raw);
                c.train.perturb_supervised = v.boolean;
              },
              [](const RunConfig& c) { return std::string(c.train.perturb_supervised ? "true" : "false"); }});
    add("train.optimizer",
        Field{[](RunConfig& c, const Value& v) {
                if (v.kind == Value::Kind::string && v.text == "adam")
                  c.train.optimizer = ad::OptimizerConfig::Kind::adam;
                else if (v.kind == Value::Kind::string && v.text == "sgd")
                  c.train.optimizer = ad::OptimizerConfig::Kind::sgd;
                else
                  throw ConfigError("'train.optimizer' must be \"adam\" or \"sgd\", got " + v.raw);
              },
              [](const RunConfig& c) {
                return std::string(c.train.optimizer == ad::OptimizerConfig::Kind::adam ? "\"adam\"" : "\"sgd\"");
              }});

    add("paths.source", path_field(&RunPaths::source, "paths.source"));
    add("paths.target", path_field(&RunPaths::target, "paths.target"));
    add("paths.checkpoint", path_field(&RunPaths::checkpoint, "paths.checkpoint"));
    add("paths.out", path_field(&RunPaths::out, "paths.out"));
    return reg;
  }();
  return r;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

Value parse_value(const std::string& raw) {
  Value v;
  v.raw = raw;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.kind = Value::Kind::string;
    v.text = raw.substr(1, raw.size() - 2);
  } else if (raw == "true" || raw == "false") {
    v.kind = Value::Kind::boolean;
    v.boolean = raw == "true";
  } else if (raw.size() >= 2 && raw.front() == '[' && raw.back() == ']') {
    v.kind = Value::Kind::array;
    std::stringstream ss(raw.substr(1, raw.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      double d;
      if (!parse_double(item, d)) throw ConfigError("bad array element '" + item + "'");
      v.array.push_back(d);
    }
  } else if (!parse_double(raw, v.number)) {
    throw ConfigError("cannot parse value '" + raw + "'");
  }
  return v;
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  train.seed = seed;
}

void RunConfig::sync_shared() {
  train.encoder.in_dim = synth.feature_dim;
  train.encoder.k_bins = synth.k_bins;
  train.knn_k = synth.knn_k;
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  const auto& reg = registry();
  std::map<std::string, const Field*> lookup;
  for (const auto& [k, f] : reg) lookup[k] = &f;

  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      if (section != "synth" && section != "encoder" && section != "train" && section != "paths")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second->set(cfg, parse_value(trim(line.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.sync_shared();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse_run_config(in);
}

void write_run_config(std::ostream& out, const RunConfig& config) {
  std::string section;
  for (const auto& [key, field] : registry()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << field.get(config) << "\n";
  }
}

}  // namespace deta
