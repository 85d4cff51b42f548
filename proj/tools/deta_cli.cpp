// deta: generate / pretrain / adapt / eval / export-embeddings
//
// Exit codes: 0 ok, 1 training or validation failure, 2 I/O or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deta/config.hpp"
#include "deta/error.hpp"
#include "deta/log.hpp"
#include "deta/synthdata.hpp"
#include "deta/trainer.hpp"

namespace fs = std::filesystem;
using namespace deta;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string source;
  std::string target;
  std::string checkpoint;
};

RunConfig resolve(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.config.empty()) rc.sync_shared();
  if (o.seed) rc.set_seed(*o.seed);
  if (!o.source.empty()) rc.paths.source = o.source;
  if (!o.target.empty()) rc.paths.target = o.target;
  if (!o.checkpoint.empty()) rc.paths.checkpoint = o.checkpoint;
  if (!o.out.empty()) rc.paths.out = o.out;
  if (rc.paths.out.empty()) rc.paths.out = ".";
  rc.validate();
  return rc;
}

fs::path out_dir(const RunConfig& rc) {
  fs::path dir(rc.paths.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write '" + p.string() + "'");
  f << std::setprecision(17);
  return f;
}

void archive_config(const fs::path& dir, const RunConfig& rc, const std::string& stage) {
  auto f = open_out(dir / (stage + "_config.toml"));
  write_run_config(f, rc);
}

const std::string& need(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " given (flag or [paths] entry)");
  return path;
}

std::vector<WSIGraph> load_graphs(const std::string& path, const RunConfig& rc) {
  auto graphs = read_graphs_jsonl(path, rc.train.knn_k);
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if (graphs[i].features.cols() != rc.train.encoder.in_dim)
      throw ConfigError(path + ": graph " + std::to_string(i) + " has feature width " +
                        std::to_string(graphs[i].features.cols()) + " but synth.feature_dim is " +
                        std::to_string(rc.train.encoder.in_dim));
  return graphs;
}

DualEncoderParams load_params(const RunConfig& rc) {
  auto params = load_checkpoint(need(rc.paths.checkpoint, "checkpoint"));
  require_same_config(rc.train.encoder, params.config);
  return params;
}

int cmd_generate(const RunConfig& rc) {
  const auto dir = out_dir(rc);
  archive_config(dir, rc, "generate");
  const auto pair = synth::generate_domain_pair(rc.synth);
  write_graphs_jsonl((dir / "source.jsonl").string(), pair.source);
  write_graphs_jsonl((dir / "target.jsonl").string(), pair.target);
  for (const auto& [name, graphs] : {std::pair{"source", &pair.source}, std::pair{"target", &pair.target}}) {
    auto f = open_out(dir / (std::string(name) + "_summary.csv"));
    synth::write_summary_csv(f, synth::dataset_summary(*graphs, rc.synth.k_bins));
  }
  std::cout << "wrote " << pair.source.size() << " source and " << pair.target.size() << " target graphs to "
            << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& rc) {
  const auto source = load_graphs(need(rc.paths.source, "source data"), rc);
  const auto dir = out_dir(rc);
  archive_config(dir, rc, "pretrain");
  const auto r = pretrain(source, rc.train);
  save_checkpoint((dir / "pretrain.ckpt.json").string(), r.params);
  auto f = open_out(dir / "pretrain_loss.csv");
  write_pretrain_trace(f, r);
  if (!r.loss_trace.empty()) std::cout << "final pretrain loss " << r.loss_trace.back() << "\n";
  return 0;
}

int cmd_adapt(const RunConfig& rc) {
  const auto source = load_graphs(need(rc.paths.source, "source data"), rc);
  const auto target = load_graphs(need(rc.paths.target, "target data"), rc);
  const auto init = load_params(rc);
  const auto dir = out_dir(rc);
  archive_config(dir, rc, "adapt");
  const auto r = adapt(init, source, target, rc.train);
  save_checkpoint((dir / "adapt.ckpt.json").string(), r.params);
  auto f = open_out(dir / "adapt_loss.csv");
  write_adapt_trace(f, r);
  std::cout << "adapted over " << r.iterations << " iterations (" << r.l1_steps << " L1, " << r.l2_steps
            << " L2)\n";
  return 0;
}

// Minimal step chart; one polyline per group.
void write_km_svg(std::ostream& out, const std::vector<std::pair<std::string, std::vector<survival::KmPoint>>>& curves,
                  std::size_t k_bins) {
  const double w = 480, h = 320, pad = 40;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};
  auto x = [&](double t) { return pad + (w - 2 * pad) * t / static_cast<double>(k_bins); };
  auto y = [&](double s) { return h - pad - (h - 2 * pad) * s; };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& [name, pts] = curves[c];
    std::ostringstream path;
    double s = 1.0;
    path << x(0) << "," << y(1.0);
    for (const auto& p : pts) {
      path << " " << x(p.time) << "," << y(s);
      s = p.survival;
      path << " " << x(p.time) << "," << y(s);
    }
    path << " " << x(static_cast<double>(k_bins)) << "," << y(s);
    const char* color = colors[c % 4];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << path.str() << "\"/>\n";
    out << "<text x=\"" << w - pad - 120 << "\" y=\"" << pad + 16 * static_cast<double>(c) << "\" fill=\"" << color
        << "\" font-size=\"12\">" << name << "</text>\n";
  }
  out << "</svg>\n";
}

int cmd_eval(const RunConfig& rc) {
  std::vector<std::pair<std::string, std::vector<WSIGraph>>> splits;
  if (!rc.paths.source.empty()) splits.emplace_back("source", load_graphs(rc.paths.source, rc));
  if (!rc.paths.target.empty()) splits.emplace_back("target", load_graphs(rc.paths.target, rc));
  if (splits.empty()) throw ConfigError("eval needs --source and/or --target");
  const auto params = load_params(rc);
  const auto dir = out_dir(rc);
  archive_config(dir, rc, "eval");

  auto metrics = open_out(dir / "metrics.csv");
  auto km = open_out(dir / "km.csv");
  metrics << "metric,split,value,seed\n";
  km << "time,survival,group\n";
  std::vector<std::pair<std::string, std::vector<survival::KmPoint>>> curves;
  for (const auto& [split, graphs] : splits) {
    const auto e = evaluate(params, graphs);
    const auto seed = rc.train.seed;
    metrics << "c_index," << split << "," << e.c_index << "," << seed << "\n";
    metrics << "median_risk," << split << "," << e.median_risk << "," << seed << "\n";
    metrics << "logrank_statistic," << split << "," << e.log_rank.statistic << "," << seed << "\n";
    metrics << "logrank_p," << split << "," << e.log_rank.p_value << "," << seed << "\n";
    metrics << "graphs," << split << "," << graphs.size() << "," << seed << "\n";
    for (const auto& [grp, pts] : {std::pair{"low", &e.km_low}, std::pair{"high", &e.km_high}}) {
      const std::string name = split + "_" + grp;
      for (const auto& p : *pts) km << p.time << "," << p.survival << "," << name << "\n";
      curves.emplace_back(name, *pts);
    }
    std::cout << split << ": C-index " << e.c_index << ", log-rank p " << e.log_rank.p_value << "\n";
  }
  auto svg = open_out(dir / "km.svg");
  write_km_svg(svg, curves, rc.train.encoder.k_bins);
  return 0;
}

int cmd_export(const RunConfig& rc) {
  std::vector<WSIGraph> graphs;
  for (const auto* p : {&rc.paths.source, &rc.paths.target}) {
    if (p->empty()) continue;
    auto g = load_graphs(*p, rc);
    graphs.insert(graphs.end(), g.begin(), g.end());
  }
  if (graphs.empty()) throw ConfigError("export-embeddings needs --source and/or --target");
  const auto params = load_params(rc);
  const auto dir = out_dir(rc);
  archive_config(dir, rc, "export");
  auto f = open_out(dir / "embeddings.csv");
  const auto hdim = params.config.hidden;
  for (const char* b : {"mp", "sp"})
    for (std::size_t j = 0; j < hdim; ++j) f << b << "_" << j << ",";
  f << "domain,predicted_bin\n";
  for (const auto& g : graphs) {
    const PreparedGraph pg(g, params.config.k_sp);
    ad::Tape tape;
    const auto mp = mp_forward(tape, pg, params);
    const auto sp = sp_forward(tape, pg, params);
    for (const auto* out : {&mp, &sp})
      for (double v : out->graph_embedding.to_vector()) f << v << ",";
    const auto fused = fuse_hazards(mp.hazard.to_vector(), sp.hazard.to_vector());
    const auto bin = std::max_element(fused.begin(), fused.end()) - fused.begin() + 1;
    f << to_string(g.domain) << "," << bin << "\n";
  }
  std::cout << "exported " << graphs.size() << " embeddings\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-branch graph domain adaptation for survival prediction"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "config file (sections synth/encoder/train/paths)");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "overrides both generator and training seed");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic source/target pair");
  auto* pre = app.add_subcommand("pretrain", "source-only training");
  auto* ada = app.add_subcommand("adapt", "domain adaptation from a pretrained checkpoint");
  auto* ev = app.add_subcommand("eval", "C-index, KM curves and log-rank on labeled data");
  auto* exp = app.add_subcommand("export-embeddings", "graph embeddings as CSV");
  for (auto* s : {gen, pre, ada, ev, exp}) add_common(s);
  for (auto* s : {pre, ada, ev, exp}) s->add_option("--source", opt.source, "source graphs (jsonl)");
  for (auto* s : {ada, ev, exp}) {
    s->add_option("--target", opt.target, "target graphs (jsonl)");
    s->add_option("--checkpoint", opt.checkpoint, "model checkpoint");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig rc = resolve(opt);
    if (*gen) return cmd_generate(rc);
    if (*pre) return cmd_pretrain(rc);
    if (*ada) return cmd_adapt(rc);
    if (*ev) return cmd_eval(rc);
    return cmd_export(rc);
  } catch (const IoError& e) {
    log::error(e.what());
    return 2;
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
}
