// Command-line front end: barycenter, train, reconstruct, gradcheck.
// Exit codes: 0 success, 1 validation error, 2 numerical instability,
// 3 gradcheck failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "wdl/cli.hpp"

namespace {

using wdl::cli::ExperimentConfig;

void add_common_flags(CLI::App* cmd, ExperimentConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "config file (flat key=value lines)");
  cmd->add_option("--data", cfg.data_path, "input data (CSV file or PGM directory)");
  cmd->add_option("--format", [&cfg](const std::vector<std::string>& v) {
        if (v[0] == "csv-rows") cfg.data_format = wdl::cli::DataFormat::CsvRows;
        else if (v[0] == "pgm-dir") cfg.data_format = wdl::cli::DataFormat::PgmDir;
        else return false;
        return true;
      }, "csv-rows | pgm-dir");
  cmd->add_option("--out", cfg.output_dir, "output directory");
  cmd->add_option("--gamma", cfg.train.gamma, "entropic regularization");
  cmd->add_option("--n-iters", cfg.train.L, "Sinkhorn iterations per evaluation");
  cmd->add_option("--loss", [&cfg](const std::vector<std::string>& v) {
        cfg.train.loss = wdl::cli::loss_from_string(v[0]);
        return true;
      }, "total-variation | quadratic | kullback-leibler | wasserstein[:inner]");
  cmd->add_option("--atoms", cfg.train.S, "number of atoms S");
  cmd->add_option("--tau", cfg.train.tau, "heavyball extrapolation (<= 0)");
  cmd->add_option("--rho", [&cfg](const std::vector<std::string>& v) {
        cfg.train.rho = (v[0] == "inf") ? wdl::kInf : std::stod(v[0]);
        return true;
      }, "unbalanced KL strength (inf = balanced)");
  cmd->add_flag("--log-domain,!--no-log-domain", cfg.train.log_domain,
                "stabilized log-domain solver");
  cmd->add_flag("--warm-start,!--no-warm-start", cfg.train.warm_start,
                "reuse scalings across evaluations");
  cmd->add_option("--zeta", cfg.train.zeta, "weight-gradient scale (0 = N/(100*M))");
  cmd->add_option("--seed", cfg.train.seed, "random seed");
  cmd->add_flag("--deterministic,!--no-deterministic", cfg.deterministic,
                "seeded, fixed-order execution (always on; flag kept for parity)");
  cmd->add_option("--max-outer-iters", cfg.train.max_outer_iters, "outer iterations");
  cmd->add_option("--restart-every", cfg.train.restart_every,
                  "curvature-memory restart period");
  cmd->add_option("--lbfgs-memory", cfg.train.lbfgs_memory, "curvature pairs kept");
  cmd->add_option("--jitter-epsilon", cfg.jitter_epsilon,
                  "added to every bin before normalization");
  cmd->add_option("--restarts", cfg.restarts, "training relaunches, best kept");
  cmd->add_option("--init", [&cfg](const std::vector<std::string>& v) {
        if (v[0] == "uniform-atoms") cfg.train.init = wdl::AtomInit::UniformAtoms;
        else if (v[0] == "random-atoms") cfg.train.init = wdl::AtomInit::RandomAtoms;
        else return false;
        return true;
      }, "uniform-atoms | random-atoms");
  cmd->add_flag("--plot,!--no-plot", cfg.plot, "emit SVG plots");
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw wdl::validation_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return wdl::cli::parse_config(ss.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein dictionary learning for histograms"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  // A config file provides defaults; explicit flags override them. The file
  // is loaded before CLI11 writes flag values into cfg.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        cfg = load_config_file(argv[i + 1]);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
      break;
    }
  }

  std::string config_path;
  std::string weights_arg;
  std::string atoms_path, weights_path;
  int sweep = 0;
  bool corrupt_sign = false;

  CLI::App* bary = app.add_subcommand("barycenter", "barycenter of the input histograms");
  add_common_flags(bary, cfg, config_path);
  bary->add_option("--weights", weights_arg, "comma-separated barycentric weights");
  bary->add_option("--sweep", sweep, "triangular lattice sweep resolution (3 atoms)");

  CLI::App* tr = app.add_subcommand("train", "learn atoms and weights");
  add_common_flags(tr, cfg, config_path);

  CLI::App* rec = app.add_subcommand("reconstruct", "decode stored weights");
  add_common_flags(rec, cfg, config_path);
  rec->add_option("--atoms-csv", atoms_path, "atoms file")->required();
  rec->add_option("--weights-csv", weights_path, "weights file")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "gradient consistency battery");
  add_common_flags(gc, cfg, config_path);
  gc->add_flag("--corrupt-sign", corrupt_sign)->group("");  // test harness hook

  CLI11_PARSE(app, argc, argv);

  try {
    if (bary->parsed()) {
      wdl::Vec w;
      if (!weights_arg.empty()) {
        std::stringstream ss(weights_arg);
        std::string cell;
        while (std::getline(ss, cell, ',')) w.push_back(std::stod(cell));
      }
      return wdl::cli::cmd_barycenter(cfg, w, sweep);
    }
    if (tr->parsed()) return wdl::cli::cmd_train(cfg);
    if (rec->parsed()) return wdl::cli::cmd_reconstruct(cfg, atoms_path, weights_path);
    if (gc->parsed()) return wdl::cli::cmd_gradcheck(cfg, corrupt_sign);
  } catch (const wdl::instability_error& e) {
    std::cerr << "instability: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
