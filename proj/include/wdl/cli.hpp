#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "wdl/grad.hpp"
#include "wdl/io.hpp"
#include "wdl/learn.hpp"
#include "wdl/oracle.hpp"

namespace wdl::cli {

enum class DataFormat { CsvRows, PgmDir };

/// Everything a run needs, serializable as flat key=value lines ('#' starts
/// a comment). Keys are exactly the field names.
struct ExperimentConfig {
  TrainConfig train;
  std::string data_path;
  DataFormat data_format = DataFormat::CsvRows;
  std::string output_dir = ".";
  double jitter_epsilon = 1e-9;
  bool plot = true;
  bool deterministic = true;  // runs are single-threaded and seed-driven;
                              // the flag is accepted for interface parity
  int restarts = 1;
};

inline std::string loss_to_string(const LossKind& k) { return k.name(); }

inline LossKind loss_from_string(const std::string& s) {
  if (s == "total-variation") return LossKind::total_variation();
  if (s == "quadratic") return LossKind::quadratic();
  if (s == "kullback-leibler") return LossKind::kullback_leibler();
  if (s.rfind("wasserstein", 0) == 0) {
    int inner = 200;
    auto colon = s.find(':');
    if (colon != std::string::npos) inner = std::stoi(s.substr(colon + 1));
    return LossKind::wasserstein(inner);
  }
  throw validation_error("config: unknown loss '" + s + "'");
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  kv("S", std::to_string(c.train.S));
  kv("L", std::to_string(c.train.L));
  kv("gamma", io::fmt_double(c.train.gamma));
  kv("loss", loss_to_string(c.train.loss));
  kv("zeta", io::fmt_double(c.train.zeta));
  kv("tau", io::fmt_double(c.train.tau));
  kv("rho", std::isfinite(c.train.rho) ? io::fmt_double(c.train.rho) : "inf");
  kv("log_domain", c.train.log_domain ? "true" : "false");
  kv("warm_start", c.train.warm_start ? "true" : "false");
  kv("restart_every", std::to_string(c.train.restart_every));
  kv("max_outer_iters", std::to_string(c.train.max_outer_iters));
  kv("lbfgs_memory", std::to_string(c.train.lbfgs_memory));
  kv("seed", std::to_string(c.train.seed));
  kv("init", c.train.init == AtomInit::UniformAtoms ? "uniform-atoms" : "random-atoms");
  kv("data_path", c.data_path);
  kv("data_format", c.data_format == DataFormat::CsvRows ? "csv-rows" : "pgm-dir");
  kv("output_dir", c.output_dir);
  kv("jitter_epsilon", io::fmt_double(c.jitter_epsilon));
  kv("plot", c.plot ? "true" : "false");
  kv("deterministic", c.deterministic ? "true" : "false");
  kv("restarts", std::to_string(c.restarts));
  return out;
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  auto to_bool = [](const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw validation_error("config: expected a boolean, got '" + v + "'");
  };
  while (std::getline(ss, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw validation_error("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "S") c.train.S = std::stoi(val);
    else if (key == "L") c.train.L = std::stoi(val);
    else if (key == "gamma") c.train.gamma = std::stod(val);
    else if (key == "loss") c.train.loss = loss_from_string(val);
    else if (key == "zeta") c.train.zeta = std::stod(val);
    else if (key == "tau") c.train.tau = std::stod(val);
    else if (key == "rho") c.train.rho = (val == "inf" ? kInf : std::stod(val));
    else if (key == "log_domain") c.train.log_domain = to_bool(val);
    else if (key == "warm_start") c.train.warm_start = to_bool(val);
    else if (key == "restart_every") c.train.restart_every = std::stoi(val);
    else if (key == "max_outer_iters") c.train.max_outer_iters = std::stoi(val);
    else if (key == "lbfgs_memory") c.train.lbfgs_memory = std::stoi(val);
    else if (key == "seed") c.train.seed = std::stoull(val);
    else if (key == "init")
      c.train.init = (val == "random-atoms") ? AtomInit::RandomAtoms : AtomInit::UniformAtoms;
    else if (key == "data_path") c.data_path = val;
    else if (key == "data_format") {
      if (val == "csv-rows") c.data_format = DataFormat::CsvRows;
      else if (val == "pgm-dir") c.data_format = DataFormat::PgmDir;
      else throw validation_error("config: unknown data_format '" + val + "'");
    }
    else if (key == "output_dir") c.output_dir = val;
    else if (key == "jitter_epsilon") c.jitter_epsilon = std::stod(val);
    else if (key == "plot") c.plot = to_bool(val);
    else if (key == "deterministic") c.deterministic = to_bool(val);
    else if (key == "restarts") c.restarts = std::stoi(val);
    else throw validation_error("config: unknown key '" + key + "'");
  }
  return c;
}

struct Dataset {
  Grid grid;
  std::vector<Vec> columns;  // M histograms on Sigma_N (jittered, normalized)
};

/// Loads, jitters and normalizes every datapoint. CSV rows become 1-D
/// histograms; a directory of PGM images becomes 2-D histograms with the
/// grid taken from the image dimensions.
inline Dataset ingest(const std::string& data_path, DataFormat format,
                      double jitter_epsilon) {
  Dataset ds;
  if (format == DataFormat::CsvRows) {
    std::vector<Vec> rows = io::read_csv_rows(data_path);
    ds.grid = Grid({static_cast<int>(rows[0].size())});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      try {
        ds.columns.push_back(
            Histogram::normalized(ds.grid, rows[i], jitter_epsilon).values());
      } catch (const validation_error& e) {
        throw validation_error(data_path + ": row " + std::to_string(i + 1) + ": " +
                               e.what());
      }
    }
    return ds;
  }
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(data_path))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path().string());
  if (files.empty()) throw validation_error(data_path + ": no .pgm files");
  std::sort(files.begin(), files.end());
  for (const std::string& file : files) {
    io::PgmImage img = io::read_pgm(file);
    if (ds.columns.empty()) {
      ds.grid = Grid({img.rows, img.cols});
    } else if (ds.grid.dims[0] != img.rows || ds.grid.dims[1] != img.cols) {
      throw validation_error(file + ": image dimensions differ from the first image");
    }
    try {
      ds.columns.push_back(
          Histogram::normalized(ds.grid, img.pixels, jitter_epsilon).values());
    } catch (const validation_error& e) {
      throw validation_error(file + ": " + e.what());
    }
  }
  return ds;
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void write_config_copy(const ExperimentConfig& cfg) {
  std::ofstream f(join(cfg.output_dir, "config.txt"), std::ios::binary);
  f << serialize_config(cfg);
}

}  // namespace detail

/// Writes the barycenter of the ingested atoms for one weight vector (or a
/// full triangular sweep with --sweep for S = 3).
inline int cmd_barycenter(const ExperimentConfig& cfg, const Vec& weights, int sweep) {
  Dataset ds = ingest(cfg.data_path, cfg.data_format, cfg.jitter_epsilon);
  Kernel kernel = build_kernel(CostSpec::squared_euclidean(ds.grid), cfg.train.gamma);
  detail::ensure_dir(cfg.output_dir);
  detail::write_config_copy(cfg);

  auto solve_one = [&](const Vec& lambda) {
    BarycenterProblem prob;
    prob.atoms = ds.columns;
    prob.weights = lambda;
    prob.kernel = &kernel;
    prob.iters = cfg.train.L;
    prob.tau = cfg.train.tau;
    prob.rho = cfg.train.rho;
    prob.log_domain = cfg.train.log_domain;
    BarycenterTrace tr = barycenter_solve(prob);
    if (tr.used_dense_log_fallback)
      std::cerr << "warning: non-separable cost, log-domain kernel applications "
                   "fall back to dense log-sum-exp\n";
    return tr.P;
  };

  if (sweep > 0) {
    if (ds.columns.size() != 3)
      throw validation_error("barycenter --sweep needs exactly 3 atoms");
    for (int i = 0; i <= sweep; ++i)
      for (int j = 0; j <= sweep - i; ++j) {
        int k = sweep - i - j;
        Vec lambda = {static_cast<double>(i) / sweep, static_cast<double>(j) / sweep,
                      static_cast<double>(k) / sweep};
        Vec p = solve_one(lambda);
        std::string stem = "barycenter_" + std::to_string(i) + "_" + std::to_string(j) +
                           "_" + std::to_string(k);
        io::write_histograms_csv(detail::join(cfg.output_dir, stem + ".csv"), {p});
        if (cfg.data_format == DataFormat::PgmDir)
          io::write_pgm(detail::join(cfg.output_dir, stem + ".pgm"), ds.grid, p);
      }
    return 0;
  }

  if (weights.size() != ds.columns.size())
    throw validation_error("barycenter: got " + std::to_string(weights.size()) +
                           " weights for " + std::to_string(ds.columns.size()) + " atoms");
  Vec p = solve_one(weights);
  io::write_histograms_csv(detail::join(cfg.output_dir, "barycenter.csv"), {p});
  if (cfg.data_format == DataFormat::PgmDir)
    io::write_pgm(detail::join(cfg.output_dir, "barycenter.pgm"), ds.grid, p);
  return 0;
}

/// Full training run: atoms.csv, weights.csv, recon.csv, history.csv and
/// the barycentric scatter SVG. Reconstructions honor the decode variant
/// (tau, rho, log_domain); optimization itself runs on the plain or
/// log-domain path.
inline int cmd_train(const ExperimentConfig& cfg) {
  Dataset ds = ingest(cfg.data_path, cfg.data_format, cfg.jitter_epsilon);
  Kernel kernel = build_kernel(CostSpec::squared_euclidean(ds.grid), cfg.train.gamma);
  detail::ensure_dir(cfg.output_dir);
  detail::write_config_copy(cfg);

  TrainResult res = cfg.restarts > 1 ? train_restarts(ds.columns, cfg.train, kernel, cfg.restarts)
                                     : train(ds.columns, cfg.train, kernel);
  if (res.line_search_gave_up)
    std::cerr << "warning: line search stalled; returning the best iterate seen\n";

  io::write_histograms_csv(detail::join(cfg.output_dir, "atoms.csv"), res.atoms);
  io::write_histograms_csv(detail::join(cfg.output_dir, "weights.csv"), res.weights);

  std::vector<Vec> recon(res.weights.size());
  for (std::size_t i = 0; i < res.weights.size(); ++i)
    recon[i] = reconstruct(res.atoms, res.weights[i], cfg.train, kernel);
  io::write_histograms_csv(detail::join(cfg.output_dir, "recon.csv"), recon);

  std::vector<std::array<double, 4>> hist;
  for (const HistoryRow& r : res.history)
    hist.push_back({static_cast<double>(r.outer_iter), r.objective, r.mean_recon_error,
                    r.seconds});
  io::write_history_csv(detail::join(cfg.output_dir, "history.csv"), hist);

  if (cfg.plot)
    io::write_weights_scatter_svg(detail::join(cfg.output_dir, "weights_scatter.svg"),
                                  res.weights);
  std::cout << "objective " << io::fmt_double(res.objective) << " after "
            << (res.history.empty() ? 0 : res.history.back().outer_iter)
            << " outer iterations\n";
  return 0;
}

/// Decodes stored weights against stored atoms.
inline int cmd_reconstruct(const ExperimentConfig& cfg, const std::string& atoms_path,
                           const std::string& weights_path) {
  std::vector<Vec> atom_rows = io::read_csv_rows(atoms_path);
  std::vector<Vec> weight_rows = io::read_csv_rows(weights_path);
  Grid grid({static_cast<int>(atom_rows[0].size())});
  std::vector<Vec> atoms;
  for (std::size_t s = 0; s < atom_rows.size(); ++s)
    atoms.push_back(Histogram::normalized(grid, atom_rows[s], 0.0).values());
  Kernel kernel = build_kernel(CostSpec::squared_euclidean(grid), cfg.train.gamma);
  detail::ensure_dir(cfg.output_dir);
  std::vector<Vec> recon;
  for (const Vec& w : weight_rows) {
    if (w.size() != atoms.size())
      throw validation_error("reconstruct: weight row length != atom count");
    double sum = vec_sum(w);
    Vec lambda = w;
    if (std::abs(sum - 1.0) > 1e-8) {
      if (!(sum > 0.0)) throw validation_error("reconstruct: weight row sums to zero");
      for (double& v : lambda) v /= sum;
    }
    recon.push_back(reconstruct(atoms, lambda, cfg.train, kernel));
  }
  io::write_histograms_csv(detail::join(cfg.output_dir, "recon.csv"), recon);
  return 0;
}

struct GradcheckRow {
  std::string loss;
  std::string variant;
  int L;
  double max_rel_err;
};

/// Desk-scale gradient battery: backward-loop and analytic-recursion
/// gradients against central finite differences in atom and weight space,
/// per loss, per variant, per L. Exit code 3 when any case exceeds 1e-4.
/// corrupt_sign flips one recursion sign as a negative control.
inline int cmd_gradcheck(const ExperimentConfig& cfg, bool corrupt_sign,
                         std::vector<GradcheckRow>* out_rows = nullptr) {
  const int N = 8;
  if (N > 16) throw parameter_error("gradcheck: desk scale only");
  Grid grid({N});
  Kernel kernel = build_kernel(CostSpec::squared_euclidean(grid), cfg.train.gamma);
  const int S = 2;
  std::mt19937_64 rng(cfg.train.seed + 17);
  std::uniform_real_distribution<double> unif(0.1, 1.0);
  auto rand_simplex = [&]() {
    Vec v(static_cast<std::size_t>(N));
    for (double& x : v) x = unif(rng);
    double s = vec_sum(v);
    for (double& x : v) x /= s;
    return v;
  };
  std::vector<Vec> atoms = {rand_simplex(), rand_simplex()};
  Vec x = rand_simplex();
  Vec lambda = {0.35, 0.65};

  // the Wasserstein loss cotangent is the converged inner potential
  std::vector<LossKind> losses = {LossKind::total_variation(), LossKind::quadratic(),
                                  LossKind::kullback_leibler(), LossKind::wasserstein(1000)};
  std::vector<int> iter_counts = {1, 3, 7};

  detail::ensure_dir(cfg.output_dir);
  std::ofstream rep(detail::join(cfg.output_dir, "gradcheck.csv"), std::ios::binary);
  rep << "loss,variant,L,max_rel_err\n";

  double worst = 0.0;
  std::string worst_case;
  for (const LossKind& loss : losses) {
    for (int L : iter_counts) {
      auto energy = [&](const std::vector<Vec>& D, const Vec& lam) {
        BarycenterProblem prob;
        prob.atoms = D;
        prob.weights = lam;
        prob.kernel = &kernel;
        prob.iters = L;
        BarycenterTrace tr = barycenter_forward(prob);
        return loss_value(loss, tr.P, x, &kernel);
      };
      // finite differences along simplex-tangent directions
      oracle::FDSpec fd;
      fd.tangent_projection = true;
      std::vector<Vec> fd_atoms(static_cast<std::size_t>(S));
      for (int s = 0; s < S; ++s) {
        fd_atoms[static_cast<std::size_t>(s)] = oracle::fd_gradient(
            [&](const Vec& d) {
              std::vector<Vec> D = atoms;
              D[static_cast<std::size_t>(s)] = d;
              return energy(D, lambda);
            },
            atoms[static_cast<std::size_t>(s)], fd);
      }
      Vec fd_weights = oracle::fd_gradient(
          [&](const Vec& lam) { return energy(atoms, lam); }, lambda, fd);

      auto compare = [&](const GradientPack& pack, const std::string& variant) {
        double err = 0.0, scale = 0.0;
        for (int s = 0; s < S; ++s) {
          Vec got = pack.grad_atoms[static_cast<std::size_t>(s)];
          double mean = vec_mean(got);
          for (int i = 0; i < N; ++i) {
            double centered = got[static_cast<std::size_t>(i)] - mean;
            err = std::max(err, std::abs(centered - fd_atoms[static_cast<std::size_t>(s)]
                                                            [static_cast<std::size_t>(i)]));
            scale = std::max(scale, std::abs(fd_atoms[static_cast<std::size_t>(s)]
                                                     [static_cast<std::size_t>(i)]));
          }
        }
        Vec gw = pack.grad_weights;
        if (corrupt_sign)
          for (double& v : gw) v = -v;  // negative-control hook
        double mean = vec_mean(gw);
        for (int s = 0; s < S; ++s) {
          double centered = gw[static_cast<std::size_t>(s)] - mean;
          err = std::max(err, std::abs(centered - fd_weights[static_cast<std::size_t>(s)]));
          scale = std::max(scale, std::abs(fd_weights[static_cast<std::size_t>(s)]));
        }
        double rel = err / std::max(scale, 1.0);
        rep << loss.name() << "," << variant << "," << L << "," << io::fmt_double(rel)
            << "\n";
        if (out_rows) out_rows->push_back({loss.name(), variant, L, rel});
        if (rel > worst) {
          worst = rel;
          worst_case = loss.name() + "/" + variant + "/L=" + std::to_string(L);
        }
      };

      compare(sinkhorn_grads(x, atoms, lambda, kernel, L, loss), "backward-loop");
      compare(prop31_grads(x, atoms, lambda, kernel, L, loss), "analytic-recursion");
      compare(log_sinkhorn_grads(x, atoms, lambda, kernel, L, loss), "log-domain");
    }
  }
  std::cout << "gradcheck worst relative error " << io::fmt_double(worst) << " ("
            << worst_case << ")\n";
  if (worst > 1e-4) {
    std::cerr << "gradcheck FAILED: " << worst_case << " exceeded 1e-4\n";
    return 3;
  }
  return 0;
}

}  // namespace wdl::cli
