#include "cli.hpp"

#include "cgdro/datagen.hpp"
#include "cgdro/error.hpp"
#include "cgdro/harness.hpp"
#include "cgdro/inference.hpp"
#include "cgdro/io.hpp"
#include "cgdro/rng.hpp"
#include "cgdro/solver.hpp"

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef CGDRO_VERSION
#define CGDRO_VERSION "0.0.0"
#endif
#ifndef CGDRO_CONTRACT_HASH
#define CGDRO_CONTRACT_HASH "unknown"
#endif

namespace cgdro::cli {

namespace {

namespace fs = std::filesystem;

struct Global {
  std::string config;
  int workers = 0;
  bool verbose = false;
  bool json_errors = false;
};

// Flags that map onto ProblemConfig; unset ones leave the config file value.
struct ConfigFlags {
  std::optional<double> alpha, alpha0, eta0, eta, tol, ridge;
  std::optional<int> M, max_iter;
  std::optional<std::uint64_t> seed;
  bool no_shift = false;

  void add_solver(CLI::App* app) {
    app->add_option("--eta", eta, "Mirror Prox learning-rate scale");
    app->add_option("--max-iter", max_iter, "Mirror Prox iteration cap T");
    app->add_option("--tol", tol, "duality-gap tolerance");
    app->add_option("--ridge", ridge, "nuisance ridge when cross-validation is off");
    app->add_option("--seed", seed, "base seed");
    app->add_flag("--no-shift", no_shift, "use label-average moments (omega = 1)");
  }
  void add_inference(CLI::App* app) {
    app->add_option("--alpha", alpha, "significance level");
    app->add_option("--alpha0", alpha0, "filter budget");
    app->add_option("--eta0", eta0, "filter slack");
    app->add_option("--M", M, "number of perturbation draws");
  }

  ProblemConfig resolve(const Global& g) const {
    ProblemConfig cfg = g.config.empty() ? ProblemConfig{} : load_config(g.config);
    if (alpha) cfg.alpha = *alpha;
    if (alpha0) cfg.alpha0 = *alpha0;
    if (eta0) cfg.eta0 = *eta0;
    if (eta) cfg.eta = *eta;
    if (tol) cfg.tol = *tol;
    if (ridge) {
      cfg.ridge = *ridge;
      cfg.cv_ridge = false;
    }
    if (M) cfg.M = *M;
    if (max_iter) cfg.max_iter = *max_iter;
    if (seed) cfg.seed = *seed;
    if (no_shift) cfg.no_shift = true;
    cfg.validate();
    return cfg;
  }
};

struct SettingFlags {
  std::string setting = "S1";
  std::optional<double> delta, sigma;
  std::optional<int> d, L, K;

  void add(CLI::App* app) {
    app->add_option("--setting", setting, "S1..S5, FIG2, FIG3_NONREG, FIG3_UNSTABLE, FIG3_REG");
    app->add_option("--delta", delta, "shift parameter (S3, FIG2)");
    app->add_option("--sigma", sigma, "heterogeneity (S4)");
    app->add_option("--d", d, "covariate dimension");
    app->add_option("--L", L, "number of sources");
    app->add_option("--K", K, "number of non-reference classes");
  }
  SpecParams params() const { return {delta, sigma, d, L, K}; }
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cli", "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("cli", "write failed: " + path.string());
}

void emit_json(const Json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
  } else {
    save_json(path, j);
  }
}

void report(std::ostream& err, bool json, const std::string& kind, const std::string& module,
            const std::string& message, std::optional<double> residual = std::nullopt) {
  if (json) {
    Json j{{"error", {{"kind", kind}, {"module", module}, {"message", message}}}};
    if (residual) j["error"]["residual"] = *residual;
    err << j.dump() << '\n';
  } else {
    err << "error [" << module << "] " << message << '\n';
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional Group DRO for multi-source classification under covariate shift", "cgdro"};
  app.set_version_flag("--version", std::string(CGDRO_VERSION) + " (contract " CGDRO_CONTRACT_HASH ")");
  app.require_subcommand(1);
  Global g;
  app.add_option("--config", g.config, "JSON or TOML file with ProblemConfig fields")->check(CLI::ExistingFile);
  app.add_option("--workers", g.workers, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_flag("-v,--verbose", g.verbose, "debug logging");
  app.add_flag("--json-errors", g.json_errors, "print errors as JSON on stderr");

  // fit
  auto* fit = app.add_subcommand("fit", "estimate theta and gamma");
  std::string sources_path, target_path, out_path, method = "cgdro";
  ConfigFlags fit_flags;
  fit->add_option("--sources", sources_path, "CSV with columns source,y,x1..xd")->required();
  fit->add_option("--target", target_path, "CSV with columns x1..xd")->required();
  fit->add_option("--method", method, "cgdro, gdro or erm")->check(CLI::IsMember({"cgdro", "gdro", "erm"}));
  fit->add_option("--out", out_path, "result JSON (stdout when omitted)");
  fit_flags.add_solver(fit);

  // infer
  auto* inf = app.add_subcommand("infer", "perturbation confidence interval for one coordinate");
  ConfigFlags inf_flags;
  int coord = 0;
  inf->add_option("--sources", sources_path, "CSV with columns source,y,x1..xd")->required();
  inf->add_option("--target", target_path, "CSV with columns x1..xd")->required();
  inf->add_option("--coord", coord, "0-based index into theta (class-major)")->check(CLI::NonNegativeNumber);
  inf->add_option("--out", out_path, "result JSON (stdout when omitted)");
  inf_flags.add_solver(inf);
  inf_flags.add_inference(inf);

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw replicated datasets to CSV");
  SettingFlags sim_setting;
  Index sim_n = 500, sim_N = 1000;
  int sim_reps = 1;
  std::uint64_t sim_seed = 0;
  std::string out_dir = ".";
  sim_setting.add(sim);
  sim->add_option("--n", sim_n, "rows per source")->check(CLI::PositiveNumber);
  sim->add_option("--N", sim_N, "target rows")->check(CLI::PositiveNumber);
  sim->add_option("--reps", sim_reps, "replications")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "freezes coefficients and drives every replication");
  sim->add_option("--out-dir", out_dir, "directory for rep<r>_sources.csv and rep<r>_target.csv");

  // bench
  auto* bench = app.add_subcommand("bench", "mixture sweeps, rate studies and coverage studies as tidy CSV");
  SettingFlags bench_setting;
  ConfigFlags bench_flags;
  std::string study = "sweep", cache_dir;
  std::vector<double> mixture_grid{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<Index> n_grid{200, 400, 800, 1600};
  Index bench_n = 300, bench_N = 10000, n_total = 4000, N_eval = 100000, n_big = 100000, N_big = 200000;
  int bench_reps = 10, bench_coord = 0;
  std::uint64_t spec_seed = 0;
  bench->add_option("--study", study, "sweep, rate or coverage")->check(CLI::IsMember({"sweep", "rate", "coverage"}));
  bench_setting.add(bench);
  bench_flags.add_solver(bench);
  bench_flags.add_inference(bench);
  bench->add_option("--spec-seed", spec_seed, "seed that freezes the coefficients");
  bench->add_option("--mixture-grid", mixture_grid, "share of rows from source 1 (sweep)")->delimiter(',');
  bench->add_option("--n-grid", n_grid, "rows per source (rate)")->delimiter(',');
  bench->add_option("--n", bench_n, "rows per source (coverage)")->check(CLI::PositiveNumber);
  bench->add_option("--N", bench_N, "target rows")->check(CLI::PositiveNumber);
  bench->add_option("--n-total", n_total, "source rows split by the mixture (sweep)")->check(CLI::PositiveNumber);
  bench->add_option("--N-eval", N_eval, "target rows for loss evaluation (sweep)")->check(CLI::PositiveNumber);
  bench->add_option("--n-big", n_big, "rows per source for the reference theta")->check(CLI::PositiveNumber);
  bench->add_option("--N-big", N_big, "target rows for the reference theta")->check(CLI::PositiveNumber);
  bench->add_option("--reps", bench_reps, "replications")->check(CLI::PositiveNumber);
  bench->add_option("--coord", bench_coord, "0-based coordinate (coverage)")->check(CLI::NonNegativeNumber);
  bench->add_option("--cache-dir", cache_dir, "cache for reference thetas");
  bench->add_option("--out", out_path, "tidy CSV (stdout when omitted)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    report(err, g.json_errors, "usage", "cli", e.what());
    return 1;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  spdlog::logger log("cgdro", sink);
  log.set_pattern("[%H:%M:%S.%e] [%l] %v");
  log.set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);
  if (g.workers > 0) omp_set_num_threads(g.workers);
  log.debug("workers: {}", g.workers > 0 ? g.workers : omp_get_max_threads());

  try {
    if (fit->parsed()) {
      const ProblemConfig cfg = fit_flags.resolve(g);
      const auto sources = load_sources(sources_path);
      const auto target = load_target(target_path);
      log.debug("loaded {} sources and {} target rows", sources.size(), target.x.rows());
      FitResult res;
      if (method == "cgdro") {
        res = cgdro_fit(sources, target, cfg).fit;
      } else if (method == "gdro") {
        res = group_dro(sources, MirrorProxOptions::from(cfg));
      } else {
        res.method = "erm";
        res.theta = erm_pooled(sources);
        res.converged = true;
      }
      if (!res.converged) log.warn("Mirror Prox stopped at T={} with gap {}", res.iterations, res.final_gap());
      log.info("{} finished after {} iterations", res.method, res.iterations);
      emit_json(to_json(res), out_path, out);
    } else if (inf->parsed()) {
      const ProblemConfig cfg = inf_flags.resolve(g);
      const auto sources = load_sources(sources_path);
      const auto target = load_target(target_path);
      const InferenceResult res = infer(sources, target, cfg, coord);
      log.info("kept {} of {} draws", res.filtered_m(), res.num_draws);
      if (res.filtered_m() == 0) log.warn("every perturbation draw was filtered out");
      emit_json(to_json(res), out_path, out);
    } else if (sim->parsed()) {
      const DgpSpec spec = make_spec(parse_setting(sim_setting.setting), sim_setting.params(), sim_seed);
      fs::create_directories(out_dir);
      for (int r = 0; r < sim_reps; ++r) {
        const std::uint64_t seed = derive_seed(sim_seed, static_cast<std::uint64_t>(r));
        const fs::path base = fs::path(out_dir) / ("rep" + std::to_string(r));
        save_sources(base.string() + "_sources.csv", gen_sources(spec, std::vector<Index>(spec.L, sim_n), seed));
        save_target(base.string() + "_target.csv", gen_target(spec, sim_N, derive_seed(seed, 7)));
      }
      log.info("wrote {} replications to {}", sim_reps, out_dir);
    } else if (bench->parsed()) {
      const ProblemConfig cfg = bench_flags.resolve(g);
      const Setting setting = parse_setting(bench_setting.setting);
      PopulationOptions pop;
      pop.n_big = n_big;
      pop.N_big = N_big;
      pop.seed = derive_seed(cfg.seed, 0x909);
      pop.cache_dir = cache_dir;
      std::vector<TidyRow> rows;
      if (study == "sweep") {
        WorstCaseSweepOptions o;
        o.setting = setting;
        o.params = bench_setting.params();
        o.spec_seed = spec_seed;
        o.mixtures = mixture_grid;
        o.n_total = n_total;
        o.N = bench_N;
        o.N_eval = N_eval;
        o.reps = bench_reps;
        o.seed = cfg.seed;
        o.cfg = cfg;
        o.gdro = MirrorProxOptions::from(cfg);
        rows = worst_case_sweep(o).rows;
      } else if (study == "rate") {
        RateStudyOptions o;
        o.setting = setting;
        o.params = bench_setting.params();
        o.spec_seed = spec_seed;
        o.n_grid = n_grid;
        o.N = bench_N;
        o.reps = bench_reps;
        o.seed = cfg.seed;
        o.cfg = cfg;
        o.population = pop;
        o.population_cfg = cfg;
        const auto res = rate_study(o);
        log.info("log-log slope {}", res.slope);
        rows = res.rows;
      } else {
        CoverageStudyOptions o;
        o.setting = setting;
        o.params = bench_setting.params();
        o.spec_seed = spec_seed;
        o.n = bench_n;
        o.N = bench_N;
        o.reps = bench_reps;
        o.coord = bench_coord;
        o.seed = cfg.seed;
        o.cfg = cfg;
        o.population = pop;
        o.population_cfg = cfg;
        const auto res = coverage_study(o);
        log.info("coverage {} (normality {})", res.coverage, res.naive_coverage);
        rows = res.rows;
      }
      std::ostringstream csv;
      write_tidy_csv(csv, rows);
      if (out_path.empty()) {
        out << csv.str();
      } else {
        write_file(out_path, csv.str());
      }
    }
  } catch (const NumericalError& e) {
    report(err, g.json_errors, e.kind(), e.module(), e.what(), e.residual());
    return 2;
  } catch (const Error& e) {
    report(err, g.json_errors, e.kind(), e.module(), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    report(err, g.json_errors, "io", "cli", e.what());
    return 1;
  }
  return 0;
}

}  // namespace cgdro::cli
