// Command-line front end: estimate, simulate, truth, demo.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "msrs/csv.hpp"
#include "msrs/data.hpp"
#include "msrs/hazards.hpp"
#include "msrs/inference.hpp"
#include "msrs/model.hpp"
#include "msrs/probtrans.hpp"
#include "msrs/ratetable.hpp"
#include "msrs/simulate.hpp"

namespace fs = std::filesystem;
using namespace msrs;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kRateTableEnv = "MSRS_RATETABLE_DIR";

enum Exit { ok = 0, usage = 1, validation = 2, numerical = 3 };

struct EstimateArgs {
  std::string data, ratetable, model, out = "msrs_out";
  double s = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
  bool dense = false;
  std::vector<double> times;
  double time_scale = 1.0, age_scale = 1.0;
  int boot = 0;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ci{"all"};
  double level = 0.95;
  int threads = 1;
};

struct SimulateArgs {
  std::string scenario = "exp.small", ratetable, out = "msrs_sim";
  std::optional<int> n, n_sim, boot;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  double level = 0.95;
  std::string truth_method = "mc";
  int mc_draws = 1000000;
  double truth_tol = 1e-6;
};

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

// FNV-1a digest of a file, recorded in manifests to pin inputs.
std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << h;
  return s.str();
}

// Explicit path first, then the rate-table directory from the environment.
std::string resolve_ratetable(const std::string& given) {
  const char* dir = std::getenv(kRateTableEnv);
  if (given.empty()) {
    if (!dir) throw std::invalid_argument(std::string("--ratetable is required unless ") + kRateTableEnv + " is set");
    return (fs::path(dir) / "ratetable.csv").string();
  }
  if (fs::exists(given) || !dir || fs::path(given).is_absolute()) return given;
  const auto alt = fs::path(dir) / given;
  return fs::exists(alt) ? alt.string() : given;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw std::invalid_argument(what + " '" + path + "' does not exist");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  return f;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<CiMethod> parse_methods(const std::vector<std::string>& names) {
  std::vector<CiMethod> out;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(kAllCiMethods), std::end(kAllCiMethods)};
    out.push_back(parse_ci_method(n));
  }
  return out;
}

int run_estimate(const EstimateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto methods = parse_methods(a.ci);
  const bool needs_boot = std::any_of(methods.begin(), methods.end(),
                                      [](CiMethod m) { return m != CiMethod::plain_greenwood; });
  if (a.boot == 1 || a.boot < 0) throw std::invalid_argument("--boot must be 0 or >= 2");
  if (needs_boot && a.boot < 2)
    throw std::invalid_argument("bootstrap CI methods need --boot B with B >= 2 (use --ci plain.G otherwise)");
  if (!(a.level > 0.0 && a.level < 1.0)) throw std::invalid_argument("--level must lie in (0, 1)");
  const std::string rt_path = resolve_ratetable(a.ratetable);
  require_file(a.model, "model file");
  require_file(a.data, "data file");
  require_file(rt_path, "rate table");

  std::ifstream mf(a.model);
  const auto model = TransitionModel::from_json(nlohmann::json::parse(mf));
  LoadOptions lo;
  lo.time_scale = a.time_scale;
  lo.age_scale = a.age_scale;
  const auto data = load_dataset(a.data, model, lo);
  const auto table = load_ratetable(rt_path);

  std::vector<double> times;
  for (double t : a.times) times.push_back(t * a.time_scale);
  GridOptions grid;
  grid.extra_times = times;
  grid.dense_grid = a.dense;
  grid.t_max = a.t_max * a.time_scale;
  const double s = a.s * a.time_scale;

  const HazardEstimator estimator(data, table, grid);
  const auto hs = estimator.estimate();
  const auto pt = aalen_johansen(hs, model, s, grid.t_max, true);
  if (times.empty())
    for (double t : hs.grid)
      if (t <= grid.t_max) times.push_back(t);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  {
    auto f = open_out(out / "hazards.csv");
    csv::write_row(f, "time", "trans", "label", "kind", "value", "variance");
    for (const auto& h : hs.hazards)
      for (double t : times)
        csv::write_row(f, t / a.time_scale, h.trans_id, model.transition(h.trans_id).label, to_string(h.kind),
                       h.at(t), h.variance_at(t));
  }
  EstimationPlan plan;
  plan.s = s;
  plan.t_max = grid.t_max;
  plan.grid = grid;
  const auto targets = make_targets(model, plan);
  std::vector<double> prob_times;
  for (double t : times)
    if (t > s) prob_times.push_back(t);
  {
    auto f = open_out(out / "probabilities.csv");
    csv::write_row(f, "time", "from_state", "to_state", "probability", "variance", "flag");
    for (const auto& tg : targets) {
      if (tg.kind != Target::Kind::probability) continue;
      for (double t : prob_times) {
        const double p = pt.prob(t, tg.from, tg.to);
        csv::write_row(f, t / a.time_scale, model.ext_states()[tg.from].label, model.ext_states()[tg.to].label, p,
                       pt.variance(t, tg.from, tg.to), p < 0.0 ? "negative" : "ok");
      }
    }
  }

  bool negative = false;
  for (const auto& h : hs.hazards)
    if (h.negative) {
      negative = true;
      std::cerr << "warning: excess cumulative hazard '" << model.transition(h.trans_id).label
                << "' is negative at some times (population mortality exceeds observed)\n";
    }
  if (pt.any_negative()) {
    negative = true;
    std::cerr << "warning: some transition probability estimates are negative\n";
  }

  std::uint64_t seed = 0;
  std::optional<BootstrapResult> boot;
  if (a.boot >= 2) {
    seed = a.seed ? *a.seed : fresh_seed();
    if (!a.seed) std::cerr << "seed: " << seed << "\n";
    // Intervals for hazards use the full grid times; probabilities need t > s.
    boot = bootstrap(estimator, plan, targets, times, a.boot, seed, a.threads);
    if (boot->n_incomplete > 0)
      std::cerr << "warning: " << boot->n_incomplete
                << " bootstrap replicates had an empty source state for some target\n";
  }
  const auto vals = evaluate_targets(hs, pt, model, targets, times);
  {
    auto f = open_out(out / "ci.csv");
    csv::write_row(f, "time", "target", "method", "level", "lower", "upper", "flag");
    std::set<std::string> warnings;
    for (auto m : methods) {
      for (std::size_t i = 0; i < targets.size(); ++i) {
        ConfInterval ci;
        switch (m) {
          case CiMethod::plain_greenwood:
            ci = ci_plain_greenwood(vals.value[i], vals.greenwood_var[i], a.level);
            break;
          case CiMethod::plain_boot:
            ci = ci_plain_boot(vals.value[i], boot->variance[i], a.level);
            break;
          case CiMethod::log_boot:
            ci = ci_log_boot(vals.value[i], boot->variance[i], a.level);
            break;
          case CiMethod::quantile_boot:
            ci = ci_quantile_boot(boot->replicates[i], a.level);
            break;
        }
        if (!ci.warning.empty()) warnings.insert(std::string(to_string(m)) + ": " + ci.warning);
        for (std::size_t k = 0; k < times.size(); ++k) {
          if (targets[i].kind == Target::Kind::probability && times[k] <= s) continue;
          csv::write_row(f, times[k] / a.time_scale, targets[i].label, to_string(m), a.level, ci.lower[k],
                         ci.upper[k], ci.flags[k]);
        }
      }
    }
    const bool split = !model.split_ids().empty();
    if (split && std::find(methods.begin(), methods.end(), CiMethod::plain_greenwood) != methods.end())
      std::cerr << "warning: plain.G treats population hazards as fixed (zero variance); intervals for "
                   "population-related targets are anti-conservative, prefer log.boot\n";
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }

  nlohmann::json m;
  m["tool"] = "msrs";
  m["version"] = kVersion;
  m["subcommand"] = "estimate";
  m["argv"] = argv;
  m["inputs"] = {{"data", {{"path", a.data}, {"fnv1a", file_digest(a.data)}}},
                 {"ratetable", {{"path", rt_path}, {"fnv1a", file_digest(rt_path)}}},
                 {"model", {{"path", a.model}, {"fnv1a", file_digest(a.model)}}}};
  m["options"] = {{"s", a.s},
                  {"t_max", std::isinf(a.t_max) ? nlohmann::json(nullptr) : nlohmann::json(a.t_max)},
                  {"dense", a.dense},
                  {"times", a.times},
                  {"time_scale", a.time_scale},
                  {"age_scale", a.age_scale},
                  {"boot", a.boot},
                  {"ci", a.ci},
                  {"level", a.level},
                  {"threads", a.threads}};
  m["seed"] = a.boot >= 2 ? nlohmann::json(seed) : nlohmann::json(nullptr);
  m["n_subjects"] = data.n_subjects();
  m["n_records"] = data.records().size();
  m["flags"] = {{"negative_estimates", negative},
                {"bootstrap_incomplete", boot ? boot->n_incomplete : 0}};
  m["timings_s"] = {{"total", elapsed(t0)}};
  open_out(out / "manifest.json") << m.dump(2) << "\n";
  return Exit::ok;
}

sim::ScenarioConfig load_scenario(const std::string& spec) {
  if (fs::exists(spec)) {
    std::ifstream in(spec);
    return sim::ScenarioConfig::from_json(nlohmann::json::parse(in));
  }
  return sim::ScenarioConfig::preset(spec);
}

RateTable sim_table(const SimulateArgs& a, std::string& used) {
  const char* dir = std::getenv(kRateTableEnv);
  if (a.ratetable.empty() && !dir) {
    used = "builtin:demo";
    return demo_ratetable();
  }
  used = resolve_ratetable(a.ratetable);
  require_file(used, "rate table");
  return load_ratetable(used);
}

sim::TruthOptions truth_options(const SimulateArgs& a) {
  sim::TruthOptions t;
  if (a.truth_method == "mc") {
    t.method = sim::TruthOptions::Method::monte_carlo;
  } else if (a.truth_method == "quadrature") {
    t.method = sim::TruthOptions::Method::quadrature;
  } else {
    throw std::invalid_argument("--truth-method must be mc or quadrature");
  }
  t.mc_draws = a.mc_draws;
  t.rel_tol = a.truth_tol;
  return t;
}

void write_truth(std::ostream& f, const sim::TrueValues& truth, const std::vector<Target>& targets,
                 const std::vector<double>& years) {
  const auto by_target = sim::truth_for_targets(truth, targets);
  csv::write_row(f, "target", "time_years", "truth");
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t k = 0; k < years.size(); ++k) csv::write_row(f, targets[i].label, years[k], by_target[i][k]);
}

nlohmann::json sim_manifest(const SimulateArgs& a, const sim::ScenarioConfig& c, const std::string& table,
                            const std::vector<std::string>& argv, const char* sub) {
  nlohmann::json m;
  m["tool"] = "msrs";
  m["version"] = kVersion;
  m["subcommand"] = sub;
  m["argv"] = argv;
  m["scenario"] = c.to_json();
  m["ratetable"] = table;
  if (table.rfind("builtin:", 0) != 0) m["ratetable_fnv1a"] = file_digest(table);
  m["truth"] = {{"method", a.truth_method}, {"mc_draws", a.mc_draws}, {"rel_tol", a.truth_tol}};
  return m;
}

int run_truth(const SimulateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = load_scenario(a.scenario);
  std::string used;
  const auto table = sim_table(a, used);
  const auto truth = sim::true_values(c, table, truth_options(a));
  fs::create_directories(a.out);
  const fs::path out(a.out);
  {
    auto f = open_out(out / "truth.csv");
    write_truth(f, truth, sim::simulation_targets(sim::illness_death_model()), c.eval_years);
  }
  auto m = sim_manifest(a, c, used, argv, "truth");
  m["truth_nodes"] = truth.nodes;
  m["timings_s"] = {{"total", elapsed(t0)}};
  open_out(out / "manifest.json") << m.dump(2) << "\n";
  return Exit::ok;
}

int run_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = load_scenario(a.scenario);
  if (a.n) c.n = *a.n;
  if (a.n_sim) c.n_sim = *a.n_sim;
  if (a.boot) c.bootstrap = *a.boot;
  c.validate();
  std::string used;
  const auto table = sim_table(a, used);
  sim::SimulationOptions o;
  o.n_sim = c.n_sim;
  o.bootstrap = c.bootstrap;
  o.seed = a.seed ? *a.seed : fresh_seed();
  if (!a.seed) std::cerr << "seed: " << o.seed << "\n";
  o.threads = a.threads;
  o.level = a.level;
  o.truth = truth_options(a);
  const auto rep = sim::run_simulation(c, table, o);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  {
    auto f = open_out(out / "report.csv");
    csv::write_row(f, "scenario", "n", "target", "kind", "time_years", "truth", "mean_estimate", "abs_bias",
                   "rel_bias", "emp_se", "mean_se_greenwood", "n_inf_greenwood", "mean_se_boot", "cov_plain.G",
                   "cov_plain.boot", "cov_log.boot", "cov_q.boot", "n_sim");
    for (const auto& r : rep.rows)
      csv::write_row(f, c.name, c.n, r.target, r.kind == Target::Kind::hazard ? "hazard" : "probability",
                     r.time_years, r.truth, r.mean_estimate, r.abs_bias, r.rel_bias, r.emp_se, r.mean_se_greenwood,
                     r.n_infinite_greenwood, r.mean_se_boot, r.coverage[0], r.coverage[1], r.coverage[2],
                     r.coverage[3], r.n_sim);
  }
  {
    // Long format for plotting: one measure per row.
    auto f = open_out(out / "plot.csv");
    csv::write_row(f, "scenario", "n", "target", "time_years", "measure", "method", "value");
    for (const auto& r : rep.rows) {
      csv::write_row(f, c.name, c.n, r.target, r.time_years, "rel_bias", "", r.rel_bias);
      csv::write_row(f, c.name, c.n, r.target, r.time_years, "se", "empirical", r.emp_se);
      csv::write_row(f, c.name, c.n, r.target, r.time_years, "se", "greenwood", r.mean_se_greenwood);
      csv::write_row(f, c.name, c.n, r.target, r.time_years, "se", "bootstrap", r.mean_se_boot);
      for (int k = 0; k < 4; ++k)
        csv::write_row(f, c.name, c.n, r.target, r.time_years, "coverage", to_string(kAllCiMethods[k]),
                       r.coverage[k]);
    }
  }
  {
    auto f = open_out(out / "truth.csv");
    write_truth(f, rep.truth, rep.targets, rep.times_years);
  }
  auto m = sim_manifest(a, c, used, argv, "simulate");
  m["seed"] = o.seed;
  m["threads"] = a.threads;
  m["level"] = a.level;
  m["censoring"] = {{"rate_per_year", rep.censoring.rate}, {"fraction", rep.censoring.fraction}};
  m["timings_s"] = {{"total", elapsed(t0)}};
  open_out(out / "manifest.json") << m.dump(2) << "\n";
  return Exit::ok;
}

int run_demo(const std::string& out_dir, std::uint64_t seed, int n) {
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  const auto table = demo_ratetable();
  {
    auto f = open_out(out / "demo_ratetable.csv");
    write_ratetable(f, table);
  }
  const auto model = sim::illness_death_model();
  open_out(out / "illness_death.json") << model.to_json().dump(2) << "\n";
  auto c = sim::ScenarioConfig::preset("exp.small");
  const auto cal = sim::calibrate_censoring(c, table, seed);
  Rng rng(seed, 0x64656d6f);
  const auto data = sim::generate_dataset(c, table, cal.rate, n, rng);
  auto f = open_out(out / "demo_data.csv");
  write_dataset(f, data);
  return Exit::ok;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Non-parametric multi-state models with relative survival"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate hazards, transition probabilities and intervals");
  e->add_option("--data", est.data, "Long-format data CSV")->required();
  e->add_option("--ratetable", est.ratetable,
                std::string("Rate-table CSV (default: $") + kRateTableEnv + "/ratetable.csv)");
  e->add_option("--model", est.model, "Model JSON")->required();
  e->add_option("--s", est.s, "Start time of P(s, t)");
  e->add_option("--t-max", est.t_max, "Last reporting time");
  e->add_flag("--dense", est.dense, "Also report at every integer day");
  e->add_option("--times", est.times, "Reporting times (default: every grid time)")->delimiter(',');
  e->add_option("--time-scale", est.time_scale, "Days per unit of Tstart/Tstop");
  e->add_option("--age-scale", est.age_scale, "Days per unit of the age column");
  e->add_option("--boot", est.boot, "Bootstrap replicates B (0 = none)");
  e->add_option("--seed", est.seed, "Bootstrap seed (generated and printed when omitted)");
  e->add_option("--ci", est.ci, "plain.G, plain.boot, log.boot, q.boot or all")->delimiter(',');
  e->add_option("--level", est.level, "Confidence level");
  e->add_option("--threads", est.threads, "Worker threads");
  e->add_option("--out", est.out, "Output directory");

  SimulateArgs sa;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", sa.scenario, "Scenario JSON file or preset name");
    cmd->add_option("--ratetable", sa.ratetable, "Rate-table CSV (default: built-in demo table)");
    cmd->add_option("--truth-method", sa.truth_method, "mc or quadrature");
    cmd->add_option("--mc-draws", sa.mc_draws, "Monte Carlo draws over D");
    cmd->add_option("--truth-tol", sa.truth_tol, "Relative stopping rule for quadrature");
    cmd->add_option("--out", sa.out, "Output directory");
  };
  auto* simc = app.add_subcommand("simulate", "Run a simulation scenario and report bias, SE and coverage");
  add_common(simc);
  simc->add_option("--n", sa.n, "Sample size");
  simc->add_option("--n-sim", sa.n_sim, "Replications");
  simc->add_option("--boot", sa.boot, "Bootstrap replicates per replication");
  simc->add_option("--seed", sa.seed, "Seed (generated and printed when omitted)");
  simc->add_option("--threads", sa.threads, "Worker threads");
  simc->add_option("--level", sa.level, "Confidence level");
  auto* tr = app.add_subcommand("truth", "Compute true values of a scenario");
  add_common(tr);

  std::string demo_out = "data";
  std::uint64_t demo_seed = 20240917;
  int demo_n = 500;
  auto* demo = app.add_subcommand("demo", "Write the demo rate table, model and synthetic dataset");
  demo->add_option("--out", demo_out, "Output directory");
  demo->add_option("--seed", demo_seed, "Seed");
  demo->add_option("--n", demo_n, "Subjects");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*e) return run_estimate(est, args);
    if (*simc) return run_simulate(sa, args);
    if (*tr) return run_truth(sa, args);
    if (*demo) return run_demo(demo_out, demo_seed, demo_n);
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::validation;
  } catch (const ModelError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::validation;
  } catch (const RateTableError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::validation;
  } catch (const ProbTransError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::numerical;
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::validation;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::usage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return Exit::numerical;
  }
  return Exit::usage;
}
