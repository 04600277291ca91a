#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>

#include "msrs/data.hpp"
#include "msrs/hazards.hpp"
#include "msrs/inference.hpp"
#include "msrs/model.hpp"
#include "msrs/probtrans.hpp"
#include "msrs/ratetable.hpp"
#include "msrs/simulate.hpp"

namespace py = pybind11;
using namespace msrs;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

// rows x cols array from nested vectors of equal length.
py::array_t<double> to_array(const std::vector<std::vector<double>>& v) {
  const std::size_t cols = v.empty() ? 0 : v[0].size();
  py::array_t<double> out({v.size(), cols});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) a(i, j) = v[i][j];
  return out;
}

const char* kind_name(TransitionKind k) {
  switch (k) {
    case TransitionKind::excess: return "excess";
    case TransitionKind::population: return "population";
    default: return "observed";
  }
}

py::dict hazard_dict(const CumHazEstimate& h) {
  py::dict d;
  d["trans_id"] = h.trans_id;
  d["kind"] = kind_name(h.kind);
  d["time"] = to_array(h.time);
  d["value"] = to_array(h.value);
  d["variance"] = to_array(h.variance);
  d["negative"] = h.negative;
  d["infinite_variance"] = h.infinite_variance;
  return d;
}

// Hazards, transition probabilities with Greenwood variances and, when
// boot >= 2, bootstrap variances and all four intervals at `times`.
py::dict estimate(const EventDataset& data, const RateTable& table, std::vector<double> times, double s,
                  double t_max, int boot, std::uint64_t seed, double level, int threads, bool dense) {
  if (boot == 1 || boot < 0) throw std::invalid_argument("boot must be 0 or >= 2");
  const auto& model = data.model();
  GridOptions grid;
  grid.extra_times = times;
  grid.dense_grid = dense;
  grid.t_max = t_max;
  const HazardEstimator estimator(data, table, grid);
  const auto hs = estimator.estimate();
  const auto pt = aalen_johansen(hs, model, s, t_max, true);
  if (times.empty())
    for (double t : hs.grid)
      if (t > s && t <= t_max) times.push_back(t);

  py::dict out;
  out["times"] = to_array(times);
  py::dict hazards;
  for (const auto& h : hs.hazards) hazards[py::str(model.transition(h.trans_id).label)] = hazard_dict(h);
  out["hazards"] = hazards;

  const auto k = static_cast<std::size_t>(model.n_ext_states());
  py::array_t<double> prob({times.size(), k, k}), var({times.size(), k, k});
  auto P = prob.mutable_unchecked<3>();
  auto V = var.mutable_unchecked<3>();
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        P(i, a, b) = pt.prob(times[i], static_cast<int>(a), static_cast<int>(b));
        V(i, a, b) = pt.variance(times[i], static_cast<int>(a), static_cast<int>(b));
      }
  out["prob"] = prob;
  out["prob_variance"] = var;
  std::vector<std::string> states;
  for (const auto& st : model.ext_states()) states.push_back(st.label);
  out["states"] = states;

  EstimationPlan plan;
  plan.s = s;
  plan.t_max = t_max;
  plan.grid = grid;
  const auto targets = make_targets(model, plan);
  const auto vals = evaluate_targets(hs, pt, model, targets, times);
  std::vector<std::string> labels;
  for (const auto& t : targets) labels.push_back(t.label);
  out["targets"] = labels;
  out["estimate"] = to_array(vals.value);
  out["greenwood_variance"] = to_array(vals.greenwood_var);

  py::dict cis;
  auto put = [&](CiMethod m, const std::vector<ConfInterval>& rows) {
    std::vector<std::vector<double>> lo, hi;
    for (const auto& c : rows) {
      lo.push_back(c.lower);
      hi.push_back(c.upper);
    }
    cis[to_string(m)] = py::make_tuple(to_array(lo), to_array(hi));
  };
  std::vector<ConfInterval> g;
  for (std::size_t i = 0; i < targets.size(); ++i)
    g.push_back(ci_plain_greenwood(vals.value[i], vals.greenwood_var[i], level));
  put(CiMethod::plain_greenwood, g);
  if (boot >= 2) {
    py::gil_scoped_release release;
    const auto b = bootstrap(estimator, plan, targets, times, boot, seed, threads);
    py::gil_scoped_acquire acquire;
    out["boot_variance"] = to_array(b.variance);
    out["boot_incomplete"] = b.n_incomplete;
    std::vector<ConfInterval> pb, lb, qb;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      pb.push_back(ci_plain_boot(vals.value[i], b.variance[i], level));
      lb.push_back(ci_log_boot(vals.value[i], b.variance[i], level));
      qb.push_back(ci_quantile_boot(b.replicates[i], level));
    }
    put(CiMethod::plain_boot, pb);
    put(CiMethod::log_boot, lb);
    put(CiMethod::quantile_boot, qb);
  }
  out["ci"] = cis;
  out["any_negative"] = pt.any_negative();
  return out;
}

py::dict truth_dict(const sim::TrueValues& tv) {
  py::dict d;
  d["times"] = to_array(tv.times);
  d["hazard"] = to_array(tv.hazard);
  d["prob"] = to_array(tv.prob);
  d["level"] = tv.level;
  d["nodes"] = tv.nodes;
  return d;
}

sim::TruthOptions truth_options(const std::string& method, int mc_draws, int base_nodes, double rel_tol) {
  sim::TruthOptions o;
  if (method == "quadrature")
    o.method = sim::TruthOptions::Method::quadrature;
  else if (method != "mc")
    throw std::invalid_argument("truth method must be 'mc' or 'quadrature'");
  o.mc_draws = mc_draws;
  o.base_nodes = base_nodes;
  o.rel_tol = rel_tol;
  return o;
}

}  // namespace

PYBIND11_MODULE(_msrs, m) {
  m.doc() = "Non-parametric multi-state models with relative survival";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<RateTableError>(m, "RateTableError", PyExc_ValueError);
  py::register_exception<ProbTransError>(m, "ProbTransError", PyExc_RuntimeError);

  m.attr("DAYS_PER_YEAR") = kDaysPerYear;
  m.def("parse_date", &parse_date, py::arg("iso"));
  m.def("format_date", &format_date, py::arg("day"));

  py::class_<TransitionModel>(m, "TransitionModel")
      .def_static(
          "build",
          [](const std::vector<std::pair<std::string, bool>>& states, const std::vector<std::pair<int, int>>& trans,
             std::vector<int> split) {
            std::vector<State> st;
            for (const auto& [label, absorbing] : states) st.push_back({label, absorbing});
            std::vector<TransitionSpec> tr;
            for (const auto& [from, to] : trans) tr.push_back({from, to});
            return TransitionModel::build(st, tr, std::move(split));
          },
          py::arg("states"), py::arg("transitions"), py::arg("split") = std::vector<int>{})
      .def_static(
          "from_json", [](const std::string& s) { return TransitionModel::from_json(nlohmann::json::parse(s)); },
          py::arg("text"))
      .def("to_json", [](const TransitionModel& t) { return t.to_json().dump(); })
      .def_property_readonly("states",
                             [](const TransitionModel& t) {
                               std::vector<std::string> out;
                               for (const auto& s : t.states()) out.push_back(s.label);
                               return out;
                             })
      .def_property_readonly("ext_states",
                             [](const TransitionModel& t) {
                               std::vector<std::string> out;
                               for (const auto& s : t.ext_states()) out.push_back(s.label);
                               return out;
                             })
      .def_property_readonly("transitions",
                             [](const TransitionModel& t) {
                               py::list out;
                               for (const auto& x : t.transitions()) {
                                 py::dict d;
                                 d["id"] = x.id;
                                 d["label"] = x.label;
                                 d["kind"] = kind_name(x.kind);
                                 d["parent"] = x.parent;
                                 out.append(d);
                               }
                               return out;
                             })
      .def("split_of", &TransitionModel::split_of, py::arg("trans_id"))
      .def("unsplit", &TransitionModel::unsplit);

  py::class_<RateTable>(m, "RateTable")
      .def_static("load", &load_ratetable, py::arg("path"))
      .def_static("demo", &demo_ratetable)
      .def_static("constant", &RateTable::constant, py::arg("daily_hazard"), py::arg("min_age") = 0,
                  py::arg("max_age") = 110, py::arg("min_year") = 1950, py::arg("max_year") = 2050)
      .def_static("zero", &RateTable::zero)
      .def(
          "rate", [](const RateTable& t, int age, int year, const std::string& sex) { return t.rate(age, year, parse_sex(sex)); },
          py::arg("age"), py::arg("year"), py::arg("sex"));

  py::class_<EventDataset>(m, "EventDataset")
      .def_static(
          "load",
          [](const std::string& path, const TransitionModel& model, double time_scale, double age_scale) {
            LoadOptions o;
            o.time_scale = time_scale;
            o.age_scale = age_scale;
            return load_dataset(path, model, o);
          },
          py::arg("path"), py::arg("model"), py::arg("time_scale") = 1.0, py::arg("age_scale") = 1.0)
      .def_property_readonly("n_subjects", &EventDataset::n_subjects)
      .def_property_readonly("model", &EventDataset::model)
      .def("with_model", &EventDataset::with_model, py::arg("model"));

  m.def(
      "nelson_aalen",
      [](const EventDataset& d, int trans_id) { return hazard_dict(nelson_aalen(d, trans_id)); },
      py::arg("data"), py::arg("trans_id"));
  m.def("estimate", &estimate, py::arg("data"), py::arg("ratetable"), py::arg("times") = std::vector<double>{},
        py::arg("s") = 0.0, py::arg("t_max") = kInf, py::arg("boot") = 0, py::arg("seed") = 1,
        py::arg("level") = 0.95, py::arg("threads") = 1, py::arg("dense") = false);

  py::module_ sm = m.def_submodule("sim", "Simulation harness");
  sm.attr("SCENARIOS") = std::vector<std::string>(std::begin(sim::kScenarioNames), std::end(sim::kScenarioNames));
  py::class_<sim::ScenarioConfig>(sm, "ScenarioConfig")
      .def_static("preset", &sim::ScenarioConfig::preset, py::arg("name"))
      .def_static(
          "from_json", [](const std::string& s) { return sim::ScenarioConfig::from_json(nlohmann::json::parse(s)); },
          py::arg("text"))
      .def("to_json", [](const sim::ScenarioConfig& c) { return c.to_json().dump(); })
      .def_readwrite("n", &sim::ScenarioConfig::n)
      .def_readwrite("n_sim", &sim::ScenarioConfig::n_sim)
      .def_readwrite("bootstrap", &sim::ScenarioConfig::bootstrap)
      .def_readwrite("censoring_rate", &sim::ScenarioConfig::censoring_rate)
      .def_readwrite("eval_years", &sim::ScenarioConfig::eval_years)
      .def_readonly("name", &sim::ScenarioConfig::name);

  sm.def(
      "calibrate_censoring",
      [](const sim::ScenarioConfig& c, const RateTable& t, std::uint64_t seed, int sample_size) {
        const auto r = sim::calibrate_censoring(c, t, seed, sample_size);
        return py::make_tuple(r.rate, r.fraction);
      },
      py::arg("config"), py::arg("ratetable"), py::arg("seed") = 1, py::arg("sample_size") = 20000);
  sm.def(
      "generate_dataset",
      [](const sim::ScenarioConfig& c, const RateTable& t, double censoring_rate, int n, std::uint64_t seed) {
        Rng rng(seed);
        return sim::generate_dataset(c, t, censoring_rate, n, rng);
      },
      py::arg("config"), py::arg("ratetable"), py::arg("censoring_rate"), py::arg("n"), py::arg("seed") = 1);
  sm.def(
      "true_values",
      [](const sim::ScenarioConfig& c, const RateTable& t, const std::string& method, int mc_draws, int base_nodes,
         double rel_tol) {
        sim::TrueValues tv;
        {
          py::gil_scoped_release release;
          tv = sim::true_values(c, t, truth_options(method, mc_draws, base_nodes, rel_tol));
        }
        return truth_dict(tv);
      },
      py::arg("config"), py::arg("ratetable"), py::arg("method") = "mc", py::arg("mc_draws") = 1000000,
      py::arg("base_nodes") = 32, py::arg("rel_tol") = 1e-6);
  sm.def(
      "run_simulation",
      [](const sim::ScenarioConfig& c, const RateTable& t, int n_sim, int bootstrap, std::uint64_t seed,
         int threads, double level, const std::string& method, int mc_draws, int base_nodes, double rel_tol) {
        sim::SimulationOptions o;
        o.n_sim = n_sim;
        o.bootstrap = bootstrap;
        o.seed = seed;
        o.threads = threads;
        o.level = level;
        o.truth = truth_options(method, mc_draws, base_nodes, rel_tol);
        sim::SimulationReport rep;
        {
          py::gil_scoped_release release;
          rep = sim::run_simulation(c, t, o);
        }
        py::list rows;
        for (const auto& r : rep.rows) {
          py::dict d;
          d["target"] = r.target;
          d["kind"] = r.kind == Target::Kind::hazard ? "hazard" : "probability";
          d["time_years"] = r.time_years;
          d["truth"] = r.truth;
          d["mean_estimate"] = r.mean_estimate;
          d["abs_bias"] = r.abs_bias;
          d["rel_bias"] = r.rel_bias;
          d["emp_se"] = r.emp_se;
          d["mean_se_greenwood"] = r.mean_se_greenwood;
          d["n_infinite_greenwood"] = r.n_infinite_greenwood;
          d["mean_se_boot"] = r.mean_se_boot;
          for (CiMethod cm : kAllCiMethods) d[py::str(std::string("coverage_") + to_string(cm))] = r.coverage[static_cast<int>(cm)];
          d["n_sim"] = r.n_sim;
          rows.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["censoring_rate"] = rep.censoring.rate;
        out["censored_fraction"] = rep.censoring.fraction;
        out["truth"] = truth_dict(rep.truth);
        return out;
      },
      py::arg("config"), py::arg("ratetable"), py::arg("n_sim") = 200, py::arg("bootstrap") = 100,
      py::arg("seed") = 1, py::arg("threads") = 1, py::arg("level") = 0.95, py::arg("truth_method") = "mc",
      py::arg("mc_draws") = 1000000, py::arg("base_nodes") = 32, py::arg("rel_tol") = 1e-6);
}
