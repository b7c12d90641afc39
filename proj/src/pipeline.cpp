#include "evflex/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

namespace evflex {

using nlohmann::json;
namespace fs = std::filesystem;

json PipelineError::record() const {
  return {{"status", "error"}, {"stage", stage_}, {"message", what()}};
}

std::string mode_label(bool uncertain, PfMode pf) {
  return std::string(uncertain ? "WU" : "WOU") + (pf == PfMode::NonUnity ? "WQ" : "WOQ");
}

void Scenario::validate() const {
  auto fail = [](const std::string& msg) { throw PipelineError("config", msg); };
  if (!deterministic && !uncertain) fail("no DSO mode selected");
  if (pf_modes.empty()) fail("no power-factor mode selected");
  if (!std::is_sorted(eps_sweep.begin(), eps_sweep.end())) fail("eps_sweep must be ascending");
  for (double e : eps_sweep) {
    if (!(e >= 0.0)) fail("eps_sweep values must be non-negative");
  }
  if (!(load_std_fraction >= 0.0)) fail("load_std_fraction must be non-negative");
  if (fleet.default_count < 0) fail("negative EV count");
  for (const auto& [bus, n] : fleet.counts) {
    if (n < 0) fail("negative EV count for bus " + std::to_string(bus));
  }
  try {
    uncertainty.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Scenario scenario_from_json(const json& in, const fs::path& base_dir) {
  const json& j = in.contains("scenario") ? in.at("scenario") : in;
  Scenario s;
  try {
    if (j.contains("case")) s.case_path = resolve(j.at("case").get<std::string>(), base_dir);
    if (j.contains("modes")) {
      s.deterministic = s.uncertain = false;
      for (const auto& m : j.at("modes")) {
        const auto name = m.get<std::string>();
        if (name == "deterministic") {
          s.deterministic = true;
        } else if (name == "uncertain") {
          s.uncertain = true;
        } else {
          throw PipelineError("config", "unknown mode '" + name + "'");
        }
      }
    }
    if (j.contains("pf_modes")) {
      s.pf_modes.clear();
      for (const auto& m : j.at("pf_modes")) s.pf_modes.push_back(parse_pf_mode(m.get<std::string>()));
    }
    if (j.contains("uncertainty")) {
      const json& u = j.at("uncertainty");
      read_opt(u, "delta", s.uncertainty.delta);
      read_opt(u, "epsilon", s.uncertainty.epsilon);
      read_opt(u, "lambda", s.uncertainty.lambda);
    }
    read_opt(j, "eps_sweep", s.eps_sweep);
    if (j.contains("sweep_pf")) s.sweep_pf = parse_pf_mode(j.at("sweep_pf").get<std::string>());
    read_opt(j, "load_std_fraction", s.load_std_fraction);
    if (j.contains("fleet")) {
      const json& f = j.at("fleet");
      read_opt(f, "seed", s.fleet.seed);
      read_opt(f, "default_count", s.fleet.default_count);
      if (f.contains("counts")) {
        for (const auto& [bus, n] : f.at("counts").items()) s.fleet.counts[std::stoi(bus)] = n.get<int>();
      }
      if (f.contains("path") && !f.at("path").is_null()) {
        s.fleet.path = resolve(f.at("path").get<std::string>(), base_dir);
      }
    }
    if (j.contains("out")) s.out_dir = j.at("out").get<std::string>();
    read_opt(j, "parallel", s.parallel);
    if (j.contains("solver")) {
      const json& sv = j.at("solver");
      if (sv.contains("nlp")) {
        const json& n = sv.at("nlp");
        read_opt(n, "max_iter", s.nlp.max_iter);
        read_opt(n, "feas_tol", s.nlp.feas_tol);
        read_opt(n, "opt_tol", s.nlp.opt_tol);
      }
      if (sv.contains("conic")) {
        const json& c = sv.at("conic");
        read_opt(c, "max_iter", s.conic.max_iter);
        read_opt(c, "feas_tol", s.conic.feas_tol);
        read_opt(c, "gap_tol", s.conic.gap_tol);
      }
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("config", e.what());
  }
  s.nlp.seed = s.fleet.seed;
  s.validate();
  return s;
}

Scenario load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("config", "cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw PipelineError("config", path.string() + ": " + e.what());
  }
  return scenario_from_json(j, path.parent_path());
}

json scenario_to_json(const Scenario& s) {
  json modes = json::array();
  if (s.deterministic) modes.push_back("deterministic");
  if (s.uncertain) modes.push_back("uncertain");
  json pf = json::array();
  for (PfMode m : s.pf_modes) pf.push_back(to_string(m));
  json counts = json::object();
  for (const auto& [bus, n] : s.fleet.counts) counts[std::to_string(bus)] = n;
  json fleet = {{"seed", s.fleet.seed}, {"default_count", s.fleet.default_count}, {"counts", counts}};
  fleet["path"] = s.fleet.path ? json(s.fleet.path->string()) : json(nullptr);
  return {
      {"case", s.case_path.string()},
      {"modes", modes},
      {"pf_modes", pf},
      {"uncertainty",
       {{"delta", s.uncertainty.delta}, {"epsilon", s.uncertainty.epsilon}, {"lambda", s.uncertainty.lambda}}},
      {"eps_sweep", s.eps_sweep},
      {"sweep_pf", to_string(s.sweep_pf)},
      {"load_std_fraction", s.load_std_fraction},
      {"fleet", fleet},
      {"out", s.out_dir.string()},
      {"parallel", s.parallel},
      {"solver",
       {{"nlp", {{"max_iter", s.nlp.max_iter}, {"feas_tol", s.nlp.feas_tol}, {"opt_tol", s.nlp.opt_tol}}},
        {"conic",
         {{"max_iter", s.conic.max_iter}, {"feas_tol", s.conic.feas_tol}, {"gap_tol", s.conic.gap_tol}}}}},
  };
}

std::map<int, std::vector<EvSpec>> build_fleets(const NetworkCase& c, const FleetConfig& cfg,
                                                const FleetParams& params) {
  std::map<int, std::vector<EvSpec>> fleets;
  for (int bus : c.aggregator_buses()) fleets[bus];
  if (cfg.path) {
    for (const EvSpec& ev : read_fleet_csv(*cfg.path)) {
      auto it = fleets.find(ev.bus);
      if (it == fleets.end()) {
        throw PipelineError("fleet", "EV " + std::to_string(ev.id) + " sits at bus " +
                                         std::to_string(ev.bus) + " which has no aggregator");
      }
      if (!is_valid(ev, c.periods)) {
        throw PipelineError("fleet", "EV " + std::to_string(ev.id) + " at bus " +
                                         std::to_string(ev.bus) + " violates the EV invariants");
      }
      it->second.push_back(ev);
    }
    return fleets;
  }
  for (const auto& [bus, n] : cfg.counts) {
    if (!fleets.count(bus)) {
      throw PipelineError("fleet", "EV count given for bus " + std::to_string(bus) +
                                       " which has no aggregator");
    }
  }
  FleetParams p = params;
  p.periods = c.periods;
  p.delta_h = c.delta_h;
  for (auto& [bus, fleet] : fleets) {
    auto it = cfg.counts.find(bus);
    const int n = it == cfg.counts.end() ? cfg.default_count : it->second;
    try {
      fleet = sample_fleet(bus, n, bus_seed(cfg.seed, bus), p);
    } catch (const std::exception& e) {
      throw PipelineError("fleet", e.what());
    }
  }
  return fleets;
}

namespace {

json report_json(const std::string& stage, const solver::SolveReport& r) {
  return {{"stage", stage},
          {"status", solver::to_string(r.status)},
          {"objective", r.objective},
          {"iterations", r.iterations},
          {"max_violation", r.max_violation},
          {"kkt_residual", r.kkt_residual},
          {"duality_gap", r.duality_gap},
          {"wall_time_s", r.wall_time_s},
          {"message", r.message},
          {"infeasible_families", r.infeasible_families}};
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

template <class F>
auto launch(bool parallel, F&& f) {
  return std::async(parallel ? std::launch::async : std::launch::deferred, std::forward<F>(f));
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

struct ModeKey {
  bool uncertain;
  PfMode pf;
};

}  // namespace

RunResult run_scenario(const Scenario& s) {
  s.validate();
  RunResult res;
  json& manifest = res.manifest;
  {
    // Inputs echoed with absolute paths.
    Scenario echo = s;
    echo.case_path = fs::absolute(s.case_path).lexically_normal();
    if (s.fleet.path) echo.fleet.path = fs::absolute(*s.fleet.path).lexically_normal();
    manifest["scenario"] = scenario_to_json(echo);
  }
  manifest["stages"] = json::array();
  std::vector<std::string> outputs;
  try {
    fs::create_directories(s.out_dir);
  } catch (const std::exception& e) {
    throw PipelineError("output", e.what());
  }

  auto write_manifest = [&] {
    manifest["outputs"] = outputs;
    write_json(manifest, s.out_dir / "manifest.json");
  };

  try {
    NetworkCase c;
    try {
      c = parse_case(s.case_path);
    } catch (const std::exception& e) {
      throw PipelineError("case", e.what());
    }
    manifest["case"] = {{"path", s.case_path.string()},
                        {"buses", c.bus_count()},
                        {"lines", c.lines.size()},
                        {"periods", c.periods},
                        {"aggregator_buses", c.aggregator_buses()}};

    const auto fleets = build_fleets(c, s.fleet);
    json seeds = {{"fleet_base", s.fleet.seed}, {"fleet_per_bus", json::object()}};
    std::vector<EvSpec> all;
    for (const auto& [bus, fleet] : fleets) {
      if (!s.fleet.path) seeds["fleet_per_bus"][std::to_string(bus)] = bus_seed(s.fleet.seed, bus);
      all.insert(all.end(), fleet.begin(), fleet.end());
    }
    seeds["fleet_source"] = s.fleet.path ? s.fleet.path->string() : "sampled";
    manifest["seeds"] = seeds;
    write_fleet_csv(all, s.out_dir / "fleet.csv");
    outputs.push_back("fleet.csv");

    DsoOptions dso_opt;
    dso_opt.load_std_fraction = s.load_std_fraction;
    dso_opt.nlp = s.nlp;
    for (const auto& [bus, fleet] : fleets) {
      double kva = 0.0;
      for (const EvSpec& ev : fleet) kva += ev.socket_kva;
      dso_opt.q_cap[bus] = kva / 1000.0 / c.base_mva;
    }

    std::vector<ModeKey> keys;
    for (bool unc : {false, true}) {
      if (unc ? !s.uncertain : !s.deterministic) continue;
      for (PfMode pf : s.pf_modes) keys.push_back({unc, pf});
    }

    // DSO stage: independent solves.
    std::vector<std::future<DsoSolution>> dso_jobs;
    for (const ModeKey& k : keys) {
      const DsoMode mode = k.uncertain ? DsoMode::with_uncertainty(s.uncertainty) : DsoMode::deterministic();
      dso_jobs.push_back(launch(s.parallel, [&c, mode, k, &dso_opt] { return solve_dso(c, mode, k.pf, dso_opt); }));
    }
    for (std::size_t i = 0; i < keys.size(); ++i) {
      ModeRun mr;
      mr.label = mode_label(keys[i].uncertain, keys[i].pf);
      mr.dso = dso_jobs[i].get();
      manifest["stages"].push_back(report_json("dso:" + mr.label, mr.dso.report));
      res.modes.push_back(std::move(mr));
    }
    for (const ModeRun& mr : res.modes) {
      if (!mr.dso.report.optimal()) {
        throw PipelineError("dso:" + mr.label, solver::to_string(mr.dso.report.status) + ": " +
                                                   mr.dso.report.message);
      }
      const fs::path dir = s.out_dir / mr.label;
      fs::create_directories(dir);
      write_flex_csv(mr.dso.schedule, dir / "flex_schedule.csv");
      write_voltages_csv(c, mr.dso, dir / "voltages.csv");
      outputs.push_back(mr.label + "/flex_schedule.csv");
      outputs.push_back(mr.label + "/voltages.csv");
    }

    // Aggregator stage: each envelope is read back from its artifact.
    struct AggJob {
      std::size_t mode;
      int bus;
      std::future<AggregatorResult> result;
    };
    std::vector<AggJob> agg_jobs;
    std::vector<FlexibilitySchedule> envelopes;
    for (const ModeRun& mr : res.modes) {
      envelopes.push_back(read_flex_csv(s.out_dir / mr.label / "flex_schedule.csv", c.base_mva));
    }
    for (std::size_t m = 0; m < res.modes.size(); ++m) {
      for (const auto& [bus, fleet] : fleets) {
        AggregatorInput in = make_aggregator_input(c, envelopes[m], bus, fleet);
        agg_jobs.push_back({m, bus, launch(s.parallel, [in = std::move(in), &s] {
                              return schedule_fleet(in, s.conic);
                            })});
      }
    }
    for (AggJob& job : agg_jobs) {
      AggregatorResult r = job.result.get();
      ModeRun& mr = res.modes[job.mode];
      manifest["stages"].push_back(
          report_json("aggregator:" + mr.label + ":bus" + std::to_string(job.bus), r.report));
      mr.aggregators.push_back(std::move(r));
    }
    for (const ModeRun& mr : res.modes) {
      for (const AggregatorResult& r : mr.aggregators) {
        if (!r.report.optimal()) {
          std::string msg = solver::to_string(r.report.status) + ": " + r.report.message;
          if (!r.report.infeasible_families.empty()) msg += " [" + join(r.report.infeasible_families) + "]";
          throw PipelineError("aggregator:" + mr.label + ":bus" + std::to_string(r.bus), msg);
        }
      }
      write_ev_schedule_csv(mr.aggregators, s.out_dir / mr.label / "ev_schedule.csv");
      outputs.push_back(mr.label + "/ev_schedule.csv");
      ModeCost mc;
      mc.model = mr.label;
      mc.total_flex_mw = mr.dso.schedule.total_p_mw();
      for (const AggregatorResult& r : mr.aggregators) mc.cost_usd += r.cost;
      res.costs.push_back(mc);
    }
    // Table column order.
    std::sort(res.costs.begin(), res.costs.end(), [](const ModeCost& a, const ModeCost& b) {
      auto pos = [](const std::string& l) {
        return std::find(kModeLabels.begin(), kModeLabels.end(), l) - kModeLabels.begin();
      };
      return pos(a.model) < pos(b.model);
    });
    write_costs_csv(res.costs, s.out_dir / "costs.csv");
    outputs.push_back("costs.csv");

    if (!s.eps_sweep.empty()) {
      try {
        res.sweep = epsilon_sweep(c, s.eps_sweep, s.uncertainty.delta, s.uncertainty.lambda, s.sweep_pf,
                                  dso_opt);
      } catch (const std::exception& e) {
        throw PipelineError("sweep", e.what());
      }
      std::ofstream out(s.out_dir / "sweep.csv");
      out << "epsilon,total_flex_MW,status\n" << std::setprecision(12);
      for (const SweepPoint& p : res.sweep) {
        out << p.epsilon << ',' << p.total_flex << ',' << solver::to_string(p.status) << '\n';
      }
      out.close();
      outputs.push_back("sweep.csv");
      for (const SweepPoint& p : res.sweep) {
        manifest["stages"].push_back({{"stage", "sweep"},
                                      {"epsilon", p.epsilon},
                                      {"status", solver::to_string(p.status)},
                                      {"total_flex_MW", p.total_flex}});
        if (p.status != solver::SolveStatus::Optimal) {
          std::ostringstream msg;
          msg << "epsilon " << p.epsilon << ": " << solver::to_string(p.status);
          throw PipelineError("sweep", msg.str());
        }
      }
    }
  } catch (const PipelineError& e) {
    manifest["error"] = e.record();
    write_manifest();
    throw;
  } catch (const std::exception& e) {
    const PipelineError err("run", e.what());
    manifest["error"] = err.record();
    write_manifest();
    throw err;
  }
  manifest["status"] = "ok";
  write_manifest();
  return res;
}

PlotFigure parse_plot_figure(const std::string& text) {
  if (text == "flex_by_bus") return PlotFigure::FlexByBus;
  if (text == "ev_consumption") return PlotFigure::EvConsumption;
  if (text == "voltage_trace") return PlotFigure::VoltageTrace;
  if (text == "eps_sweep") return PlotFigure::EpsSweep;
  throw PipelineError("plotdata", "unknown figure '" + text + "'");
}

std::string to_string(PlotFigure f) {
  switch (f) {
    case PlotFigure::FlexByBus: return "flex_by_bus";
    case PlotFigure::EvConsumption: return "ev_consumption";
    case PlotFigure::VoltageTrace: return "voltage_trace";
    case PlotFigure::EpsSweep: return "eps_sweep";
  }
  return "unknown";
}

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& path) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw PipelineError("plotdata", path.string() + ": no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string f;
  while (std::getline(in, f, ',')) out.push_back(f);
  return out;
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("plotdata", "missing artifact " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw PipelineError("plotdata", path.string() + ": empty file");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size()) {
      throw PipelineError("plotdata", path.string() + ": ragged row");
    }
  }
  return t;
}

std::vector<std::string> run_modes(const fs::path& dir, const std::optional<std::string>& only) {
  std::vector<std::string> labels;
  for (const std::string& l : kModeLabels) {
    if (only && *only != l) continue;
    if (fs::is_directory(dir / l)) labels.push_back(l);
  }
  if (labels.empty()) {
    throw PipelineError("plotdata", "no mode results" + (only ? " for " + *only : std::string()) +
                                        " in " + dir.string());
  }
  return labels;
}

bool wanted(const std::vector<int>& buses, int bus) {
  return buses.empty() || std::find(buses.begin(), buses.end(), bus) != buses.end();
}

std::string series_name(const std::string& label, int bus) { return label + ":bus" + std::to_string(bus); }

}  // namespace

std::vector<PlotRow> plotdata(const fs::path& run_dir, const PlotRequest& req) {
  std::vector<PlotRow> rows;
  switch (req.figure) {
    case PlotFigure::FlexByBus:
      for (const std::string& label : run_modes(run_dir, req.mode)) {
        const fs::path path = run_dir / label / "flex_schedule.csv";
        const Table t = read_table(path);
        const auto cb = t.column("bus", path), cp = t.column("period", path), cv = t.column("p_gf_MW", path);
        for (const auto& r : t.rows) {
          const int bus = std::stoi(r[cb]);
          if (wanted(req.buses, bus)) rows.push_back({series_name(label, bus), std::stoi(r[cp]), std::stod(r[cv])});
        }
      }
      break;
    case PlotFigure::EvConsumption:
      for (const std::string& label : run_modes(run_dir, req.mode)) {
        const fs::path path = run_dir / label / "ev_schedule.csv";
        const Table t = read_table(path);
        const auto cb = t.column("bus", path), cp = t.column("period", path), cv = t.column("p_kW", path);
        std::map<std::pair<int, int>, double> sum;
        for (const auto& r : t.rows) {
          const int bus = std::stoi(r[cb]);
          if (wanted(req.buses, bus)) sum[{bus, std::stoi(r[cp])}] += std::stod(r[cv]) / 1000.0;
        }
        for (const auto& [key, mw] : sum) rows.push_back({series_name(label, key.first), key.second, mw});
      }
      break;
    case PlotFigure::VoltageTrace:
      for (const std::string& label : run_modes(run_dir, req.mode)) {
        const fs::path path = run_dir / label / "voltages.csv";
        const Table t = read_table(path);
        const auto cb = t.column("bus", path), cp = t.column("period", path), cv = t.column("v_pu", path);
        bool found = false;
        for (const auto& r : t.rows) {
          if (std::stoi(r[cb]) != req.voltage_bus) continue;
          found = true;
          rows.push_back({series_name(label, req.voltage_bus), std::stoi(r[cp]), std::stod(r[cv])});
        }
        if (!found) {
          throw PipelineError("plotdata", path.string() + ": no bus " + std::to_string(req.voltage_bus));
        }
      }
      break;
    case PlotFigure::EpsSweep: {
      const fs::path path = run_dir / "sweep.csv";
      const Table t = read_table(path);
      const auto ce = t.column("epsilon", path), cv = t.column("total_flex_MW", path);
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        rows.push_back({"epsilon", static_cast<int>(i) + 1, std::stod(t.rows[i][ce])});
      }
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        rows.push_back({"total_flex_MW", static_cast<int>(i) + 1, std::stod(t.rows[i][cv])});
      }
      break;
    }
  }
  return rows;
}

void write_plot_csv(const std::vector<PlotRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("plotdata", "cannot write " + path.string());
  out << "series,period,value\n" << std::setprecision(12);
  for (const PlotRow& r : rows) out << r.series << ',' << r.period << ',' << r.value << '\n';
}

}  // namespace evflex
