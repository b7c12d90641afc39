#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "evflex/grid_model.hpp"
#include "evflex/pipeline.hpp"

namespace {

using evflex::PipelineError;

int report_error(const PipelineError& e) {
  std::cerr << e.record().dump() << '\n';
  return 1;
}

struct RunArgs {
  std::string config, case_path, out, fleet;
  std::optional<std::uint64_t> seed;
  std::optional<int> evs;
  std::vector<std::string> modes, pf;
  std::vector<double> eps;
  bool serial = false;
};

int do_run(const RunArgs& a) {
  evflex::Scenario s = a.config.empty() ? evflex::Scenario{} : evflex::load_scenario(a.config);
  if (!a.case_path.empty()) s.case_path = a.case_path;
  if (!a.out.empty()) s.out_dir = a.out;
  if (!a.fleet.empty()) s.fleet.path = a.fleet;
  if (a.seed) s.fleet.seed = *a.seed;
  if (a.evs) {
    s.fleet.default_count = *a.evs;
    s.fleet.counts.clear();
  }
  if (!a.modes.empty()) {
    s.deterministic = s.uncertain = false;
    for (const std::string& m : a.modes) (m == "uncertain" ? s.uncertain : s.deterministic) = true;
  }
  if (!a.pf.empty()) {
    s.pf_modes.clear();
    for (const std::string& p : a.pf) s.pf_modes.push_back(evflex::parse_pf_mode(p));
  }
  if (!a.eps.empty()) s.eps_sweep = a.eps;
  if (a.serial) s.parallel = false;
  s.nlp.seed = s.fleet.seed;
  const evflex::RunResult r = evflex::run_scenario(s);
  for (const evflex::ModeCost& m : r.costs) {
    std::printf("%-7s cost %12.4f USD  flex %10.4f MW\n", m.model.c_str(), m.cost_usd, m.total_flex_mw);
  }
  for (const evflex::SweepPoint& p : r.sweep) {
    std::printf("eps %-8g flex %10.4f MW\n", p.epsilon, p.total_flex);
  }
  std::printf("artifacts in %s\n", s.out_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EV flexibility: DSO envelope and aggregator scheduling"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Solve every DSO mode and the aggregators, write artifacts");
  run_cmd->add_option("--config", run.config, "Scenario JSON (a run manifest also works)");
  run_cmd->add_option("--case", run.case_path, "Network case JSON");
  run_cmd->add_option("--seed", run.seed, "Fleet base seed");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_option("--mode", run.modes, "DSO modes")->check(CLI::IsMember({"deterministic", "uncertain"}));
  run_cmd->add_option("--pf", run.pf, "Power-factor modes")->check(CLI::IsMember({"unity", "non_unity"}));
  run_cmd->add_option("--eps", run.eps, "Ascending epsilon values for the sweep");
  run_cmd->add_option("--evs", run.evs, "EVs per aggregator bus");
  run_cmd->add_option("--fleet", run.fleet, "Fleet CSV instead of sampling");
  run_cmd->add_flag("--serial", run.serial, "Run solves one after another");

  std::string plot_dir, plot_figure = "flex_by_bus", plot_out, plot_mode;
  std::vector<int> plot_buses;
  int voltage_bus = 17;
  auto* plot_cmd = app.add_subcommand("plotdata", "Long-format CSV (series, period, value) from a run");
  plot_cmd->add_option("run_dir", plot_dir, "Completed run directory")->required();
  plot_cmd->add_option("--figure", plot_figure, "Figure")
      ->check(CLI::IsMember({"flex_by_bus", "ev_consumption", "voltage_trace", "eps_sweep"}));
  plot_cmd->add_option("--mode", plot_mode, "Restrict to one mode label, e.g. WUWQ");
  plot_cmd->add_option("--bus", plot_buses, "Aggregator buses to include");
  plot_cmd->add_option("--voltage-bus", voltage_bus, "Bus for voltage_trace");
  plot_cmd->add_option("--out", plot_out, "Output CSV (default <run_dir>/plot_<figure>.csv)");

  std::string check_case;
  auto* check_cmd = app.add_subcommand("validate-case", "Parse and validate a network case");
  check_cmd->add_option("case", check_case, "Network case JSON")->required();

  std::string fleet_case = "data/ieee33.json", fleet_out = "fleet.csv";
  std::uint64_t fleet_seed = 42;
  int fleet_count = 596;
  std::vector<int> fleet_buses;
  auto* fleet_cmd = app.add_subcommand("sample-fleet", "Sample EV fleets for the aggregator buses");
  fleet_cmd->add_option("--case", fleet_case, "Network case JSON");
  fleet_cmd->add_option("--seed", fleet_seed, "Base seed");
  fleet_cmd->add_option("--count", fleet_count, "EVs per bus");
  fleet_cmd->add_option("--bus", fleet_buses, "Buses (default: every aggregator bus)");
  fleet_cmd->add_option("--out", fleet_out, "Fleet CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return do_run(run);
    if (*plot_cmd) {
      evflex::PlotRequest req;
      req.figure = evflex::parse_plot_figure(plot_figure);
      if (!plot_mode.empty()) req.mode = plot_mode;
      req.buses = plot_buses;
      req.voltage_bus = voltage_bus;
      const auto rows = evflex::plotdata(plot_dir, req);
      const std::filesystem::path out =
          plot_out.empty() ? std::filesystem::path(plot_dir) / ("plot_" + plot_figure + ".csv") : std::filesystem::path(plot_out);
      evflex::write_plot_csv(rows, out);
      std::printf("%zu rows -> %s\n", rows.size(), out.string().c_str());
      return 0;
    }
    if (*check_cmd) {
      evflex::NetworkCase c;
      try {
        c = evflex::parse_case(check_case);
      } catch (const std::exception& e) {
        throw PipelineError("case", e.what());
      }
      std::printf("ok: %zu buses, %zu lines, %zu generators, %d periods of %g h, aggregators at",
                  c.bus_count(), c.lines.size(), c.generators.size(), c.periods, c.delta_h);
      for (int b : c.aggregator_buses()) std::printf(" %d", b);
      std::printf("\n");
      return 0;
    }
    if (*fleet_cmd) {
      evflex::NetworkCase c;
      try {
        c = evflex::parse_case(fleet_case);
      } catch (const std::exception& e) {
        throw PipelineError("case", e.what());
      }
      evflex::FleetConfig cfg;
      cfg.seed = fleet_seed;
      cfg.default_count = fleet_count;
      for (int b : fleet_buses) cfg.counts[b] = fleet_count;
      auto fleets = evflex::build_fleets(c, cfg);
      std::vector<evflex::EvSpec> all;
      for (const auto& [bus, fleet] : fleets) {
        if (!fleet_buses.empty() && !cfg.counts.count(bus)) continue;
        all.insert(all.end(), fleet.begin(), fleet.end());
      }
      evflex::write_fleet_csv(all, fleet_out);
      std::printf("%zu EVs -> %s\n", all.size(), fleet_out.c_str());
      return 0;
    }
  } catch (const PipelineError& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    return report_error(PipelineError("cli", e.what()));
  }
  return 0;
}
