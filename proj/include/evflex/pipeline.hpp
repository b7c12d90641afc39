#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evflex/dso_flex.hpp"
#include "evflex/ev_fleet.hpp"
#include "evflex/ev_scheduler.hpp"
#include "evflex/solver/conic.hpp"
#include "evflex/solver/nlp.hpp"
#include "evflex/uncertainty.hpp"

namespace evflex {

/// Failure of one pipeline stage. `record()` is the machine-readable form.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& message)
      : std::runtime_error(message), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }
  nlohmann::json record() const;

 private:
  std::string stage_;
};

/// Fleet source: sampled per aggregator bus from a base seed, or read from a
/// fleet CSV when `path` is set.
struct FleetConfig {
  std::uint64_t seed = 42;
  std::map<int, int> counts;  // bus id -> EV count; empty means default_count per bus
  int default_count = 596;
  std::optional<std::filesystem::path> path;
};

struct Scenario {
  std::filesystem::path case_path = "data/ieee33.json";
  bool deterministic = true;  // DSO modes to run
  bool uncertain = true;
  std::vector<PfMode> pf_modes{PfMode::Unity, PfMode::NonUnity};
  UncertaintyParams uncertainty{0.0, 0.05, 6.0};
  std::vector<double> eps_sweep;  // empty: no sweep
  PfMode sweep_pf = PfMode::Unity;
  double load_std_fraction = 0.0;
  FleetConfig fleet;
  std::filesystem::path out_dir = "out";
  solver::NlpOptions nlp;
  solver::ConicOptions conic;
  bool parallel = true;

  /// Throws PipelineError("config", ...) on an empty mode product, an empty
  /// or unsorted sweep, negative counts or invalid uncertainty parameters.
  void validate() const;
};

/// Label such as "WUWQ": W(O)U for the DSO mode, W(O)Q for the PF mode.
std::string mode_label(bool uncertain, PfMode pf);

/// Reads a scenario from JSON. A run manifest is accepted too (its
/// "scenario" member is used). Relative case and fleet paths resolve against
/// `base_dir`.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::json scenario_to_json(const Scenario& s);

/// Fleet for every aggregator bus of `c`, sampled or read per `cfg`.
std::map<int, std::vector<EvSpec>> build_fleets(const NetworkCase& c, const FleetConfig& cfg,
                                                const FleetParams& params = {});

struct ModeRun {
  std::string label;
  DsoSolution dso;
  std::vector<AggregatorResult> aggregators;
};

struct RunResult {
  std::vector<ModeRun> modes;
  std::vector<ModeCost> costs;
  std::vector<SweepPoint> sweep;
  nlohmann::json manifest;
};

/// Parses the case, builds fleets, solves every DSO mode, hands each
/// envelope to the aggregators through flex_schedule.csv and writes all
/// artifacts under `s.out_dir`. Throws PipelineError naming the failed stage;
/// the files written so far remain.
RunResult run_scenario(const Scenario& s);

enum class PlotFigure { FlexByBus, EvConsumption, VoltageTrace, EpsSweep };

PlotFigure parse_plot_figure(const std::string& text);
std::string to_string(PlotFigure f);

struct PlotRequest {
  PlotFigure figure = PlotFigure::FlexByBus;
  std::optional<std::string> mode;  // restrict to one mode label
  std::vector<int> buses;           // empty: every bus in the artifact
  int voltage_bus = 17;
};

/// Long-format rows (series, period, value) built from a completed run
/// directory. Throws PipelineError("plotdata", ...) for missing artifacts.
struct PlotRow {
  std::string series;
  int period = 0;
  double value = 0.0;
};
std::vector<PlotRow> plotdata(const std::filesystem::path& run_dir, const PlotRequest& req);
void write_plot_csv(const std::vector<PlotRow>& rows, const std::filesystem::path& path);

}  // namespace evflex
