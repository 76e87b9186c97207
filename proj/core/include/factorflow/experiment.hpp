#pragma once

#include "factorflow/flow.hpp"
#include "factorflow/svg.hpp"
#include "factorflow/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace factorflow {

enum class ExperimentKind { GapSweep, DispersionSweep, DeltaSweep, PropertySuite };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::GapSweep;
  int n = 7;
  std::vector<int> ranks{3, 2, 2};
  std::vector<double> grid;        ///< sweep values (alpha, gamma, or delta)
  int instances_per_point = 200;
  double delta = 1e-10;            ///< initial-condition scale
  double y_max = 5.0;
  std::uint64_t master_seed = 1;
  std::string output_dir;
  int restarts = 20;
  int jobs = 1;
  FlowOptions flow{};

  int q() const { return static_cast<int>(ranks.size()); }
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

/// One row per (group, sweep value, instance seed).
struct ExperimentRecord {
  std::string group;        ///< sweep family label (e.g. spectrum name)
  double sweep_value = 0;
  std::uint64_t instance_seed = 0;
  double relative_error = 0;
  double spectral_ratio = 0;
  double K_phi = 0;
  double K_min = 0;
  double K_max = 0;
  bool converged = false;
  double wall_time = 0;
  std::string note;         ///< failure detail; empty on success
};

/// Fig-1 style sweep: tame instances over a grid of spectral gaps alpha
/// (beta' = 1), flow from X0 * delta, analytic K_min / K_max.
std::vector<ExperimentRecord> run_gap_sweep(const ExperimentConfig& cfg);

/// Fig-2 style sweep: spectrum {1.5, U[1,1+gamma] x (m-1)} over the gamma
/// grid plus the two reference spectra; numeric K_min / K_max.
std::vector<ExperimentRecord> run_dispersion_sweep(const ExperimentConfig& cfg);

/// Fig-3 style sweep: spectra {2,1,1,1} and {2,2,1,1} over a delta grid.
std::vector<ExperimentRecord> run_delta_sweep(const ExperimentConfig& cfg);

std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg);

/// Deterministic CSV with a fixed header; records are sorted before writing.
void emit_records_csv(const std::vector<ExperimentRecord>& records, const std::string& path);
std::vector<ExperimentRecord> load_records_csv(const std::string& path);

struct Aggregate {
  std::string group;
  double sweep_value = 0;
  double mean = 0;
  double stderr_ = 0;
  int count = 0;
};
std::vector<Aggregate> aggregate_relative_error(const std::vector<ExperimentRecord>& records);
std::vector<Aggregate> aggregate_spectral_ratio(const std::vector<ExperimentRecord>& records);
std::vector<Series> aggregates_to_series(const std::vector<Aggregate>& aggs);

/// Module-level invariants run with fixed seeds; one entry per check.
struct PropertyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::vector<PropertyCheck> run_property_suite(const ExperimentConfig& cfg);
std::string property_report_json(const std::vector<PropertyCheck>& checks);

}  // namespace factorflow
