#include "factorflow/experiment.hpp"

#include "factorflow/analysis.hpp"
#include "factorflow/csv.hpp"
#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"
#include "factorflow/regularizer.hpp"
#include "factorflow/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

namespace factorflow {

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::GapSweep: return "gap-sweep";
    case ExperimentKind::DispersionSweep: return "dispersion-sweep";
    case ExperimentKind::DeltaSweep: return "delta-sweep";
    case ExperimentKind::PropertySuite: return "property-suite";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  if (name == "gap-sweep" || name == "gap") return ExperimentKind::GapSweep;
  if (name == "dispersion-sweep" || name == "dispersion") return ExperimentKind::DispersionSweep;
  if (name == "delta-sweep" || name == "delta") return ExperimentKind::DeltaSweep;
  if (name == "property-suite" || name == "check") return ExperimentKind::PropertySuite;
  throw std::invalid_argument("unknown experiment: " + name);
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig cfg;
  if (j.contains("experiment")) cfg.experiment = experiment_kind_from_string(j["experiment"]);
  cfg.n = j.value("n", cfg.n);
  if (j.contains("ranks")) cfg.ranks = j["ranks"].get<std::vector<int>>();
  if (j.contains("grid")) cfg.grid = j["grid"].get<std::vector<double>>();
  cfg.instances_per_point = j.value("instances_per_point", cfg.instances_per_point);
  cfg.delta = j.value("delta", cfg.delta);
  cfg.y_max = j.value("y_max", cfg.y_max);
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.restarts = j.value("restarts", cfg.restarts);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    cfg.flow.rel_tol = f.value("rel_tol", cfg.flow.rel_tol);
    cfg.flow.abs_tol = f.value("abs_tol", cfg.flow.abs_tol);
    cfg.flow.grad_tol = f.value("grad_tol", cfg.flow.grad_tol);
    cfg.flow.t_max = f.value("t_max", cfg.flow.t_max);
    cfg.flow.snapshot_every = f.value("snapshot_every", cfg.flow.snapshot_every);
  }
  if (cfg.instances_per_point < 1)
    throw std::invalid_argument("instances_per_point must be >= 1");
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["experiment"] = to_string(cfg.experiment);
  j["n"] = cfg.n;
  j["ranks"] = cfg.ranks;
  j["grid"] = cfg.grid;
  j["instances_per_point"] = cfg.instances_per_point;
  j["delta"] = cfg.delta;
  j["y_max"] = cfg.y_max;
  j["master_seed"] = cfg.master_seed;
  j["output_dir"] = cfg.output_dir;
  j["restarts"] = cfg.restarts;
  j["jobs"] = cfg.jobs;
  j["flow"] = {{"rel_tol", cfg.flow.rel_tol},
               {"abs_tol", cfg.flow.abs_tol},
               {"grad_tol", cfg.flow.grad_tol},
               {"t_max", cfg.flow.t_max},
               {"snapshot_every", cfg.flow.snapshot_every}};
  return j.dump(2) + "\n";
}

namespace {

struct KBounds {
  double K_min = 0;
  double K_max = 0;
  bool analytic = false;
};

// Analytic fast path when the instance certifies tame and every block has
// rank >= 2 (then the v-orthogonal plateau is attained and equals the max).
KBounds compute_k_bounds(const ProblemInstance& inst, const NormalForm& nf, int restarts,
                         Rng& rng) {
  KBounds kb;
  int min_rank = *std::min_element(inst.ranks.begin(), inst.ranks.end());
  TameCheck tc = check_tame(inst, 1e-6);
  if (tc.certificate && min_rank >= 2) {
    const TameCertificate& cert = *tc.certificate;
    double dot = 0;
    for (int i = 0; i < cert.q(); ++i)
      dot += cert.block_norms(i) * std::sqrt(inst.y(i));
    kb.K_min = -cert.alpha_inv * dot * dot + cert.beta_inv * inst.y.sum();
    kb.K_max = vperp_plateau_cost(cert, inst.y);
    kb.analytic = true;
    return kb;
  }
  RegSolution lo = solve_min_numeric(nf, inst.y, nf.n, restarts, rng);
  RegSolution hi = solve_max_numeric(nf, inst.y, nf.n, restarts, rng);
  kb.K_min = lo.K_star;
  kb.K_max = hi.K_star;
  return kb;
}

using InstanceMaker = std::function<ProblemInstance(Rng&)>;

ExperimentRecord run_single(const std::string& group, double sweep_value, std::uint64_t seed,
                            const InstanceMaker& make, const ExperimentConfig& cfg,
                            double delta) {
  ExperimentRecord rec;
  rec.group = group;
  rec.sweep_value = sweep_value;
  rec.instance_seed = seed;
  auto t0 = std::chrono::steady_clock::now();
  try {
    Rng rng(seed);
    ProblemInstance inst = make(rng);
    inst.seed = seed;
    NormalForm nf = build_normal_form(inst);
    KBounds kb = compute_k_bounds(inst, nf, cfg.restarts, rng);

    Matrix U0 = rng.gaussian_matrix(inst.n, inst.n);
    U0 /= U0.norm();
    Matrix X0 = delta * (U0 * U0.transpose());

    FlowOptions opts = cfg.flow;
    opts.snapshot_every = opts.t_max;  // terminal only; sweeps ignore interiors
    opts.abs_tol = std::min(opts.abs_tol, delta * opts.rel_tol);
    ConvergeResult cr = converge(inst, X0, Coordinates::X, opts);

    rec.K_phi = cr.state.trace();
    rec.K_min = kb.K_min;
    rec.K_max = kb.K_max;
    rec.relative_error = relative_error(rec.K_phi, kb.K_min, kb.K_max);
    rec.spectral_ratio = spectral_ratio(cr.state);
    rec.converged = cr.trajectory.converged;
  } catch (const std::exception& e) {
    rec.note = e.what();
    rec.converged = false;
    rec.relative_error = std::numeric_limits<double>::quiet_NaN();
    rec.spectral_ratio = std::numeric_limits<double>::quiet_NaN();
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

struct Task {
  std::string group;
  double sweep_value;
  std::uint64_t seed;
  InstanceMaker make;
  double delta_override = -1;  ///< > 0 when the sweep variable is delta itself
};

std::vector<ExperimentRecord> run_tasks(const std::vector<Task>& tasks,
                                        const ExperimentConfig& cfg) {
  std::vector<ExperimentRecord> records(tasks.size());
  int jobs = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      double delta = tasks[i].delta_override > 0 ? tasks[i].delta_override : cfg.delta;
      records[i] = run_single(tasks[i].group, tasks[i].sweep_value, tasks[i].seed,
                              tasks[i].make, cfg, delta);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return records;
}

void sort_records(std::vector<ExperimentRecord>& records) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.group != b.group) return a.group < b.group;
    if (a.sweep_value != b.sweep_value) return a.sweep_value < b.sweep_value;
    return a.instance_seed < b.instance_seed;
  });
}

// Resumable driver: seeds are a pure function of (master seed, group, grid
// index, instance index); completed (group, sweep, seed) rows are skipped.
std::vector<ExperimentRecord> drive(const ExperimentConfig& cfg,
                                    const std::vector<Task>& all_tasks,
                                    const std::string& csv_name) {
  std::vector<ExperimentRecord> existing;
  std::string csv_path;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    csv_path = cfg.output_dir + "/" + csv_name;
    if (std::filesystem::exists(csv_path)) existing = load_records_csv(csv_path);
  }
  std::set<std::tuple<std::string, double, std::uint64_t>> done;
  for (const auto& r : existing) done.insert({r.group, r.sweep_value, r.instance_seed});

  std::vector<Task> todo;
  for (const auto& t : all_tasks)
    if (!done.count({t.group, t.sweep_value, t.seed})) todo.push_back(t);

  std::vector<ExperimentRecord> fresh = run_tasks(todo, cfg);
  fresh.insert(fresh.end(), existing.begin(), existing.end());
  sort_records(fresh);
  if (!csv_path.empty()) emit_records_csv(fresh, csv_path);
  return fresh;
}

std::uint64_t task_seed(const ExperimentConfig& cfg, std::uint64_t group_id, std::size_t gi,
                        int i) {
  return hash_seed(cfg.master_seed, (group_id << 48) ^ (static_cast<std::uint64_t>(gi) << 32) ^
                                        static_cast<std::uint64_t>(i));
}

Vector draw_y(Rng& rng, int q, double y_max) {
  Vector y(q);
  for (int i = 0; i < q; ++i) y(i) = rng.uniform_positive(y_max);
  return y;
}

void maybe_emit_plots(const ExperimentConfig& cfg, const std::vector<ExperimentRecord>& records,
                      const std::string& stem, const std::string& x_label, bool log_x) {
  if (cfg.output_dir.empty()) return;
  SvgChartOptions so;
  so.x_label = x_label;
  so.log_x = log_x;
  so.y_label = "relative error";
  so.title = stem;
  emit_svg(aggregates_to_series(aggregate_relative_error(records)),
           cfg.output_dir + "/" + stem + "_relative_error.svg", so);
  so.y_label = "spectral ratio";
  emit_svg(aggregates_to_series(aggregate_spectral_ratio(records)),
           cfg.output_dir + "/" + stem + "_spectral_ratio.svg", so);
}

}  // namespace

std::vector<ExperimentRecord> run_gap_sweep(const ExperimentConfig& cfg) {
  if (cfg.grid.empty()) throw std::invalid_argument("gap sweep: empty grid");
  std::vector<Task> tasks;
  for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
    double alpha = cfg.grid[gi];
    if (alpha <= 0) throw std::invalid_argument("gap sweep: alpha must be positive");
    for (int i = 0; i < cfg.instances_per_point; ++i) {
      Task t;
      t.group = "tame";
      t.sweep_value = alpha;
      t.seed = task_seed(cfg, 1, gi, i);
      auto ranks = cfg.ranks;
      int n = cfg.n;
      double y_max = cfg.y_max;
      t.make = [alpha, ranks, n, y_max](Rng& rng) {
        Vector y = draw_y(rng, static_cast<int>(ranks.size()), y_max);
        return gen_tame(n, ranks, 1.0 + alpha, 1.0, y, rng).first;
      };
      tasks.push_back(std::move(t));
    }
  }
  auto records = drive(cfg, tasks, "gap_sweep.csv");
  maybe_emit_plots(cfg, records, "gap_sweep", "spectral gap", false);
  return records;
}

std::vector<ExperimentRecord> run_dispersion_sweep(const ExperimentConfig& cfg) {
  if (cfg.grid.empty()) throw std::invalid_argument("dispersion sweep: empty grid");
  const int m = std::accumulate(cfg.ranks.begin(), cfg.ranks.end(), 0);
  if (m != cfg.n)
    throw std::invalid_argument("dispersion sweep: requires m = n (finite maximum)");
  std::vector<Task> tasks;
  auto add_group = [&](const std::string& group, std::uint64_t gid, std::size_t gi,
                       double sweep_value, auto spectrum_maker) {
    for (int i = 0; i < cfg.instances_per_point; ++i) {
      Task t;
      t.group = group;
      t.sweep_value = sweep_value;
      t.seed = task_seed(cfg, gid, gi, i);
      auto ranks = cfg.ranks;
      int n = cfg.n;
      double y_max = cfg.y_max;
      t.make = [spectrum_maker, ranks, n, y_max](Rng& rng) {
        std::vector<double> spec = spectrum_maker(rng);
        Vector y = draw_y(rng, static_cast<int>(ranks.size()), y_max);
        return gen_with_spectrum(n, ranks, spec, y, rng, 0.0);
      };
      tasks.push_back(std::move(t));
    }
  };
  for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
    double gamma = cfg.grid[gi];
    if (gamma < 0) throw std::invalid_argument("dispersion sweep: gamma must be >= 0");
    int mm = m;
    add_group("dispersed", 2, gi, gamma, [gamma, mm](Rng& rng) {
      std::vector<double> spec(mm, 1.0);
      spec[0] = 1.5;
      for (int j = 1; j < mm; ++j) spec[j] = rng.uniform(1.0, 1.0 + gamma);
      return spec;
    });
    int mref = m;
    add_group("ref-1.00", 3, gi, gamma, [mref](Rng&) {
      std::vector<double> spec(mref, 1.0);
      spec[0] = 1.5;
      return spec;
    });
    add_group("ref-1.25", 4, gi, gamma, [mref](Rng&) {
      std::vector<double> spec(mref, 1.25);
      spec[0] = 1.5;
      return spec;
    });
  }
  auto records = drive(cfg, tasks, "dispersion_sweep.csv");
  maybe_emit_plots(cfg, records, "dispersion_sweep", "eigenvalue dispersion", false);
  return records;
}

std::vector<ExperimentRecord> run_delta_sweep(const ExperimentConfig& cfg) {
  if (cfg.grid.empty()) throw std::invalid_argument("delta sweep: empty grid");
  const int m = std::accumulate(cfg.ranks.begin(), cfg.ranks.end(), 0);
  if (m != cfg.n) throw std::invalid_argument("delta sweep: requires m = n");
  std::vector<Task> tasks;
  struct Group {
    const char* name;
    std::uint64_t gid;
    std::vector<double> spectrum;
    double floor;
  };
  std::vector<double> tame(m, 1.0), broken(m, 1.0);
  tame[0] = 2.0;
  broken[0] = 2.0;
  if (m >= 2) broken[1] = 2.0;
  std::vector<Group> groups{{"tame-2111", 5, tame, 1e-6}, {"broken-2211", 6, broken, 0.0}};
  for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
    double delta = cfg.grid[gi];
    if (delta <= 0) throw std::invalid_argument("delta sweep: delta must be positive");
    for (const auto& g : groups) {
      for (int i = 0; i < cfg.instances_per_point; ++i) {
        Task t;
        t.group = g.name;
        t.sweep_value = delta;
        t.delta_override = delta;
        t.seed = task_seed(cfg, g.gid, gi, i);
        auto ranks = cfg.ranks;
        int n = cfg.n;
        double y_max = cfg.y_max;
        auto spec = g.spectrum;
        double floor = g.floor;
        t.make = [spec, ranks, n, y_max, floor](Rng& rng) {
          Vector y = draw_y(rng, static_cast<int>(ranks.size()), y_max);
          return gen_with_spectrum(n, ranks, spec, y, rng, floor);
        };
        tasks.push_back(std::move(t));
      }
    }
  }
  auto records = drive(cfg, tasks, "delta_sweep.csv");
  maybe_emit_plots(cfg, records, "delta_sweep", "delta", true);
  return records;
}

std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case ExperimentKind::GapSweep: return run_gap_sweep(cfg);
    case ExperimentKind::DispersionSweep: return run_dispersion_sweep(cfg);
    case ExperimentKind::DeltaSweep: return run_delta_sweep(cfg);
    case ExperimentKind::PropertySuite:
      throw std::invalid_argument("property suite has no records; use run_property_suite");
  }
  throw std::invalid_argument("unknown experiment kind");
}

void emit_records_csv(const std::vector<ExperimentRecord>& records, const std::string& path) {
  CsvTable t;
  t.header = {"group",  "sweep_value", "instance_seed", "relative_error", "spectral_ratio",
              "K_phi",  "K_min",       "K_max",         "converged",      "wall_time",
              "note"};
  for (const auto& r : records) {
    t.rows.push_back({r.group, format_double(r.sweep_value), std::to_string(r.instance_seed),
                      format_double(r.relative_error), format_double(r.spectral_ratio),
                      format_double(r.K_phi), format_double(r.K_min), format_double(r.K_max),
                      r.converged ? "1" : "0", format_double(r.wall_time), r.note});
  }
  write_csv(t, path);
}

std::vector<ExperimentRecord> load_records_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::vector<ExperimentRecord> out;
  for (const auto& row : t.rows) {
    if (row.size() < 10) continue;
    ExperimentRecord r;
    r.group = row[0];
    r.sweep_value = std::stod(row[1]);
    r.instance_seed = std::stoull(row[2]);
    r.relative_error = std::stod(row[3]);
    r.spectral_ratio = std::stod(row[4]);
    r.K_phi = std::stod(row[5]);
    r.K_min = std::stod(row[6]);
    r.K_max = std::stod(row[7]);
    r.converged = row[8] == "1";
    r.wall_time = std::stod(row[9]);
    if (row.size() > 10) r.note = row[10];
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<Aggregate> aggregate_field(const std::vector<ExperimentRecord>& records,
                                       double ExperimentRecord::* field) {
  std::map<std::pair<std::string, double>, std::vector<double>> buckets;
  for (const auto& r : records) {
    double v = r.*field;
    if (std::isnan(v)) continue;
    buckets[{r.group, r.sweep_value}].push_back(v);
  }
  std::vector<Aggregate> out;
  for (const auto& [key, vals] : buckets) {
    Aggregate a;
    a.group = key.first;
    a.sweep_value = key.second;
    a.count = static_cast<int>(vals.size());
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    a.mean = mean;
    if (vals.size() > 1) {
      double ss = 0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      a.stderr_ = std::sqrt(ss / (vals.size() - 1)) / std::sqrt(double(vals.size()));
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

std::vector<Aggregate> aggregate_relative_error(const std::vector<ExperimentRecord>& records) {
  return aggregate_field(records, &ExperimentRecord::relative_error);
}

std::vector<Aggregate> aggregate_spectral_ratio(const std::vector<ExperimentRecord>& records) {
  return aggregate_field(records, &ExperimentRecord::spectral_ratio);
}

std::vector<Series> aggregates_to_series(const std::vector<Aggregate>& aggs) {
  std::map<std::string, Series> by_group;
  for (const auto& a : aggs) {
    Series& s = by_group[a.group];
    s.label = a.group;
    s.x.push_back(a.sweep_value);
    s.mean.push_back(a.mean);
    s.stderr_.push_back(a.stderr_);
  }
  std::vector<Series> out;
  for (auto& [_, s] : by_group) out.push_back(std::move(s));
  return out;
}

std::string property_report_json(const std::vector<PropertyCheck>& checks) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : checks)
    j.push_back({{"check_name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return j.dump(2) + "\n";
}

}  // namespace factorflow
