// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cmaxloc/log.hpp"
#include "cmaxloc/pipeline.hpp"
#include "cmaxloc/scene_io.hpp"
#include "cmaxloc/synthbench.hpp"
#include "cmaxloc/trace.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNoConsensus = 4;

struct SceneFlags {
  int points = 50;
  int lines = 0;
  double outlier_rate = 0.0;
  double noise = 2.0;
  double sigma = 0.0;
  bool gaussian = false;
  uint64_t seed = 0;

  void Attach(CLI::App* cmd) {
    cmd->add_option("--points", points, "Number of 3D-2D point correspondences");
    cmd->add_option("--lines", lines, "Number of 3D-2D line correspondences");
    cmd->add_option("--outlier-rate", outlier_rate, "Fraction of correspondences replaced by outliers")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--noise", noise, "Pixel noise bound")->check(CLI::NonNegativeNumber);
    cmd->add_option("--sigma", sigma, "Gravity prior noise, degrees std")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--gaussian-noise", gaussian, "Truncated-Gaussian pixel noise instead of uniform");
    cmd->add_option("--seed", seed, "RNG seed");
  }

  cmaxloc::SceneOptions ToOptions() const {
    cmaxloc::SceneOptions opts;
    opts.n_points = points;
    opts.n_lines = lines;
    opts.outlier_rate = outlier_rate;
    opts.pixel_noise_bound = noise;
    opts.gravity_sigma_deg = sigma;
    opts.gaussian_noise = gaussian;
    opts.seed = seed;
    return opts;
  }
};

struct SolverFlags {
  std::string voting = "prioritized";
  std::string bound_mode = "propagated";
  bool no_seeding = false;
  int ransac_iters = 500;
  int refine_iters = 50;
  double imu_sigma = 0.0;

  void Attach(CLI::App* cmd) {
    cmd->add_option("--voting", voting, "Translation voting strategy")
        ->check(CLI::IsMember({"prioritized", "dimension-wise"}));
    cmd->add_option("--bound-mode", bound_mode, "Yaw constraint noise bound model")
        ->check(CLI::IsMember({"paper-min", "propagated"}));
    cmd->add_flag("--no-seeding", no_seeding, "Disable RANSAC seed windows for the yaw search");
    cmd->add_option("--ransac-iters", ransac_iters, "Seeding RANSAC iterations")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--refine-iters", refine_iters, "Local refinement iteration cap")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--imu-sigma", imu_sigma, "Assumed pitch/roll prior noise, degrees std")
        ->check(CLI::NonNegativeNumber);
  }

  cmaxloc::SolverOptions ToOptions() const {
    cmaxloc::SolverOptions opts;
    opts.voting = voting == "dimension-wise" ? cmaxloc::VotingMode::kDimensionWise
                                             : cmaxloc::VotingMode::kPrioritized;
    opts.bound_mode = bound_mode == "paper-min" ? cmaxloc::TimBoundMode::kPaperMin
                                                : cmaxloc::TimBoundMode::kPropagated;
    opts.use_seeding = !no_seeding;
    opts.ransac.iterations = ransac_iters;
    opts.refine_iterations = refine_iters;
    opts.prior_sigma_deg = imu_sigma;
    opts.refine_gravity = imu_sigma > 0.0;
    return opts;
  }
};

std::optional<std::vector<cmaxloc::SolverKind>> ParseSolvers(const std::string& csv) {
  std::vector<cmaxloc::SolverKind> kinds;
  std::stringstream ss(csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    auto kind = cmaxloc::SolverFromName(name);
    if (!kind) {
      std::cerr << "unknown solver: " << name << "\n";
      return std::nullopt;
    }
    kinds.push_back(*kind);
  }
  if (kinds.empty()) {
    std::cerr << "no solvers selected\n";
    return std::nullopt;
  }
  return kinds;
}

// "lo:hi:step" with step > 0 and hi >= lo, endpoints inclusive.
std::optional<std::vector<double>> ParseSweep(const std::string& text) {
  double lo = 0.0;
  double hi = 0.0;
  double step = 0.0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &tail) != 3 ||
      step <= 0.0 || hi < lo) {
    std::cerr << "bad sweep spec '" << text << "', expected lo:hi:step\n";
    return std::nullopt;
  }
  std::vector<double> values;
  for (int i = 0;; ++i) {
    const double v = lo + i * step;
    if (v > hi + step * 1e-9) break;
    values.push_back(v);
  }
  return values;
}

int RunSynth(const SceneFlags& scene_flags, const std::string& out_path) {
  if (scene_flags.points + scene_flags.lines <= 0) {
    std::cerr << "empty scene: need at least one point or line\n";
    return kExitUsage;
  }
  try {
    const cmaxloc::SyntheticScene scene = cmaxloc::GenerateScene(scene_flags.ToOptions());
    cmaxloc::SaveScene(scene, out_path);
  } catch (const cmaxloc::GenerationFailure& e) {
    std::cerr << "scene generation failed: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "cannot write " << out_path << ": " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

int RunSolve(const std::string& scene_path, const SolverFlags& solver_flags,
             bool with_timings, const std::string& trace_path) {
  cmaxloc::SyntheticScene scene;
  try {
    scene = cmaxloc::LoadScene(scene_path);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << scene_path << ": " << e.what() << "\n";
    return kExitIo;
  }

  std::ofstream trace_file;
  std::optional<cmaxloc::TraceSink> sink;
  if (!trace_path.empty()) {
    trace_file.open(trace_path);
    if (!trace_file) {
      std::cerr << "cannot write " << trace_path << "\n";
      return kExitIo;
    }
    sink.emplace(trace_file);
  }
  const cmaxloc::SolveReport report =
      cmaxloc::Solve(scene.points, scene.lines, scene.prior, scene.camera,
                     solver_flags.ToOptions(), sink ? &*sink : nullptr);

  std::cout << cmaxloc::ResultToJson(report, with_timings);
  if (report.status == cmaxloc::SolveStatus::kInsufficientInput) {
    std::cerr << "scene has no usable correspondences\n";
    return kExitUsage;
  }
  if (report.status == cmaxloc::SolveStatus::kNoConsensus) {
    std::cerr << "no consensus set found\n";
    return kExitNoConsensus;
  }
  return kExitOk;
}

struct BenchFlags {
  SceneFlags scene;
  SolverFlags solver;
  std::string outlier_sweep;
  std::string sigma_sweep;
  std::string points_sweep;
  std::string solvers = "ours";
  int runs = 100;
  int jobs = 1;
  std::string out_dir = "bench-out";
};

int RunBench(const BenchFlags& flags, bool compare_layout) {
  int sweeps = 0;
  sweeps += !flags.outlier_sweep.empty();
  sweeps += !flags.sigma_sweep.empty();
  sweeps += !flags.points_sweep.empty();
  if (!compare_layout && sweeps != 1) {
    std::cerr << "need exactly one of --outlier-sweep, --imu-sigma-sweep, --points-sweep\n";
    return kExitUsage;
  }
  if (compare_layout && sweeps != 0) {
    std::cerr << "compare runs a single configuration; use bench for sweeps\n";
    return kExitUsage;
  }

  cmaxloc::SweepOptions opts;
  opts.base = flags.scene.ToOptions();
  opts.solver = flags.solver.ToOptions();
  opts.runs = flags.runs;
  opts.jobs = flags.jobs;
  opts.seed = flags.scene.seed;

  if (compare_layout) {
    opts.axis = cmaxloc::SweepAxis::kOutlierRate;
    opts.values = {flags.scene.outlier_rate};
  } else if (!flags.outlier_sweep.empty()) {
    opts.axis = cmaxloc::SweepAxis::kOutlierRate;
    auto values = ParseSweep(flags.outlier_sweep);
    if (!values) return kExitUsage;
    opts.values = *values;
  } else if (!flags.sigma_sweep.empty()) {
    opts.axis = cmaxloc::SweepAxis::kGravitySigma;
    auto values = ParseSweep(flags.sigma_sweep);
    if (!values) return kExitUsage;
    opts.values = *values;
  } else {
    opts.axis = cmaxloc::SweepAxis::kPointCount;
    auto values = ParseSweep(flags.points_sweep);
    if (!values) return kExitUsage;
    opts.values = *values;
  }

  auto kinds = ParseSolvers(flags.solvers);
  if (!kinds) return kExitUsage;
  opts.solvers = *kinds;

  try {
    const cmaxloc::SweepResult result = cmaxloc::RunSweep(opts);
    const std::filesystem::path dir(flags.out_dir);
    std::filesystem::create_directories(dir);
    if (compare_layout) {
      cmaxloc::WriteCompareCsv(result, (dir / "compare.csv").string());
    } else {
      cmaxloc::WriteSummaryCsv(result, (dir / "summary.csv").string());
      cmaxloc::WriteTimingsCsv(result, (dir / "timings.csv").string());
    }
    cmaxloc::WriteTrialsJsonl(result, (dir / "trials.jsonl").string());
  } catch (const std::exception& e) {
    std::cerr << "benchmark failed: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

int RunExportPlot(const std::string& in_path, const std::string& kind,
                  const std::string& out_path) {
  if (kind != "success-curve" && kind != "timing" && kind != "cardinality") {
    std::cerr << "unknown --kind '" << kind << "'\n";
    return kExitUsage;
  }

  std::ifstream in(in_path);
  if (!in) {
    std::cerr << "cannot open " << in_path << "\n";
    return kExitIo;
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    std::cerr << in_path << " is empty\n";
    return kExitIo;
  }
  const std::vector<std::string> header = SplitCsvLine(header_line);

  std::ostringstream body;
  body << "series,x,y\n";

  if (kind == "timing") {
    // Per-stage timing table: axis,value,solver,stage,mean_seconds.
    if (header.size() != 5 || header[2] != "solver" || header[3] != "stage") {
      std::cerr << in_path << " is not a timings table\n";
      return kExitIo;
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> row = SplitCsvLine(line);
      if (row.size() != 5) {
        std::cerr << "malformed row in " << in_path << "\n";
        return kExitIo;
      }
      if (row[3] != "total") continue;
      body << row[2] << "," << row[1] << "," << row[4] << "\n";
    }
  } else {
    // Summary table: axis,value,<solver>_<stat>,...
    const std::string wanted =
        kind == "success-curve" ? "_success_rate" : "_mean_cardinality";
    if (header.size() < 3 || header[1] != "value") {
      std::cerr << in_path << " is not a summary table\n";
      return kExitIo;
    }
    std::vector<std::pair<size_t, std::string>> columns;  // index, series name
    for (size_t i = 2; i < header.size(); ++i) {
      const std::string& name = header[i];
      if (name.size() > wanted.size() &&
          name.compare(name.size() - wanted.size(), wanted.size(), wanted) == 0) {
        columns.emplace_back(i, name.substr(0, name.size() - wanted.size()));
      }
    }
    if (columns.empty()) {
      std::cerr << "no matching columns in " << in_path << "\n";
      return kExitIo;
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> row = SplitCsvLine(line);
      if (row.size() != header.size()) {
        std::cerr << "malformed row in " << in_path << "\n";
        return kExitIo;
      }
      for (const auto& [index, series] : columns) {
        body << series << "," << row[1] << "," << row[index] << "\n";
      }
    }
  }

  if (out_path.empty() || out_path == "-") {
    std::cout << body.str();
  } else {
    std::ofstream out(out_path);
    out << body.str();
    if (!out) {
      std::cerr << "cannot write " << out_path << "\n";
      return kExitIo;
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Globally optimal camera localization with a gravity prior"};
  app.require_subcommand(1);

  SceneFlags synth_scene;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic scene file");
  synth_scene.Attach(synth);
  synth->add_option("--out", synth_out, "Output scene JSON path")->required();

  std::string solve_scene;
  SolverFlags solve_solver;
  bool solve_timings = false;
  std::string solve_trace;
  CLI::App* solve = app.add_subcommand("solve", "Solve a scene file, result JSON on stdout");
  solve->add_option("--scene", solve_scene, "Scene JSON path")->required();
  solve_solver.Attach(solve);
  solve->add_flag("--timings", solve_timings, "Include stage timings in the result");
  solve->add_option("--trace", solve_trace, "Write per-stage trace JSON lines to this path");

  BenchFlags bench_flags;
  CLI::App* bench = app.add_subcommand("bench", "Monte-Carlo sweep over one scene parameter");
  bench_flags.scene.Attach(bench);
  bench_flags.solver.Attach(bench);
  bench->add_option("--outlier-sweep", bench_flags.outlier_sweep, "Outlier rate sweep lo:hi:step");
  bench->add_option("--imu-sigma-sweep", bench_flags.sigma_sweep, "Gravity noise sweep lo:hi:step, degrees");
  bench->add_option("--points-sweep", bench_flags.points_sweep, "Point count sweep lo:hi:step");
  bench->add_option("--runs", bench_flags.runs, "Trials per sweep cell")->check(CLI::PositiveNumber);
  bench->add_option("--solvers", bench_flags.solvers, "Comma list: ours, ours-dv, ransac");
  bench->add_option("--jobs", bench_flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--out", bench_flags.out_dir, "Output directory");

  BenchFlags compare_flags;
  compare_flags.solvers = "ours,ours-dv,ransac";
  compare_flags.out_dir = "compare-out";
  CLI::App* compare = app.add_subcommand("compare", "Run several solvers on one configuration");
  compare_flags.scene.Attach(compare);
  compare_flags.solver.Attach(compare);
  compare->add_option("--runs", compare_flags.runs, "Trials per solver")->check(CLI::PositiveNumber);
  compare->add_option("--solvers", compare_flags.solvers, "Comma list: ours, ours-dv, ransac");
  compare->add_option("--jobs", compare_flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  compare->add_option("--out", compare_flags.out_dir, "Output directory");

  std::string plot_in;
  std::string plot_kind;
  std::string plot_out;
  CLI::App* plot = app.add_subcommand("export-plot", "Reshape benchmark tables into series,x,y CSV");
  plot->add_option("--in", plot_in, "summary.csv or timings.csv from bench")->required();
  plot->add_option("--kind", plot_kind, "success-curve, timing, or cardinality")->required();
  plot->add_option("--out", plot_out, "Output CSV path, '-' for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (app.got_subcommand(synth)) return RunSynth(synth_scene, synth_out);
  if (app.got_subcommand(solve))
    return RunSolve(solve_scene, solve_solver, solve_timings, solve_trace);
  if (app.got_subcommand(bench)) return RunBench(bench_flags, false);
  if (app.got_subcommand(compare)) return RunBench(compare_flags, true);
  if (app.got_subcommand(plot)) return RunExportPlot(plot_in, plot_kind, plot_out);
  return kExitUsage;
}
