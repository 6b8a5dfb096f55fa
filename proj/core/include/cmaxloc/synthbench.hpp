// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cmaxloc/geom.hpp"
#include "cmaxloc/pipeline.hpp"
#include "cmaxloc/tim.hpp"

namespace cmaxloc {

struct SceneOptions {
  int n_points = 50;
  int n_lines = 0;
  double outlier_rate = 0.0;
  double pixel_noise_bound = 2.0;
  bool gaussian_noise = false;  // truncated at the bound instead of uniform
  double world_cube_half = 1.0;
  double camera_range = 2.0;  // camera center coordinates, per axis
  double gravity_sigma_deg = 0.0;
  CameraIntrinsics camera{400.0, 400.0, 320.0, 240.0};
  int image_width = 640;
  int image_height = 480;
  double min_line_length_px = 20.0;
  uint64_t seed = 0;
};

struct SyntheticScene {
  std::vector<PointCorrespondence> points;
  std::vector<LineCorrespondence> lines;
  std::vector<uint8_t> point_inlier;
  std::vector<uint8_t> line_inlier;
  Pose true_pose;
  double true_yaw = 0.0;
  double true_pitch = 0.0;
  double true_roll = 0.0;
  GravityPrior prior;  // the measured prior handed to solvers
  CameraIntrinsics camera;
  int image_width = 0;
  int image_height = 0;
  double pixel_noise_bound = 0.0;
  uint64_t seed = 0;
};

struct GenerationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Points and line segments uniform in a cube, observed from a uniformly
// sampled pose with bounded pixel noise; outliers are re-rendered from
// decoy poses until they fail the bound test at the true pose.
// Deterministic in opts.seed. Throws GenerationFailure when 1000 pose
// attempts cannot see enough of the world.
SyntheticScene GenerateScene(const SceneOptions& opts);

inline constexpr double kSuccessDt = 0.1;
inline constexpr double kSuccessDrDeg = 0.5;

struct TrialMetrics {
  bool solved = false;
  bool success = false;
  double dt = 0.0;
  double dr_deg = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int cardinality = 0;
  StageTimings timings;
};

TrialMetrics EvaluateResult(const SyntheticScene& scene,
                            const SolveReport& report);

enum class SolverKind { kFull, kFullDimensionWise, kRansacBaseline };

std::string_view SolverName(SolverKind kind);
std::optional<SolverKind> SolverFromName(std::string_view name);

enum class SweepAxis { kOutlierRate, kGravitySigma, kPointCount };

std::string_view AxisName(SweepAxis axis);

struct SweepOptions {
  SceneOptions base;
  SolverOptions solver;
  SweepAxis axis = SweepAxis::kOutlierRate;
  std::vector<double> values;
  int runs = 100;
  std::vector<SolverKind> solvers = {SolverKind::kFull};
  int jobs = 1;
  uint64_t seed = 0;
};

struct TrialRecord {
  int cell = 0;
  double value = 0.0;
  int trial = 0;
  SolverKind solver = SolverKind::kFull;
  uint64_t scene_seed = 0;
  bool generation_failed = false;
  TrialMetrics metrics;
};

struct CellStats {
  double value = 0.0;
  SolverKind solver = SolverKind::kFull;
  int runs = 0;
  int solved = 0;
  int successes = 0;
  int generation_failures = 0;
  double success_rate = 0.0;
  double mean_dt = 0.0;      // over successful trials
  double mean_dr_deg = 0.0;  // over successful trials
  double mean_precision = 0.0;  // over solved trials
  double mean_recall = 0.0;     // over solved trials
  double mean_cardinality = 0.0;
  double median_cardinality = 0.0;
  StageTimings mean_timings;  // over solved trials
};

struct SweepResult {
  SweepAxis axis = SweepAxis::kOutlierRate;
  std::vector<double> values;
  std::vector<SolverKind> solvers;
  std::vector<CellStats> cells;      // value-major, solver-minor
  std::vector<TrialRecord> trials;   // cell, then trial, then solver
};

// Monte-Carlo sweep: every solver sees the same scene per (cell, trial),
// with the scene stream derived from (seed, cell, trial). On the gravity
// axis the solvers also receive the cell sigma as their prior noise and
// re-optimize gravity after refinement. Aggregation order is fixed, so
// results are identical for any jobs count.
SweepResult RunSweep(const SweepOptions& opts);

}  // namespace cmaxloc
