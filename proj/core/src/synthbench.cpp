// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/synthbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "cmaxloc/log.hpp"
#include "cmaxloc/refine.hpp"
#include "cmaxloc/rng.hpp"

namespace cmaxloc {

namespace {

constexpr double kMinSceneDepth = 0.1;
constexpr int kPoseAttempts = 1000;
constexpr int kFeatureAttempts = 1000;
constexpr int kOutlierAttempts = 100;

struct SampledPose {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

SampledPose SamplePose(Rng* rng, const SceneOptions& opts) {
  SampledPose pose;
  pose.yaw = rng->Uniform(-M_PI, M_PI);
  pose.pitch = rng->Uniform(-M_PI / 2.0, M_PI / 2.0);
  pose.roll = rng->Uniform(-M_PI, M_PI);
  pose.rotation =
      RotationWorldFromCamera(pose.yaw, pose.pitch, pose.roll).transpose();
  const Eigen::Vector3d center{
      rng->Uniform(-opts.camera_range, opts.camera_range),
      rng->Uniform(-opts.camera_range, opts.camera_range),
      rng->Uniform(-opts.camera_range, opts.camera_range)};
  pose.t = -pose.rotation * center;
  return pose;
}

Eigen::Vector3d SampleCubePoint(Rng* rng, double half) {
  return {rng->Uniform(-half, half), rng->Uniform(-half, half),
          rng->Uniform(-half, half)};
}

// Noiseless projection, or nothing if behind the camera or outside the
// image with a margin wide enough that any bounded noise stays inside.
std::optional<Eigen::Vector2d> ProjectInside(const Eigen::Vector3d& p,
                                             const Eigen::Matrix3d& rotation,
                                             const Eigen::Vector3d& t,
                                             const SceneOptions& opts) {
  const Eigen::Vector3d v = rotation * p + t;
  if (v.z() < kMinSceneDepth) return std::nullopt;
  const Eigen::Vector2d u{opts.camera.fx * v.x() / v.z() + opts.camera.cx,
                          opts.camera.fy * v.y() / v.z() + opts.camera.cy};
  const double margin = opts.pixel_noise_bound;
  if (u.x() < margin || u.x() > opts.image_width - margin || u.y() < margin ||
      u.y() > opts.image_height - margin) {
    return std::nullopt;
  }
  return u;
}

double SampleNoise(Rng* rng, const SceneOptions& opts) {
  const double n = opts.pixel_noise_bound;
  if (n <= 0.0) return 0.0;
  if (!opts.gaussian_noise) return rng->Uniform(-n, n);
  for (int i = 0; i < 64; ++i) {
    const double x = rng->Normal(0.0, n / 2.0);
    if (std::abs(x) <= n) return x;
  }
  return 0.0;
}

Eigen::Vector2d AddNoise(const Eigen::Vector2d& u, Rng* rng,
                         const SceneOptions& opts) {
  return {u.x() + SampleNoise(rng, opts), u.y() + SampleNoise(rng, opts)};
}

struct OutlierSplit {
  int points = 0;
  int lines = 0;
};

OutlierSplit SplitOutliers(const SceneOptions& opts) {
  OutlierSplit split;
  const int total = static_cast<int>(
      std::llround(opts.outlier_rate * (opts.n_points + opts.n_lines)));
  split.points = std::min(
      opts.n_points,
      static_cast<int>(std::llround(opts.outlier_rate * opts.n_points)));
  split.points = std::min(split.points, total);
  split.lines = total - split.points;
  if (split.lines > opts.n_lines) {
    split.points = std::min(opts.n_points,
                            split.points + (split.lines - opts.n_lines));
    split.lines = opts.n_lines;
  }
  return split;
}

bool GeneratePoint(Rng* rng, const SceneOptions& opts, const SampledPose& pose,
                   bool outlier, int id, PointCorrespondence* out) {
  for (int attempt = 0; attempt < kFeatureAttempts; ++attempt) {
    const Eigen::Vector3d p = SampleCubePoint(rng, opts.world_cube_half);
    if (!outlier) {
      const auto u = ProjectInside(p, pose.rotation, pose.t, opts);
      if (!u.has_value()) continue;
      *out = {id, p, AddNoise(*u, rng, opts), opts.pixel_noise_bound};
      return true;
    }
    // Observation rendered from an unrelated pose; keep only draws the
    // true pose rejects, so every outlier really is one.
    bool produced = false;
    for (int retry = 0; retry < kOutlierAttempts && !produced; ++retry) {
      const SampledPose decoy = SamplePose(rng, opts);
      const auto u = ProjectInside(p, decoy.rotation, decoy.t, opts);
      if (!u.has_value()) continue;
      *out = {id, p, AddNoise(*u, rng, opts), opts.pixel_noise_bound};
      produced = true;
    }
    if (produced &&
        !PointWithinBound(*out, pose.rotation, pose.t, opts.camera)) {
      return true;
    }
  }
  return false;
}

bool GenerateLine(Rng* rng, const SceneOptions& opts, const SampledPose& pose,
                  bool outlier, int id, LineCorrespondence* out) {
  for (int attempt = 0; attempt < kFeatureAttempts; ++attempt) {
    const Eigen::Vector3d a = SampleCubePoint(rng, opts.world_cube_half);
    const Eigen::Vector3d b = SampleCubePoint(rng, opts.world_cube_half);
    if (!outlier) {
      const auto ua = ProjectInside(a, pose.rotation, pose.t, opts);
      const auto ub = ProjectInside(b, pose.rotation, pose.t, opts);
      if (!ua.has_value() || !ub.has_value()) continue;
      if ((*ua - *ub).norm() < opts.min_line_length_px) continue;
      *out = {id,
              a,
              b,
              AddNoise(*ua, rng, opts),
              AddNoise(*ub, rng, opts),
              opts.pixel_noise_bound};
      return true;
    }
    bool produced = false;
    for (int retry = 0; retry < kOutlierAttempts && !produced; ++retry) {
      const SampledPose decoy = SamplePose(rng, opts);
      const auto ua = ProjectInside(a, decoy.rotation, decoy.t, opts);
      const auto ub = ProjectInside(b, decoy.rotation, decoy.t, opts);
      if (!ua.has_value() || !ub.has_value()) continue;
      if ((*ua - *ub).norm() < opts.min_line_length_px) continue;
      *out = {id,
              a,
              b,
              AddNoise(*ua, rng, opts),
              AddNoise(*ub, rng, opts),
              opts.pixel_noise_bound};
      produced = true;
    }
    if (produced &&
        !LineWithinBound(*out, pose.rotation, pose.t, opts.camera)) {
      return true;
    }
  }
  return false;
}

SolverOptions SolverOptionsFor(const SweepOptions& sweep, SolverKind kind,
                               double value, uint64_t scene_seed) {
  SolverOptions s = sweep.solver;
  s.seed = MixSeed(scene_seed, 1);
  switch (kind) {
    case SolverKind::kFull:
      s.voting = VotingMode::kPrioritized;
      break;
    case SolverKind::kFullDimensionWise:
      s.voting = VotingMode::kDimensionWise;
      break;
    case SolverKind::kRansacBaseline:
      break;
  }
  if (sweep.axis == SweepAxis::kGravitySigma) {
    s.prior_sigma_deg = value;
    s.refine_gravity = value > 0.0;
  }
  return s;
}

// The comparison baseline: best 2-entity sample refined on its own
// consensus, no global search behind it.
SolveReport SolveRansacBaseline(const SyntheticScene& scene,
                                const SolverOptions& opts) {
  SolveReport report;
  const RansacSeedResult rr =
      RunRansac(scene.points, scene.lines, scene.prior, scene.camera,
                opts.ransac.iterations, opts.ransac.max_seeds, opts.seed);
  if (!rr.has_pose || rr.best_cardinality == 0) {
    report.status = SolveStatus::kNoConsensus;
    return report;
  }
  std::vector<PointCorrespondence> cpoints;
  std::vector<LineCorrespondence> clines;
  for (int i : rr.point_ids) cpoints.push_back(scene.points[i]);
  for (int k : rr.line_ids) clines.push_back(scene.lines[k]);

  const YawRotationBasis basis(scene.prior);
  const RefineState refined =
      RefinePose(cpoints, clines, basis, scene.camera,
                 {rr.best_yaw, rr.best_pose.t},
                 {opts.refine_iterations, opts.refine_tol});
  Localization& loc = report.loc;
  loc.pose = MakePose(refined.yaw, scene.prior, refined.t);
  loc.yaw = WrapAngle(refined.yaw);
  loc.pitch = scene.prior.pitch;
  loc.roll = scene.prior.roll;
  for (const auto& pt : cpoints) {
    if (PointWithinBound(pt, loc.pose.R, loc.pose.t, scene.camera)) {
      loc.point_ids.push_back(pt.id);
    }
  }
  for (const auto& line : clines) {
    if (LineWithinBound(line, loc.pose.R, loc.pose.t, scene.camera)) {
      loc.line_ids.push_back(line.id);
    }
  }
  loc.cardinality =
      static_cast<int>(loc.point_ids.size() + loc.line_ids.size());
  report.status = loc.cardinality > 0 ? SolveStatus::kOk
                                      : SolveStatus::kNoConsensus;
  return report;
}

}  // namespace

SyntheticScene GenerateScene(const SceneOptions& opts) {
  Rng rng(MixSeed(opts.seed));
  const OutlierSplit split = SplitOutliers(opts);

  for (int attempt = 0; attempt < kPoseAttempts; ++attempt) {
    const SampledPose pose = SamplePose(&rng, opts);
    SyntheticScene scene;
    scene.camera = opts.camera;
    scene.image_width = opts.image_width;
    scene.image_height = opts.image_height;
    scene.pixel_noise_bound = opts.pixel_noise_bound;
    scene.seed = opts.seed;
    scene.true_yaw = pose.yaw;
    scene.true_pitch = pose.pitch;
    scene.true_roll = pose.roll;
    scene.true_pose = {pose.rotation, pose.t};

    bool ok = true;
    for (int i = 0; i < opts.n_points && ok; ++i) {
      const bool outlier = i >= opts.n_points - split.points;
      PointCorrespondence pt;
      ok = GeneratePoint(&rng, opts, pose, outlier, i, &pt);
      if (ok) {
        scene.points.push_back(pt);
        scene.point_inlier.push_back(outlier ? 0 : 1);
      }
    }
    for (int k = 0; k < opts.n_lines && ok; ++k) {
      const bool outlier = k >= opts.n_lines - split.lines;
      LineCorrespondence line;
      ok = GenerateLine(&rng, opts, pose, outlier, k, &line);
      if (ok) {
        scene.lines.push_back(line);
        scene.line_inlier.push_back(outlier ? 0 : 1);
      }
    }
    if (!ok) continue;

    scene.prior.pitch = pose.pitch;
    scene.prior.roll = pose.roll;
    if (opts.gravity_sigma_deg > 0.0) {
      const double sigma = opts.gravity_sigma_deg * M_PI / 180.0;
      scene.prior.pitch += rng.Normal(0.0, sigma);
      scene.prior.roll += rng.Normal(0.0, sigma);
    }
    return scene;
  }
  throw GenerationFailure("no sampled pose rendered a full scene after 1000 attempts");
}

TrialMetrics EvaluateResult(const SyntheticScene& scene,
                            const SolveReport& report) {
  TrialMetrics m;
  m.solved = report.status == SolveStatus::kOk;
  if (!m.solved) return m;

  const PoseError err = ComparePoses(report.loc.pose, scene.true_pose);
  m.dt = err.translation;
  m.dr_deg = err.rotation_deg;
  m.success = m.dt < kSuccessDt && m.dr_deg < kSuccessDrDeg;
  m.cardinality = report.loc.cardinality;
  m.timings = report.loc.timings;

  int true_total = 0;
  int tp = 0;
  for (size_t i = 0; i < scene.point_inlier.size(); ++i) {
    if (scene.point_inlier[i]) ++true_total;
  }
  for (size_t k = 0; k < scene.line_inlier.size(); ++k) {
    if (scene.line_inlier[k]) ++true_total;
  }
  for (int id : report.loc.point_ids) {
    if (id >= 0 && id < static_cast<int>(scene.point_inlier.size()) &&
        scene.point_inlier[id]) {
      ++tp;
    }
  }
  for (int id : report.loc.line_ids) {
    if (id >= 0 && id < static_cast<int>(scene.line_inlier.size()) &&
        scene.line_inlier[id]) {
      ++tp;
    }
  }
  const int est_total = report.loc.cardinality;
  m.precision = est_total > 0 ? static_cast<double>(tp) / est_total : 0.0;
  m.recall = true_total > 0 ? static_cast<double>(tp) / true_total : 1.0;
  return m;
}

std::string_view SolverName(SolverKind kind) {
  switch (kind) {
    case SolverKind::kFull:
      return "ours";
    case SolverKind::kFullDimensionWise:
      return "ours-dv";
    case SolverKind::kRansacBaseline:
      return "ransac";
  }
  return "unknown";
}

std::optional<SolverKind> SolverFromName(std::string_view name) {
  if (name == "ours") return SolverKind::kFull;
  if (name == "ours-dv") return SolverKind::kFullDimensionWise;
  if (name == "ransac") return SolverKind::kRansacBaseline;
  return std::nullopt;
}

std::string_view AxisName(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kOutlierRate:
      return "outlier_rate";
    case SweepAxis::kGravitySigma:
      return "sigma_deg";
    case SweepAxis::kPointCount:
      return "points";
  }
  return "unknown";
}

SweepResult RunSweep(const SweepOptions& opts) {
  SweepResult result;
  result.axis = opts.axis;
  result.values = opts.values;
  result.solvers = opts.solvers;

  const int n_cells = static_cast<int>(opts.values.size());
  const int n_solvers = static_cast<int>(opts.solvers.size());
  const int n_trials = n_cells * opts.runs;

  struct TrialOutcome {
    bool generation_failed = false;
    std::vector<TrialMetrics> per_solver;
  };
  std::vector<TrialOutcome> outcomes(n_trials);

  auto run_trial = [&](int flat) {
    const int cell = flat / opts.runs;
    const int trial = flat % opts.runs;
    const double value = opts.values[cell];
    const uint64_t scene_seed = MixSeed(opts.seed, cell, trial);

    SceneOptions scene_opts = opts.base;
    scene_opts.seed = scene_seed;
    switch (opts.axis) {
      case SweepAxis::kOutlierRate:
        scene_opts.outlier_rate = value;
        break;
      case SweepAxis::kGravitySigma:
        scene_opts.gravity_sigma_deg = value;
        break;
      case SweepAxis::kPointCount:
        scene_opts.n_points = static_cast<int>(std::llround(value));
        break;
    }

    TrialOutcome& out = outcomes[flat];
    out.per_solver.resize(n_solvers);
    SyntheticScene scene;
    try {
      scene = GenerateScene(scene_opts);
    } catch (const GenerationFailure&) {
      out.generation_failed = true;
      return;
    }
    for (int s = 0; s < n_solvers; ++s) {
      const SolverOptions solver_opts =
          SolverOptionsFor(opts, opts.solvers[s], value, scene_seed);
      const SolveReport report =
          opts.solvers[s] == SolverKind::kRansacBaseline
              ? SolveRansacBaseline(scene, solver_opts)
              : Solve(scene.points, scene.lines, scene.prior, scene.camera,
                      solver_opts);
      out.per_solver[s] = EvaluateResult(scene, report);
    }
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1 || n_trials <= 1) {
    for (int flat = 0; flat < n_trials; ++flat) run_trial(flat);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    const int n_workers = std::min(jobs, n_trials);
    workers.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&] {
        for (int flat = next.fetch_add(1); flat < n_trials;
             flat = next.fetch_add(1)) {
          run_trial(flat);
        }
      });
    }
    for (auto& worker : workers) worker.join();
  }

  for (int cell = 0; cell < n_cells; ++cell) {
    for (int s = 0; s < n_solvers; ++s) {
      CellStats stats;
      stats.value = opts.values[cell];
      stats.solver = opts.solvers[s];
      stats.runs = opts.runs;
      std::vector<double> cardinalities;
      for (int trial = 0; trial < opts.runs; ++trial) {
        const TrialOutcome& out = outcomes[cell * opts.runs + trial];
        if (out.generation_failed) {
          ++stats.generation_failures;
          continue;
        }
        const TrialMetrics& m = out.per_solver[s];
        if (m.solved) {
          ++stats.solved;
          stats.mean_precision += m.precision;
          stats.mean_recall += m.recall;
          stats.mean_cardinality += m.cardinality;
          cardinalities.push_back(m.cardinality);
          stats.mean_timings.tims += m.timings.tims;
          stats.mean_timings.ransac += m.timings.ransac;
          stats.mean_timings.bnb += m.timings.bnb;
          stats.mean_timings.voting += m.timings.voting;
          stats.mean_timings.refine += m.timings.refine;
          stats.mean_timings.total += m.timings.total;
        }
        if (m.success) {
          ++stats.successes;
          stats.mean_dt += m.dt;
          stats.mean_dr_deg += m.dr_deg;
        }
      }
      if (stats.solved > 0) {
        stats.mean_precision /= stats.solved;
        stats.mean_recall /= stats.solved;
        stats.mean_cardinality /= stats.solved;
        stats.mean_timings.tims /= stats.solved;
        stats.mean_timings.ransac /= stats.solved;
        stats.mean_timings.bnb /= stats.solved;
        stats.mean_timings.voting /= stats.solved;
        stats.mean_timings.refine /= stats.solved;
        stats.mean_timings.total /= stats.solved;
        std::sort(cardinalities.begin(), cardinalities.end());
        const size_t mid = cardinalities.size() / 2;
        stats.median_cardinality =
            cardinalities.size() % 2 == 1
                ? cardinalities[mid]
                : 0.5 * (cardinalities[mid - 1] + cardinalities[mid]);
      }
      if (stats.successes > 0) {
        stats.mean_dt /= stats.successes;
        stats.mean_dr_deg /= stats.successes;
      }
      stats.success_rate =
          stats.runs > 0 ? static_cast<double>(stats.successes) / stats.runs
                         : 0.0;
      result.cells.push_back(stats);
    }
  }

  for (int cell = 0; cell < n_cells; ++cell) {
    for (int trial = 0; trial < opts.runs; ++trial) {
      const TrialOutcome& out = outcomes[cell * opts.runs + trial];
      for (int s = 0; s < n_solvers; ++s) {
        TrialRecord rec;
        rec.cell = cell;
        rec.value = opts.values[cell];
        rec.trial = trial;
        rec.solver = opts.solvers[s];
        rec.scene_seed = MixSeed(opts.seed, cell, trial);
        rec.generation_failed = out.generation_failed;
        if (!out.generation_failed) rec.metrics = out.per_solver[s];
        result.trials.push_back(rec);
      }
    }
  }
  return result;
}

}  // namespace cmaxloc
