// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "cmaxloc/geom.hpp"
#include "cmaxloc/refine.hpp"
#include "cmaxloc/rot_bnb.hpp"
#include "cmaxloc/tim.hpp"
#include "cmaxloc/trace.hpp"
#include "cmaxloc/trans_vote.hpp"

namespace cmaxloc {

enum class VotingMode { kPrioritized, kDimensionWise };

struct RansacOptions {
  int iterations = 500;
  int max_seeds = 10;
};

struct SolverOptions {
  TimBoundMode bound_mode = TimBoundMode::kPropagated;
  int pair_cap = 0;
  BnbOptions bnb;
  bool use_seeding = true;
  RansacOptions ransac;
  VotingMode voting = VotingMode::kPrioritized;
  VoteOptions vote;
  int refine_iterations = 50;
  double refine_tol = 1e-10;
  // For solves whose pitch/roll prior is noisy: widens the working pixel
  // bounds by sigma-induced image motion and re-optimizes gravity after
  // the 4-DoF refinement.
  double prior_sigma_deg = 0.0;
  bool refine_gravity = false;
  uint64_t seed = 0;  // drives the RANSAC seeder only
};

struct StageTimings {
  double tims = 0.0;
  double ransac = 0.0;
  double bnb = 0.0;
  double voting = 0.0;
  double refine = 0.0;
  double total = 0.0;
};

enum class SolveStatus { kOk, kInsufficientInput, kNoConsensus };

struct Localization {
  Pose pose;
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  std::vector<int> point_ids;  // consensus, by correspondence id
  std::vector<int> line_ids;
  int cardinality = 0;
  StageTimings timings;
  BnbStats bnb_stats;
};

struct SolveReport {
  SolveStatus status = SolveStatus::kNoConsensus;
  Localization loc;  // meaningful only when status == kOk
};

// Consensus membership tests; bounds below a millionth of a pixel are
// floored there so noise-free scenes survive float rounding.
bool PointWithinBound(const PointCorrespondence& pt,
                      const Eigen::Matrix3d& rotation,
                      const Eigen::Vector3d& t,
                      const CameraIntrinsics& camera);
bool LineWithinBound(const LineCorrespondence& line,
                     const Eigen::Matrix3d& rotation,
                     const Eigen::Vector3d& t, const CameraIntrinsics& camera);

struct RansacSeedResult {
  std::vector<double> seed_yaws;  // deduplicated, best-score first
  std::vector<RefineState> seed_states;  // full poses, aligned with seed_yaws
  Pose best_pose;
  double best_yaw = 0.0;
  int best_cardinality = 0;
  std::vector<int> point_ids;
  std::vector<int> line_ids;
  bool has_pose = false;
};

// Two-entity minimal-sample search: a point pair (or point + line) fixes
// yaw through its sinusoid roots and translation through the pair solve.
RansacSeedResult RunRansac(std::span<const PointCorrespondence> points,
                           std::span<const LineCorrespondence> lines,
                           const GravityPrior& prior,
                           const CameraIntrinsics& camera, int iterations,
                           int max_seeds, uint64_t seed);

SolveReport Solve(std::span<const PointCorrespondence> points,
                  std::span<const LineCorrespondence> lines,
                  const GravityPrior& prior, const CameraIntrinsics& camera,
                  const SolverOptions& opts = {}, TraceSink* trace = nullptr);

}  // namespace cmaxloc
