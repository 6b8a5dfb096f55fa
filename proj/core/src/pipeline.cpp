// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "cmaxloc/log.hpp"
#include "cmaxloc/refine.hpp"
#include "cmaxloc/rng.hpp"

namespace cmaxloc {

namespace {

constexpr double kMinPixelBound = 1e-6;
constexpr double kSeedDedupe = 1e-3;

double Seconds(std::chrono::steady_clock::time_point a,
               std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

double PixelResidual(const Eigen::Vector2d& observed,
                     const Eigen::Vector3d& p_world,
                     const Eigen::Matrix3d& rotation, const Eigen::Vector3d& t,
                     const CameraIntrinsics& camera) {
  const Eigen::Vector3d v = rotation * p_world + t;
  if (v.z() <= kDepthEpsilon) return std::numeric_limits<double>::infinity();
  const double du = camera.fx * v.x() / v.z() + camera.cx - observed.x();
  const double dv = camera.fy * v.y() / v.z() + camera.cy - observed.y();
  return std::max(std::abs(du), std::abs(dv));
}

bool WithinPixelBound(const Eigen::Vector2d& observed,
                      const Eigen::Vector3d& p_world,
                      const Eigen::Matrix3d& rotation,
                      const Eigen::Vector3d& t,
                      const CameraIntrinsics& camera, double bound) {
  return PixelResidual(observed, p_world, rotation, t, camera) <=
         std::max(bound, kMinPixelBound);
}

struct YawCandidate {
  double yaw = 0.0;
  int score = 0;
  int seq = 0;
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

int ScorePose(std::span<const PointCorrespondence> points,
              std::span<const LineCorrespondence> lines,
              const Eigen::Matrix3d& rotation, const Eigen::Vector3d& t,
              const CameraIntrinsics& camera, std::vector<int>* point_ids,
              std::vector<int>* line_ids) {
  int score = 0;
  if (point_ids != nullptr) point_ids->clear();
  if (line_ids != nullptr) line_ids->clear();
  for (size_t i = 0; i < points.size(); ++i) {
    if (PointWithinBound(points[i], rotation, t, camera)) {
      ++score;
      if (point_ids != nullptr) point_ids->push_back(static_cast<int>(i));
    }
  }
  for (size_t k = 0; k < lines.size(); ++k) {
    if (LineWithinBound(lines[k], rotation, t, camera)) {
      ++score;
      if (line_ids != nullptr) line_ids->push_back(static_cast<int>(k));
    }
  }
  return score;
}

double CircularDistance(double a, double b) {
  return std::abs(WrapAngle(a - b));
}

}  // namespace

bool PointWithinBound(const PointCorrespondence& pt,
                      const Eigen::Matrix3d& rotation,
                      const Eigen::Vector3d& t,
                      const CameraIntrinsics& camera) {
  return WithinPixelBound(pt.u, pt.p, rotation, t, camera, pt.noise_bound);
}

bool LineWithinBound(const LineCorrespondence& line,
                     const Eigen::Matrix3d& rotation,
                     const Eigen::Vector3d& t,
                     const CameraIntrinsics& camera) {
  return WithinPixelBound(line.u_start, line.p_start, rotation, t, camera,
                          line.noise_bound) &&
         WithinPixelBound(line.u_end, line.p_end, rotation, t, camera,
                          line.noise_bound);
}

RansacSeedResult RunRansac(std::span<const PointCorrespondence> points,
                           std::span<const LineCorrespondence> lines,
                           const GravityPrior& prior,
                           const CameraIntrinsics& camera, int iterations,
                           int max_seeds, uint64_t seed) {
  RansacSeedResult out;
  const int np = static_cast<int>(points.size());
  const int nl = static_cast<int>(lines.size());
  if (np < 1 || np - 1 + nl < 1 || iterations <= 0) return out;

  const YawRotationBasis basis(prior);
  std::vector<YawCandidate> candidates;
  int seq = 0;

  for (int iter = 0; iter < iterations; ++iter) {
    Rng rng(MixSeed(seed, static_cast<uint64_t>(iter)));
    const int i = static_cast<int>(rng.UniformBelow(np));
    const int pick = static_cast<int>(rng.UniformBelow(np - 1 + nl));
    const bool second_is_point = pick < np - 1;
    const int j = second_is_point ? (pick >= i ? pick + 1 : pick) : 0;
    const int lk = second_is_point ? 0 : pick - (np - 1);

    // A lone line constrains yaw by itself; a point pair does so jointly.
    std::optional<TimConstraint> tim =
        second_is_point
            ? MakePointPairTim(points[i], points[j], basis, camera,
                               TimBoundMode::kPaperMin)
            : MakeLineTim(lines[lk], basis, camera, TimBoundMode::kPaperMin);
    if (!tim.has_value()) continue;
    const SinusoidForm f = ToSinusoid(*tim);
    if (f.amplitude <= 0.0) continue;
    const double ratio = -f.offset / f.amplitude;
    if (ratio < -1.0 || ratio > 1.0) continue;
    const double theta = std::asin(ratio);

    for (double root : {theta - f.phase, M_PI - theta - f.phase}) {
      const double yaw = WrapAngle(root);
      const Eigen::Matrix3d rotation = basis.Rotation(yaw);
      const std::optional<Eigen::Vector3d> t =
          second_is_point
              ? SolvePairPointPoint(points[i], points[j], rotation, camera)
              : SolvePairPointLine(points[i], lines[lk], rotation, camera);
      if (!t.has_value()) continue;
      const int score =
          ScorePose(points, lines, rotation, *t, camera, nullptr, nullptr);
      candidates.push_back({yaw, score, seq++, *t});
      if (score > out.best_cardinality || !out.has_pose) {
        out.best_cardinality = score;
        out.best_yaw = yaw;
        out.best_pose = MakePose(yaw, prior, *t);
        out.has_pose = true;
      }
    }
  }

  if (out.has_pose) {
    const Eigen::Matrix3d rotation = basis.Rotation(out.best_yaw);
    ScorePose(points, lines, rotation, out.best_pose.t, camera,
              &out.point_ids, &out.line_ids);
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const YawCandidate& a, const YawCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.seq < b.seq;
            });
  for (const auto& cand : candidates) {
    if (static_cast<int>(out.seed_yaws.size()) >= max_seeds) break;
    bool fresh = true;
    for (double s : out.seed_yaws) {
      if (CircularDistance(s, cand.yaw) < kSeedDedupe) {
        fresh = false;
        break;
      }
    }
    if (fresh) {
      out.seed_yaws.push_back(cand.yaw);
      out.seed_states.push_back({cand.yaw, cand.t});
    }
  }
  return out;
}

SolveReport Solve(std::span<const PointCorrespondence> points,
                  std::span<const LineCorrespondence> lines,
                  const GravityPrior& prior, const CameraIntrinsics& camera,
                  const SolverOptions& opts, TraceSink* trace) {
  using Clock = std::chrono::steady_clock;
  SolveReport report;
  const auto t_start = Clock::now();

  const bool enough = points.size() >= 2 || (!points.empty() && !lines.empty());
  if (!enough) {
    report.status = SolveStatus::kInsufficientInput;
    return report;
  }

  // A noisy gravity prior moves projections by roughly sigma radians times
  // the focal length; working bounds absorb that so true inliers keep
  // passing every consensus test. The input bounds stay untouched.
  std::vector<PointCorrespondence> work_points(points.begin(), points.end());
  std::vector<LineCorrespondence> work_lines(lines.begin(), lines.end());
  if (opts.prior_sigma_deg > 0.0) {
    const double extra =
        opts.prior_sigma_deg * M_PI / 180.0 * camera.MeanFocal();
    for (auto& pt : work_points) pt.noise_bound += extra;
    for (auto& line : work_lines) line.noise_bound += extra;
  }

  const YawRotationBasis basis(prior);
  TimBuildStats tim_stats;
  const std::vector<TimConstraint> tims =
      BuildTims(work_points, work_lines, basis, camera,
                {opts.bound_mode, opts.pair_cap}, &tim_stats);
  const auto t_tims = Clock::now();

  RansacSeedResult seeds;
  if (opts.use_seeding && opts.ransac.iterations > 0) {
    seeds = RunRansac(work_points, work_lines, prior, camera,
                      opts.ransac.iterations, opts.ransac.max_seeds,
                      opts.seed);
  }
  const auto t_ransac = Clock::now();

  const std::optional<RotationCandidate> yaw_cand =
      SearchYaw(tims, opts.bnb, seeds.seed_yaws, &report.loc.bnb_stats,
                trace);
  const auto t_bnb = Clock::now();
  if (!yaw_cand.has_value()) {
    LogInfo("no yaw consensus (%zu tims, %d degenerate pairs)", tims.size(),
            tim_stats.degenerate_point_pairs);
    report.status = SolveStatus::kNoConsensus;
    return report;
  }

  // The pair-consensus peak can sit several tenths of a degree or more from
  // the entity-consensus yaw once chance-satisfied outlier constraints pile
  // up, and the translation stage cannot absorb that offset: displaced
  // boxes fragment the true member set. Every strong, well-separated
  // consensus peak is therefore carried through voting and trimmed
  // refinement, and the branch whose refined pose explains the most
  // correspondences wins.
  constexpr double kConsensusSlack = 1.5;
  constexpr double kWidthCapFactor = 50.0;
  constexpr int kTrimRounds = 6;
  constexpr int kYawBranchCells = 12;
  constexpr double kYawBranchSeparation = 0.01;  // rad
  constexpr double kYawBranchDedupe = 2e-3;      // rad
  constexpr size_t kYawBranchSeeds = 6;
  constexpr int kBranchPasses = 3;
  constexpr double kRevoteThreshold = 2e-3;
  constexpr double kSeedGatherSlack = 12.5;
  constexpr int kPairGatherMin = 4;
  constexpr size_t kPairBranchCap = 128;
  constexpr int kVoteCutoffMargin = 3;
  constexpr double kPairDedupeT = 1e-2;
  constexpr int kPipelineVoteCells = 4000;

  std::vector<double> branch_yaws{yaw_cand->yaw};
  auto add_branch = [&](double yaw_value) {
    for (double existing : branch_yaws) {
      if (CircularDistance(existing, yaw_value) < kYawBranchDedupe) return;
    }
    branch_yaws.push_back(yaw_value);
  };
  const int cell_floor = std::max(3, yaw_cand->cardinality / 2);
  for (const YawCell& cell :
       RankYawCells(tims, kYawBranchCells, kYawBranchSeparation)) {
    if (cell.cardinality >= cell_floor) add_branch(cell.yaw);
  }
  for (size_t s = 0; s < seeds.seed_yaws.size() && s < kYawBranchSeeds; ++s) {
    add_branch(seeds.seed_yaws[s]);
  }

  struct Branch {
    RefineState refined;
    std::vector<PointCorrespondence> members_p;
    std::vector<LineCorrespondence> members_l;
    int screened = 0;
    double mean_residual = 0.0;
  };
  const int np = static_cast<int>(work_points.size());

  std::optional<Branch> winner;

  // Concentration refinement. A branch's initial members can carry entities
  // that only agreed by coincidence, so scale-based trimming is avoided
  // entirely. Each round fits on the best-ranked members at the current
  // pose, halving that subset while the fit fails to explain as many
  // members as it uses; rank selection tolerates any contamination short
  // of a coherent majority. Membership is then re-derived from the whole
  // input, the fit repeated on everything that agrees, and the branch
  // scored by how much of the input the final pose explains.
  auto concentrate_and_score = [&](Branch br) -> std::optional<Branch> {
    const size_t m = br.members_p.size() + br.members_l.size();
    auto member_residual = [&](const Eigen::Matrix3d& rot_now, size_t idx) {
      if (idx < br.members_p.size()) {
        const auto& pt = br.members_p[idx];
        return PixelResidual(pt.u, pt.p, rot_now, br.refined.t, camera);
      }
      const auto& line = br.members_l[idx - br.members_p.size()];
      return std::max(PixelResidual(line.u_start, line.p_start, rot_now,
                                    br.refined.t, camera),
                      PixelResidual(line.u_end, line.p_end, rot_now,
                                    br.refined.t, camera));
    };
    auto member_bound = [&](size_t idx) {
      return idx < br.members_p.size()
                 ? br.members_p[idx].noise_bound
                 : br.members_l[idx - br.members_p.size()].noise_bound;
    };
    for (int round = 0; round < kTrimRounds; ++round) {
      const size_t fit_k = std::max<size_t>(4, m >> (round + 1));
      const Eigen::Matrix3d fit_rot = basis.Rotation(br.refined.yaw);
      std::vector<std::pair<double, size_t>> ranked;
      ranked.reserve(m);
      for (size_t i = 0; i < m; ++i) {
        ranked.push_back({member_residual(fit_rot, i), i});
      }
      std::sort(ranked.begin(), ranked.end());
      const size_t take = std::min(fit_k, ranked.size());

      std::vector<PointCorrespondence> fit_points;
      std::vector<LineCorrespondence> fit_lines;
      for (size_t i = 0; i < take; ++i) {
        const size_t idx = ranked[i].second;
        if (idx < br.members_p.size()) {
          fit_points.push_back(br.members_p[idx]);
        } else {
          fit_lines.push_back(br.members_l[idx - br.members_p.size()]);
        }
      }
      br.refined = RefinePose(fit_points, fit_lines, basis, camera,
                              br.refined,
                              {opts.refine_iterations, opts.refine_tol});

      const Eigen::Matrix3d agree_rot = basis.Rotation(br.refined.yaw);
      size_t agree = 0;
      for (size_t i = 0; i < m; ++i) {
        if (member_residual(agree_rot, i) <=
            std::max(kConsensusSlack * member_bound(i), kMinPixelBound)) {
          ++agree;
        }
      }
      if (agree >= take) break;
    }

    br.members_p.clear();
    br.members_l.clear();
    const Eigen::Matrix3d r_pick = basis.Rotation(br.refined.yaw);
    for (const auto& pt : work_points) {
      if (PixelResidual(pt.u, pt.p, r_pick, br.refined.t, camera) <=
          std::max(kConsensusSlack * pt.noise_bound, kMinPixelBound)) {
        br.members_p.push_back(pt);
      }
    }
    for (const auto& line : work_lines) {
      if (std::max(PixelResidual(line.u_start, line.p_start, r_pick,
                                 br.refined.t, camera),
                   PixelResidual(line.u_end, line.p_end, r_pick,
                                 br.refined.t, camera)) <=
          std::max(kConsensusSlack * line.noise_bound, kMinPixelBound)) {
        br.members_l.push_back(line);
      }
    }
    if (br.members_p.empty() && br.members_l.empty()) return std::nullopt;
    br.refined = RefinePose(br.members_p, br.members_l, basis, camera,
                            br.refined,
                            {opts.refine_iterations, opts.refine_tol});

    const Eigen::Matrix3d r_fit = basis.Rotation(br.refined.yaw);
    double residual_sum = 0.0;
    for (const auto& pt : work_points) {
      const double resid =
          PixelResidual(pt.u, pt.p, r_fit, br.refined.t, camera);
      if (resid <= std::max(kConsensusSlack * pt.noise_bound, kMinPixelBound)) {
        ++br.screened;
        residual_sum += resid / std::max(pt.noise_bound, kMinPixelBound);
      }
    }
    for (const auto& line : work_lines) {
      const double resid = std::max(
          PixelResidual(line.u_start, line.p_start, r_fit, br.refined.t,
                        camera),
          PixelResidual(line.u_end, line.p_end, r_fit, br.refined.t, camera));
      if (resid <=
          std::max(kConsensusSlack * line.noise_bound, kMinPixelBound)) {
        ++br.screened;
        residual_sum += resid / std::max(line.noise_bound, kMinPixelBound);
      }
    }
    if (br.screened > 0) br.mean_residual = residual_sum / br.screened;
    return br;
  };

  auto evaluate_pass = [&](double branch_yaw) -> std::optional<Branch> {
    const Eigen::Matrix3d rotation = basis.Rotation(branch_yaw);
    std::vector<TranslationHypothesis> hyps = BuildHypotheses(
        work_points, work_lines, rotation, camera, {opts.pair_cap});

    // A near-degenerate pair certifies nothing: its box stabs every cell
    // and drags its entities into winners they never really supported.
    // Boxes far wider than the typical pair carry no information, so they
    // are dropped before voting.
    {
      std::vector<double> widths;
      widths.reserve(hyps.size());
      for (const auto& h : hyps) {
        widths.push_back((h.hi[0] - h.lo[0]) + (h.hi[1] - h.lo[1]) +
                         (h.hi[2] - h.lo[2]));
      }
      std::vector<double> sorted = widths;
      if (!sorted.empty()) {
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                         sorted.end());
        const double cap = kWidthCapFactor * sorted[sorted.size() / 2];
        std::vector<TranslationHypothesis> informative;
        informative.reserve(hyps.size());
        for (size_t i = 0; i < hyps.size(); ++i) {
          if (widths[i] <= cap) informative.push_back(hyps[i]);
        }
        if (!informative.empty()) hyps = std::move(informative);
      }
    }

    VoteOptions vopts = opts.vote;
    if (vopts.max_cells == 0) vopts.max_cells = kPipelineVoteCells;
    if (winner.has_value()) {
      vopts.initial_cutoff =
          std::max(0, winner->screened - kVoteCutoffMargin);
    }
    const std::optional<TranslationResult> vote =
        (opts.voting == VotingMode::kPrioritized)
            ? VotePrioritized(hyps, vopts, trace)
            : VoteDimensionWise(hyps, trace);
    if (!vote.has_value()) return std::nullopt;

    // Freeze membership: the vote winner's entities. Their pixel-bound
    // consistency at the voted pose is what the hypothesis boxes certify,
    // so only cheirality needs checking here; entities behind the camera
    // would destabilize the refinement.
    const auto in_front = [&](const Eigen::Vector3d& p) {
      return (rotation * p + vote->t).z() > kDepthEpsilon;
    };
    Branch br;
    for (int id : vote->consensus_ids) {
      if (id < np) {
        if (in_front(work_points[id].p)) {
          br.members_p.push_back(work_points[id]);
        }
      } else {
        const LineCorrespondence& line = work_lines[id - np];
        if (in_front(line.p_start) && in_front(line.p_end)) {
          br.members_l.push_back(line);
        }
      }
    }
    if (br.members_p.empty() && br.members_l.empty()) return std::nullopt;

    br.refined = {branch_yaw, vote->t};
    return concentrate_and_score(std::move(br));
  };

  // A seed pose enters the branch machinery directly: its members are
  // whatever the pose roughly explains, gathered wide because a minimal
  // two-entity solve carries sizable pose error.
  auto evaluate_seed = [&](const RefineState& state) -> std::optional<Branch> {
    const Eigen::Matrix3d rotation = basis.Rotation(state.yaw);
    Branch br;
    for (const auto& pt : work_points) {
      if (PixelResidual(pt.u, pt.p, rotation, state.t, camera) <=
          kSeedGatherSlack * std::max(pt.noise_bound, kMinPixelBound)) {
        br.members_p.push_back(pt);
      }
    }
    for (const auto& line : work_lines) {
      if (std::max(PixelResidual(line.u_start, line.p_start, rotation,
                                 state.t, camera),
                   PixelResidual(line.u_end, line.p_end, rotation, state.t,
                                 camera)) <=
          kSeedGatherSlack * std::max(line.noise_bound, kMinPixelBound)) {
        br.members_l.push_back(line);
      }
    }
    if (br.members_p.size() + br.members_l.size() < 2) return std::nullopt;
    br.refined = state;
    return concentrate_and_score(std::move(br));
  };

  auto evaluate_branch = [&](double branch_yaw) -> std::optional<Branch> {
    std::optional<Branch> best = evaluate_pass(branch_yaw);
    double voted_yaw = branch_yaw;
    for (int pass = 1; pass < kBranchPasses && best.has_value(); ++pass) {
      if (CircularDistance(best->refined.yaw, voted_yaw) < kRevoteThreshold) {
        break;
      }
      voted_yaw = best->refined.yaw;
      std::optional<Branch> next = evaluate_pass(voted_yaw);
      if (!next.has_value()) break;
      if (next->screened > best->screened ||
          (next->screened == best->screened &&
           next->mean_residual < best->mean_residual)) {
        best = std::move(next);
      } else {
        break;
      }
    }
    return best;
  };

  // Exhaustive two-entity sweep. Score-ranked sampling can bury the rare
  // all-consistent pair behind coincidence poses when few correspondences
  // are clean, but wide-radius support separates the two: a coincidence
  // pose explains little beyond its own pair, while a clean pair pulls in
  // the rest of its consensus set even through minimal-solve error.
  {
    struct PairSeed {
      RefineState state;
      int gathered = 0;
      int seq = 0;
    };
    std::vector<PairSeed> pair_seeds;
    int pair_seq = 0;
    auto consider_state = [&](double yaw, const Eigen::Vector3d& t) {
      const Eigen::Matrix3d rotation = basis.Rotation(yaw);
      int gathered = 0;
      for (const auto& pt : work_points) {
        if (PixelResidual(pt.u, pt.p, rotation, t, camera) <=
            kSeedGatherSlack * std::max(pt.noise_bound, kMinPixelBound)) {
          ++gathered;
        }
      }
      for (const auto& line : work_lines) {
        if (std::max(PixelResidual(line.u_start, line.p_start, rotation, t,
                                   camera),
                     PixelResidual(line.u_end, line.p_end, rotation, t,
                                   camera)) <=
            kSeedGatherSlack * std::max(line.noise_bound, kMinPixelBound)) {
          ++gathered;
        }
      }
      if (gathered >= kPairGatherMin) {
        pair_seeds.push_back({{yaw, t}, gathered, pair_seq});
      }
      ++pair_seq;
    };
    auto consider_tim = [&](const std::optional<TimConstraint>& tim,
                            auto&& solve_t) {
      if (!tim.has_value()) return;
      const SinusoidForm f = ToSinusoid(*tim);
      if (f.amplitude <= 0.0) return;
      const double ratio = -f.offset / f.amplitude;
      if (ratio < -1.0 || ratio > 1.0) return;
      const double theta = std::asin(ratio);
      for (double root : {theta - f.phase, M_PI - theta - f.phase}) {
        const double yaw = WrapAngle(root);
        const std::optional<Eigen::Vector3d> t =
            solve_t(basis.Rotation(yaw));
        if (t.has_value()) consider_state(yaw, *t);
      }
    };
    for (int i = 0; i < np; ++i) {
      for (int j = i + 1; j < np; ++j) {
        consider_tim(
            MakePointPairTim(work_points[i], work_points[j], basis, camera,
                             TimBoundMode::kPaperMin),
            [&](const Eigen::Matrix3d& rot) {
              return SolvePairPointPoint(work_points[i], work_points[j], rot,
                                         camera);
            });
      }
    }
    for (const auto& line : work_lines) {
      const std::optional<TimConstraint> tim =
          MakeLineTim(line, basis, camera, TimBoundMode::kPaperMin);
      if (!tim.has_value()) continue;
      const SinusoidForm f = ToSinusoid(*tim);
      if (f.amplitude <= 0.0) continue;
      const double ratio = -f.offset / f.amplitude;
      if (ratio < -1.0 || ratio > 1.0) continue;
      const double theta = std::asin(ratio);
      for (double root : {theta - f.phase, M_PI - theta - f.phase}) {
        const double yaw = WrapAngle(root);
        const Eigen::Matrix3d rotation = basis.Rotation(yaw);
        for (int i = 0; i < np; ++i) {
          const std::optional<Eigen::Vector3d> t =
              SolvePairPointLine(work_points[i], line, rotation, camera);
          if (t.has_value()) consider_state(yaw, *t);
        }
      }
    }
    std::sort(pair_seeds.begin(), pair_seeds.end(),
              [](const PairSeed& a, const PairSeed& b) {
                if (a.gathered != b.gathered) return a.gathered > b.gathered;
                return a.seq < b.seq;
              });
    if (pair_seeds.size() > kPairBranchCap) pair_seeds.resize(kPairBranchCap);
    int evaluated = 0;
    std::vector<RefineState> tried;
    for (const PairSeed& ps : pair_seeds) {
      bool fresh = true;
      for (const RefineState& seen : tried) {
        if (CircularDistance(seen.yaw, ps.state.yaw) < kYawBranchDedupe &&
            (seen.t - ps.state.t).norm() < kPairDedupeT) {
          fresh = false;
          break;
        }
      }
      if (!fresh) continue;
      tried.push_back(ps.state);
      std::optional<Branch> br = evaluate_seed(ps.state);
      ++evaluated;
      if (!br.has_value()) continue;
      if (!winner.has_value() || br->screened > winner->screened ||
          (br->screened == winner->screened &&
           br->mean_residual < winner->mean_residual)) {
        winner = std::move(br);
      }
    }
    if (trace != nullptr) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "{\"stage\":\"pair_sweep\",\"poses\":%d,"
                    "\"candidates\":%zu,\"evaluated\":%d}",
                    pair_seq, pair_seeds.size(), evaluated);
      trace->Emit(buf);
    }
  }
  for (size_t si = 0; si < seeds.seed_states.size() &&
                      si < kYawBranchSeeds; ++si) {
    std::optional<Branch> br = evaluate_seed(seeds.seed_states[si]);
    if (trace != nullptr) {
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "{\"stage\":\"seed_branch\",\"yaw\":%.17g,"
                    "\"refined\":%.17g,\"screened\":%d}",
                    seeds.seed_states[si].yaw,
                    br.has_value() ? br->refined.yaw
                                   : seeds.seed_states[si].yaw,
                    br.has_value() ? br->screened : -1);
      trace->Emit(buf);
    }
    if (!br.has_value()) continue;
    if (!winner.has_value() || br->screened > winner->screened ||
        (br->screened == winner->screened &&
         br->mean_residual < winner->mean_residual)) {
      winner = std::move(br);
    }
  }

  for (double branch_yaw : branch_yaws) {
    std::optional<Branch> br = evaluate_branch(branch_yaw);
    if (trace != nullptr) {
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "{\"stage\":\"branch\",\"yaw\":%.17g,\"refined\":%.17g,"
                    "\"screened\":%d,\"mean_residual\":%.6g}",
                    branch_yaw, br.has_value() ? br->refined.yaw : branch_yaw,
                    br.has_value() ? br->screened : -1,
                    br.has_value() ? br->mean_residual : 0.0);
      trace->Emit(buf);
    }
    if (!br.has_value()) continue;
    if (!winner.has_value() || br->screened > winner->screened ||
        (br->screened == winner->screened &&
         br->mean_residual < winner->mean_residual)) {
      winner = std::move(br);
    }
  }
  const auto t_vote = Clock::now();
  if (!winner.has_value()) {
    report.status = SolveStatus::kNoConsensus;
    return report;
  }
  std::vector<PointCorrespondence> frozen_points = std::move(winner->members_p);
  std::vector<LineCorrespondence> frozen_lines = std::move(winner->members_l);
  RefineState refined = winner->refined;
  double yaw = refined.yaw;
  double pitch = prior.pitch;
  double roll = prior.roll;
  Eigen::Vector3d t = refined.t;
  if (opts.refine_gravity) {
    // Each polish absorbs part of the pitch and roll error the inflated
    // working bounds existed for, so the inflation deflates in stages:
    // screen, refit, tighten. Members only consistent under the wider
    // slack drop out along the way. A stage that would leave fewer than
    // four members keeps the previous stage's bounds and pose instead.
    // The polish descends locally, so several pitch and roll starts one
    // sigma apart run through the schedule and the candidate holding the
    // largest input-bound consensus wins.
    const double extra =
        opts.prior_sigma_deg * M_PI / 180.0 * camera.MeanFocal();
    const double sigma_rad = opts.prior_sigma_deg * M_PI / 180.0;
    struct PolishCandidate {
      PolishState state;
      std::vector<PointCorrespondence> members_p;
      std::vector<LineCorrespondence> members_l;
      double keep = 1.0;
      int screened = 0;
      double mean_residual = 0.0;
    };
    auto run_polish = [&](double pitch0, double roll0) {
      PolishCandidate cand;
      cand.members_p = frozen_points;
      cand.members_l = frozen_lines;
      // The branch pose carries a yaw and translation twist that
      // compensates the prior error; re-fitting them under the started
      // angles first keeps the full polish out of that twisted basin.
      const YawRotationBasis start_basis(GravityPrior{pitch0, roll0});
      const RefineState started =
          RefinePose(cand.members_p, cand.members_l, start_basis, camera,
                     {refined.yaw, refined.t},
                     {opts.refine_iterations, opts.refine_tol});
      cand.state =
          PolishPose(cand.members_p, cand.members_l, camera,
                     {started.yaw, pitch0, roll0, started.t},
                     {opts.refine_iterations, opts.refine_tol});
      // The wide working slack lets outliers into the branch consensus,
      // and a squared fit follows them. Refitting on the best-fitting
      // three quarters twice shakes the heaviest contaminants out before
      // the deflation stages rely on the pose.
      for (int round = 0; round < 2; ++round) {
        const size_t m = cand.members_p.size() + cand.members_l.size();
        const size_t keep_n = std::max<size_t>(6, m - m / 4);
        if (keep_n >= m) continue;
        const Eigen::Matrix3d r_trim = RotationWorldFromCamera(
                                           cand.state.yaw, cand.state.pitch,
                                           cand.state.roll)
                                           .transpose();
        std::vector<std::pair<double, size_t>> ranked;
        ranked.reserve(m);
        for (size_t i = 0; i < cand.members_p.size(); ++i) {
          const auto& pt = cand.members_p[i];
          ranked.push_back(
              {PixelResidual(pt.u, pt.p, r_trim, cand.state.t, camera) /
                   std::max(pt.noise_bound, kMinPixelBound),
               i});
        }
        for (size_t i = 0; i < cand.members_l.size(); ++i) {
          const auto& line = cand.members_l[i];
          ranked.push_back(
              {std::max(PixelResidual(line.u_start, line.p_start, r_trim,
                                      cand.state.t, camera),
                        PixelResidual(line.u_end, line.p_end, r_trim,
                                      cand.state.t, camera)) /
                   std::max(line.noise_bound, kMinPixelBound),
               cand.members_p.size() + i});
        }
        std::sort(ranked.begin(), ranked.end());
        std::vector<PointCorrespondence> trimmed_p;
        std::vector<LineCorrespondence> trimmed_l;
        for (size_t k = 0; k < keep_n && k < ranked.size(); ++k) {
          const size_t idx = ranked[k].second;
          if (idx < cand.members_p.size()) {
            trimmed_p.push_back(cand.members_p[idx]);
          } else {
            trimmed_l.push_back(cand.members_l[idx - cand.members_p.size()]);
          }
        }
        cand.state = PolishPose(trimmed_p, trimmed_l, camera, cand.state,
                                {opts.refine_iterations, opts.refine_tol});
      }
      for (const double keep : {0.5, 0.0}) {
        const Eigen::Matrix3d r_now =
            RotationWorldFromCamera(cand.state.yaw, cand.state.pitch,
                                    cand.state.roll)
                .transpose();
        std::vector<PointCorrespondence> cleaned_points;
        std::vector<LineCorrespondence> cleaned_lines;
        for (size_t i = 0; i < work_points.size(); ++i) {
          PointCorrespondence pt = work_points[i];
          pt.noise_bound = points[i].noise_bound + keep * extra;
          if (WithinPixelBound(pt.u, pt.p, r_now, cand.state.t, camera,
                               kConsensusSlack * pt.noise_bound)) {
            cleaned_points.push_back(pt);
          }
        }
        for (size_t i = 0; i < work_lines.size(); ++i) {
          LineCorrespondence line = work_lines[i];
          line.noise_bound = lines[i].noise_bound + keep * extra;
          if (WithinPixelBound(line.u_start, line.p_start, r_now,
                               cand.state.t, camera,
                               kConsensusSlack * line.noise_bound) &&
              WithinPixelBound(line.u_end, line.p_end, r_now, cand.state.t,
                               camera, kConsensusSlack * line.noise_bound)) {
            cleaned_lines.push_back(line);
          }
        }
        if (cleaned_points.size() + cleaned_lines.size() < 4) break;
        cand.keep = keep;
        cand.members_p = std::move(cleaned_points);
        cand.members_l = std::move(cleaned_lines);
        cand.state = PolishPose(cand.members_p, cand.members_l, camera,
                                cand.state,
                                {opts.refine_iterations, opts.refine_tol});
      }
      const Eigen::Matrix3d r_final =
          RotationWorldFromCamera(cand.state.yaw, cand.state.pitch,
                                  cand.state.roll)
              .transpose();
      double residual_sum = 0.0;
      for (size_t i = 0; i < work_points.size(); ++i) {
        const double res = PixelResidual(points[i].u, points[i].p, r_final,
                                         cand.state.t, camera);
        if (res <= kConsensusSlack *
                       std::max(points[i].noise_bound, kMinPixelBound)) {
          ++cand.screened;
          residual_sum += res;
        }
      }
      for (size_t i = 0; i < work_lines.size(); ++i) {
        const double res =
            std::max(PixelResidual(lines[i].u_start, lines[i].p_start,
                                   r_final, cand.state.t, camera),
                     PixelResidual(lines[i].u_end, lines[i].p_end, r_final,
                                   cand.state.t, camera));
        if (res <= kConsensusSlack *
                       std::max(lines[i].noise_bound, kMinPixelBound)) {
          ++cand.screened;
          residual_sum += res;
        }
      }
      cand.mean_residual =
          cand.screened > 0 ? residual_sum / cand.screened : 0.0;
      return cand;
    };
    PolishCandidate best = run_polish(prior.pitch, prior.roll);
    if (trace != nullptr) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "{\"stage\":\"gravity\",\"start\":0,\"screened\":%d,"
                    "\"keep\":%g,\"members\":%zu}",
                    best.screened, best.keep,
                    best.members_p.size() + best.members_l.size());
      trace->Emit(buf);
    }
    if (sigma_rad > 0.0) {
      const double offsets[4][2] = {{sigma_rad, 0.0},
                                    {-sigma_rad, 0.0},
                                    {0.0, sigma_rad},
                                    {0.0, -sigma_rad}};
      int start_idx = 0;
      for (const auto& off : offsets) {
        PolishCandidate cand =
            run_polish(prior.pitch + off[0], prior.roll + off[1]);
        ++start_idx;
        if (trace != nullptr) {
          char buf[160];
          std::snprintf(buf, sizeof(buf),
                        "{\"stage\":\"gravity\",\"start\":%d,\"screened\":%d,"
                        "\"keep\":%g,\"members\":%zu}",
                        start_idx, cand.screened, cand.keep,
                        cand.members_p.size() + cand.members_l.size());
          trace->Emit(buf);
        }
        if (cand.screened > best.screened ||
            (cand.screened == best.screened &&
             cand.mean_residual < best.mean_residual)) {
          best = std::move(cand);
        }
      }
    }
    for (size_t i = 0; i < work_points.size(); ++i) {
      work_points[i].noise_bound = points[i].noise_bound + best.keep * extra;
    }
    for (size_t i = 0; i < work_lines.size(); ++i) {
      work_lines[i].noise_bound = lines[i].noise_bound + best.keep * extra;
    }
    frozen_points = std::move(best.members_p);
    frozen_lines = std::move(best.members_l);
    yaw = best.state.yaw;
    pitch = best.state.pitch;
    roll = best.state.roll;
    t = best.state.t;
  }

  // The winning branch fitted a subset; entities whose residual at that
  // pose sits just outside the branch slack still belong to the consensus
  // once the fit absorbs them. Alternating a full-input screen with a
  // refit converges in a round or two and pulls the pose onto the
  // complete support before the final polish.
  constexpr int kExpandRounds = 2;
  {
    const YawRotationBasis expand_basis(GravityPrior{pitch, roll});
    for (int round = 0; round < kExpandRounds; ++round) {
      const Eigen::Matrix3d r_now = expand_basis.Rotation(yaw);
      std::vector<PointCorrespondence> grown_points;
      std::vector<LineCorrespondence> grown_lines;
      for (const auto& pt : work_points) {
        if (WithinPixelBound(pt.u, pt.p, r_now, t, camera,
                             kConsensusSlack * pt.noise_bound)) {
          grown_points.push_back(pt);
        }
      }
      for (const auto& line : work_lines) {
        if (WithinPixelBound(line.u_start, line.p_start, r_now, t, camera,
                             kConsensusSlack * line.noise_bound) &&
            WithinPixelBound(line.u_end, line.p_end, r_now, t, camera,
                             kConsensusSlack * line.noise_bound)) {
          grown_lines.push_back(line);
        }
      }
      if (grown_points.size() + grown_lines.size() <=
          frozen_points.size() + frozen_lines.size()) {
        break;
      }
      frozen_points = std::move(grown_points);
      frozen_lines = std::move(grown_lines);
      const RefineState grown =
          RefinePose(frozen_points, frozen_lines, expand_basis, camera,
                     {yaw, t}, {opts.refine_iterations, opts.refine_tol});
      yaw = grown.yaw;
      t = grown.t;
    }
  }

  // With bounded noise the worst scaled residual is a sharper location
  // statistic than the squared sum, but only once the member count
  // comfortably exceeds the degrees of freedom; near-minimal sets stay
  // with the least-squares fit. Only members strictly inside their bound
  // join, so a borderline vote member cannot steer the worst-case fit.
  constexpr int kMinimaxMembers = 6;
  {
    const YawRotationBasis final_basis(GravityPrior{pitch, roll});
    const Eigen::Matrix3d r_now = final_basis.Rotation(yaw);
    std::vector<PointCorrespondence> core_points;
    std::vector<LineCorrespondence> core_lines;
    for (const auto& pt : frozen_points) {
      if (PixelResidual(pt.u, pt.p, r_now, t, camera) <=
          std::max(pt.noise_bound, kMinPixelBound)) {
        core_points.push_back(pt);
      }
    }
    for (const auto& line : frozen_lines) {
      if (std::max(
              PixelResidual(line.u_start, line.p_start, r_now, t, camera),
              PixelResidual(line.u_end, line.p_end, r_now, t, camera)) <=
          std::max(line.noise_bound, kMinPixelBound)) {
        core_lines.push_back(line);
      }
    }
    if (static_cast<int>(core_points.size() + core_lines.size()) >=
        kMinimaxMembers) {
      const RefineState better = RefinePoseMinimax(
          core_points, core_lines, final_basis, camera, {yaw, t},
          {opts.refine_iterations, opts.refine_tol});
      yaw = better.yaw;
      t = better.t;
    }
  }
  const auto t_refine = Clock::now();

  Pose pose;
  pose.R = RotationWorldFromCamera(yaw, pitch, roll).transpose();
  pose.t = t;

  // The final screen scans every input correspondence at the refined pose,
  // so true inliers the voting stage fragmented away rejoin the consensus.
  // The slack factor absorbs the least-squares shift of the refined pose
  // from the noise-free optimum, which a hard bound test would charge
  // against recall.
  Localization& loc = report.loc;
  for (const auto& pt : work_points) {
    if (WithinPixelBound(pt.u, pt.p, pose.R, pose.t, camera,
                         kConsensusSlack * pt.noise_bound)) {
      loc.point_ids.push_back(pt.id);
    }
  }
  for (const auto& line : work_lines) {
    if (WithinPixelBound(line.u_start, line.p_start, pose.R, pose.t, camera,
                         kConsensusSlack * line.noise_bound) &&
        WithinPixelBound(line.u_end, line.p_end, pose.R, pose.t, camera,
                         kConsensusSlack * line.noise_bound)) {
      loc.line_ids.push_back(line.id);
    }
  }
  loc.cardinality =
      static_cast<int>(loc.point_ids.size() + loc.line_ids.size());
  // A pose has four free parameters here; a smaller consensus than that
  // cannot corroborate it, so such a result is reported as no consensus
  // rather than as a localization. Tiny inputs keep their natural ceiling.
  const int total_entities =
      static_cast<int>(work_points.size() + work_lines.size());
  if (loc.cardinality < std::min(4, total_entities)) {
    report.status = SolveStatus::kNoConsensus;
    return report;
  }

  loc.pose = pose;
  loc.yaw = WrapAngle(yaw);
  loc.pitch = pitch;
  loc.roll = roll;
  loc.timings.tims = Seconds(t_start, t_tims);
  loc.timings.ransac = Seconds(t_tims, t_ransac);
  loc.timings.bnb = Seconds(t_ransac, t_bnb);
  loc.timings.voting = Seconds(t_bnb, t_vote);
  loc.timings.refine = Seconds(t_vote, t_refine);
  loc.timings.total = Seconds(t_start, Clock::now());
  report.status = SolveStatus::kOk;

  if (trace != nullptr) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "{\"stage\":\"solve\",\"yaw\":%.17g,\"cardinality\":%d}",
                  loc.yaw, loc.cardinality);
    trace->Emit(buf);
  }
  return report;
}

}  // namespace cmaxloc
