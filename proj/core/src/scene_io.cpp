// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/scene_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cmaxloc {

namespace {

using OrderedJson = nlohmann::ordered_json;

OrderedJson Vec3ToJson(const Eigen::Vector3d& v) {
  return OrderedJson::array({v.x(), v.y(), v.z()});
}

OrderedJson Vec2ToJson(const Eigen::Vector2d& v) {
  return OrderedJson::array({v.x(), v.y()});
}

Eigen::Vector3d Vec3FromJson(const OrderedJson& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

Eigen::Vector2d Vec2FromJson(const OrderedJson& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void WriteFile(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

const char* StatusName(SolveStatus status) {
  switch (status) {
    case SolveStatus::kOk:
      return "ok";
    case SolveStatus::kInsufficientInput:
      return "insufficient_input";
    case SolveStatus::kNoConsensus:
      return "no_consensus";
  }
  return "unknown";
}

}  // namespace

void SaveScene(const SyntheticScene& scene, const std::string& path) {
  OrderedJson j;
  j["schema"] = kSceneSchema;
  j["seed"] = scene.seed;
  j["camera"] = {{"fx", scene.camera.fx},
                 {"fy", scene.camera.fy},
                 {"cx", scene.camera.cx},
                 {"cy", scene.camera.cy},
                 {"width", scene.image_width},
                 {"height", scene.image_height}};
  j["prior"] = {{"pitch", scene.prior.pitch}, {"roll", scene.prior.roll}};
  j["noise_bound"] = scene.pixel_noise_bound;
  OrderedJson points = OrderedJson::array();
  for (size_t i = 0; i < scene.points.size(); ++i) {
    const auto& pt = scene.points[i];
    points.push_back({{"id", pt.id},
                      {"p", Vec3ToJson(pt.p)},
                      {"u", Vec2ToJson(pt.u)},
                      {"noise_bound", pt.noise_bound},
                      {"inlier", scene.point_inlier[i] != 0}});
  }
  j["points"] = std::move(points);
  OrderedJson lines = OrderedJson::array();
  for (size_t k = 0; k < scene.lines.size(); ++k) {
    const auto& line = scene.lines[k];
    lines.push_back({{"id", line.id},
                     {"p_start", Vec3ToJson(line.p_start)},
                     {"p_end", Vec3ToJson(line.p_end)},
                     {"u_start", Vec2ToJson(line.u_start)},
                     {"u_end", Vec2ToJson(line.u_end)},
                     {"noise_bound", line.noise_bound},
                     {"inlier", scene.line_inlier[k] != 0}});
  }
  j["lines"] = std::move(lines);
  j["truth"] = {{"yaw", scene.true_yaw},
                {"pitch", scene.true_pitch},
                {"roll", scene.true_roll},
                {"t", Vec3ToJson(scene.true_pose.t)}};
  WriteFile(path, j.dump(2) + "\n");
}

SyntheticScene LoadScene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scene: " + path);
  OrderedJson j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scene parse error in " + path + ": " + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != kSceneSchema) {
      throw IoError("unsupported scene schema in " + path);
    }
    SyntheticScene scene;
    scene.seed = j.at("seed").get<uint64_t>();
    const auto& cam = j.at("camera");
    scene.camera = {cam.at("fx").get<double>(), cam.at("fy").get<double>(),
                    cam.at("cx").get<double>(), cam.at("cy").get<double>()};
    scene.image_width = cam.at("width").get<int>();
    scene.image_height = cam.at("height").get<int>();
    scene.prior = {j.at("prior").at("pitch").get<double>(),
                   j.at("prior").at("roll").get<double>()};
    scene.pixel_noise_bound = j.at("noise_bound").get<double>();
    for (const auto& item : j.at("points")) {
      PointCorrespondence pt;
      pt.id = item.at("id").get<int>();
      pt.p = Vec3FromJson(item.at("p"));
      pt.u = Vec2FromJson(item.at("u"));
      pt.noise_bound = item.at("noise_bound").get<double>();
      scene.points.push_back(pt);
      scene.point_inlier.push_back(item.at("inlier").get<bool>() ? 1 : 0);
    }
    for (const auto& item : j.at("lines")) {
      LineCorrespondence line;
      line.id = item.at("id").get<int>();
      line.p_start = Vec3FromJson(item.at("p_start"));
      line.p_end = Vec3FromJson(item.at("p_end"));
      line.u_start = Vec2FromJson(item.at("u_start"));
      line.u_end = Vec2FromJson(item.at("u_end"));
      line.noise_bound = item.at("noise_bound").get<double>();
      scene.lines.push_back(line);
      scene.line_inlier.push_back(item.at("inlier").get<bool>() ? 1 : 0);
    }
    const auto& truth = j.at("truth");
    scene.true_yaw = truth.at("yaw").get<double>();
    scene.true_pitch = truth.at("pitch").get<double>();
    scene.true_roll = truth.at("roll").get<double>();
    scene.true_pose.t = Vec3FromJson(truth.at("t"));
    scene.true_pose.R =
        RotationWorldFromCamera(scene.true_yaw, scene.true_pitch,
                                scene.true_roll)
            .transpose();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scene field error in " + path + ": " + e.what());
  }
}

std::string ResultToJson(const SolveReport& report, bool include_timings) {
  OrderedJson j;
  j["schema"] = kResultSchema;
  j["status"] = StatusName(report.status);
  if (report.status == SolveStatus::kOk) {
    const Localization& loc = report.loc;
    j["yaw"] = loc.yaw;
    j["pitch"] = loc.pitch;
    j["roll"] = loc.roll;
    OrderedJson rows = OrderedJson::array();
    for (int r = 0; r < 3; ++r) {
      rows.push_back(OrderedJson::array(
          {loc.pose.R(r, 0), loc.pose.R(r, 1), loc.pose.R(r, 2)}));
    }
    j["pose"] = {{"R", std::move(rows)}, {"t", Vec3ToJson(loc.pose.t)}};
    j["consensus"] = {{"points", loc.point_ids},
                      {"lines", loc.line_ids},
                      {"cardinality", loc.cardinality}};
    j["bnb"] = {{"nodes_expanded", loc.bnb_stats.nodes_expanded},
                {"nodes_pruned", loc.bnb_stats.nodes_pruned},
                {"bound_evaluations", loc.bnb_stats.bound_evaluations}};
    if (include_timings) {
      j["timings"] = {{"tims", loc.timings.tims},
                      {"ransac", loc.timings.ransac},
                      {"bnb", loc.timings.bnb},
                      {"voting", loc.timings.voting},
                      {"refine", loc.timings.refine},
                      {"total", loc.timings.total}};
    }
  }
  return j.dump(2) + "\n";
}

void WriteSummaryCsv(const SweepResult& result, const std::string& path) {
  std::ostringstream out;
  out << "axis,value";
  for (SolverKind solver : result.solvers) {
    const std::string_view name = SolverName(solver);
    for (const char* col :
         {"success_rate", "solved", "successes", "mean_dt", "mean_dr_deg",
          "mean_precision", "mean_recall", "mean_cardinality",
          "median_cardinality", "generation_failures"}) {
      out << "," << name << "_" << col;
    }
  }
  out << "\n";
  const size_t n_solvers = result.solvers.size();
  for (size_t cell = 0; cell < result.values.size(); ++cell) {
    out << AxisName(result.axis) << "," << FormatDouble(result.values[cell]);
    for (size_t s = 0; s < n_solvers; ++s) {
      const CellStats& stats = result.cells[cell * n_solvers + s];
      out << "," << FormatDouble(stats.success_rate) << "," << stats.solved
          << "," << stats.successes << "," << FormatDouble(stats.mean_dt)
          << "," << FormatDouble(stats.mean_dr_deg) << ","
          << FormatDouble(stats.mean_precision) << ","
          << FormatDouble(stats.mean_recall) << ","
          << FormatDouble(stats.mean_cardinality) << ","
          << FormatDouble(stats.median_cardinality) << ","
          << stats.generation_failures;
    }
    out << "\n";
  }
  WriteFile(path, out.str());
}

void WriteTrialsJsonl(const SweepResult& result, const std::string& path) {
  std::ostringstream out;
  for (const TrialRecord& rec : result.trials) {
    OrderedJson j;
    j["cell"] = rec.cell;
    j["value"] = rec.value;
    j["trial"] = rec.trial;
    j["solver"] = SolverName(rec.solver);
    j["scene_seed"] = rec.scene_seed;
    j["generation_failed"] = rec.generation_failed;
    j["solved"] = rec.metrics.solved;
    j["success"] = rec.metrics.success;
    j["dt"] = rec.metrics.dt;
    j["dr_deg"] = rec.metrics.dr_deg;
    j["precision"] = rec.metrics.precision;
    j["recall"] = rec.metrics.recall;
    j["cardinality"] = rec.metrics.cardinality;
    out << j.dump() << "\n";
  }
  WriteFile(path, out.str());
}

void WriteTimingsCsv(const SweepResult& result, const std::string& path) {
  std::ostringstream out;
  out << "axis,value,solver,stage,mean_seconds\n";
  const size_t n_solvers = result.solvers.size();
  for (size_t cell = 0; cell < result.values.size(); ++cell) {
    for (size_t s = 0; s < n_solvers; ++s) {
      const CellStats& stats = result.cells[cell * n_solvers + s];
      const StageTimings& t = stats.mean_timings;
      const std::pair<const char*, double> stages[] = {
          {"tims", t.tims},     {"ransac", t.ransac}, {"bnb", t.bnb},
          {"voting", t.voting}, {"refine", t.refine}, {"total", t.total}};
      for (const auto& [stage, seconds] : stages) {
        out << AxisName(result.axis) << ","
            << FormatDouble(result.values[cell]) << ","
            << SolverName(result.solvers[s]) << "," << stage << ","
            << FormatDouble(seconds) << "\n";
      }
    }
  }
  WriteFile(path, out.str());
}

void WriteCompareCsv(const SweepResult& result, const std::string& path) {
  std::ostringstream out;
  out << "solver,runs,solved,success_rate,mean_dt,mean_dr_deg,"
         "mean_precision,mean_recall,mean_cardinality,median_cardinality\n";
  const size_t n_solvers = result.solvers.size();
  for (size_t cell = 0; cell < result.values.size(); ++cell) {
    for (size_t s = 0; s < n_solvers; ++s) {
      const CellStats& stats = result.cells[cell * n_solvers + s];
      out << SolverName(result.solvers[s]) << "," << stats.runs << ","
          << stats.solved << "," << FormatDouble(stats.success_rate) << ","
          << FormatDouble(stats.mean_dt) << ","
          << FormatDouble(stats.mean_dr_deg) << ","
          << FormatDouble(stats.mean_precision) << ","
          << FormatDouble(stats.mean_recall) << ","
          << FormatDouble(stats.mean_cardinality) << ","
          << FormatDouble(stats.median_cardinality) << "\n";
    }
  }
  WriteFile(path, out.str());
}

}  // namespace cmaxloc
