// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <stdexcept>
#include <string>

#include "cmaxloc/pipeline.hpp"
#include "cmaxloc/synthbench.hpp"

namespace cmaxloc {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kSceneSchema = "cmaxloc/scene/v1";
inline constexpr const char* kResultSchema = "cmaxloc/result/v1";

// JSON scene files. Saving and loading round-trip every field, and equal
// scenes serialize to identical bytes. Throws IoError on unreadable,
// unparsable, or wrong-schema input.
void SaveScene(const SyntheticScene& scene, const std::string& path);
SyntheticScene LoadScene(const std::string& path);

// Solve result as a JSON document. Timings are wall-clock and therefore
// never byte-stable; they are opt-in so default output stays identical
// across reruns.
std::string ResultToJson(const SolveReport& report, bool include_timings);

// Sweep outputs: a wide per-cell summary (one row per swept value, one
// column group per solver), a per-trial JSON-lines file, and a separate
// wall-clock timing table. Summary and trials are byte-stable for a given
// seed; the timing sidecar is not.
void WriteSummaryCsv(const SweepResult& result, const std::string& path);
void WriteTrialsJsonl(const SweepResult& result, const std::string& path);
void WriteTimingsCsv(const SweepResult& result, const std::string& path);

// One row per solver, for head-to-head comparisons at a fixed setting.
void WriteCompareCsv(const SweepResult& result, const std::string& path);

}  // namespace cmaxloc
