// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <ostream>
#include <string>

namespace cmaxloc {

// Line-oriented diagnostic channel. Solver stages emit one JSON object per
// line describing bound evaluations, pruning decisions and vote outcomes.
// The sink is optional everywhere; passing nullptr disables tracing.
class TraceSink {
 public:
  explicit TraceSink(std::ostream& os) : os_(&os) {}

  void Emit(const std::string& json_line) {
    (*os_) << json_line << '\n';
    ++lines_;
  }

  int64_t lines() const { return lines_; }

 private:
  std::ostream* os_;
  int64_t lines_ = 0;
};

}  // namespace cmaxloc
