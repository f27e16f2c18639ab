#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedunlearn/experiment.hpp"

namespace fedunlearn {

struct PlotOptions {
  bool percent = false;  // y axis 0-100 instead of 0-1
  double width = 640;
  double height = 400;
};

/// Writes <dir>/<dataset>_beta<b>_global.svg and ..._target.svg for every
/// (dataset, beta) pair found in `logs`. One series per strategy/regime label,
/// averaged over seeds; dashed verticals mark phase boundaries. Returns the
/// files written.
std::vector<std::string> emit_plots(std::span<const MetricsLog> logs, const std::string& dir,
                                    const PlotOptions& options = {});

/// Label used for a run's series, e.g. "SATA-NTK".
std::string series_label(const RunMetadata& meta);

}  // namespace fedunlearn
