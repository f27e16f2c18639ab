#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedunlearn/config.hpp"
#include "fedunlearn/experiment.hpp"

namespace fedunlearn {

/// One row per round, header first. Accuracies are fractions printed with
/// 12 significant digits. Client columns are the union over all logs; a
/// client missing from a round leaves its cell empty.
void emit_csv(std::span<const MetricsLog> logs, const std::string& path);
void emit_csv(const MetricsLog& log, const std::string& path);

/// Inverse of emit_csv for the columns it writes. Runs come back in the order
/// their run_id first appears; only the CSV-visible metadata is filled in.
std::vector<MetricsLog> parse_metrics_csv(const std::string& path);

/// Run metadata plus the full config echo, as pretty JSON.
void emit_metadata(std::span<const MetricsLog> logs, const ExperimentConfig& config,
                   const std::string& path, const std::string& selection = {});

}  // namespace fedunlearn
