#pragma once

// File formats: the dataset container (text manifest + little-endian float32
// blocks), benchmark CSV/table/episode-log emission, and key-value configs.
// Every emitted file embeds the seed and config that produced it.

#include <map>
#include <string>
#include <vector>

#include "servo/control.hpp"
#include "servo/sim.hpp"

namespace servo {

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// `key = value` lines, '#' comments. Flags are applied on top by the CLI.
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Benchmark outputs. The CSV and table are deterministic; wall-clock timing is
// intentionally kept out of them.
void write_report_csv(const BenchmarkReport& report, const std::string& path);
void write_report_table(const BenchmarkReport& report, const std::string& path);
void write_episode_log(const BenchmarkReport& report, const std::string& path);

// Replays a step-level episode log back into episode records; used by the
// report command to recompute aggregates from raw data.
std::vector<BenchEpisode> parse_episode_log(const std::string& path, double* dt_out = nullptr);

void write_train_curve_csv(const TrainCurve& curve, const std::map<std::string, std::string>& provenance,
                           const std::string& path, int epoch_offset = 0);

void write_ablation_csv(const FusionAblationTable& table,
                        const std::map<std::string, std::string>& provenance,
                        const std::string& path);
std::string format_ablation_table(const FusionAblationTable& table);
std::string format_report_table(const BenchmarkReport& report);

}  // namespace servo
