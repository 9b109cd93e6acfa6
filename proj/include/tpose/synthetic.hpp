// Waypoint-following walkers for desk-scale experiments.
#pragma once

#include "tpose/text.hpp"
#include "tpose/trajectory.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tpose {

using Route = std::vector<Eigen::Vector2d>;

/// Walkers whose start time-of-day falls in [begin_hms, end_hms) pick one of `routes`.
struct ScheduleEntry {
  double begin_hms = 0.0;
  double end_hms = kSecondsPerDay;
  std::vector<std::size_t> routes;
};

struct ScenarioConfig {
  int walkers = 1;
  std::vector<Route> routes;
  double speed_min = 1.0;
  double speed_max = 1.0;
  double noise_sigma = 0.0;
  double interval = 0.4;
  /// Unix time of day 0 (default 2017-01-01T00:00:00Z).
  double start_epoch = 1483228800.0;
  int days = 1;
  /// Per-walker Gaussian offset applied to every waypoint of its route.
  double waypoint_jitter = 0.0;
  std::vector<ScheduleEntry> schedule;

  void validate() const;
};

/// Keys: walkers, waypoints (repeatable, "x,y x,y ..."), speed_min, speed_max,
/// noise_sigma, interval, start_epoch, days, waypoint_jitter,
/// schedule (repeatable, "HH:MM[:SS]-HH:MM[:SS] i,j,...").
ScenarioConfig parse_scenario(const std::vector<KeyValue>& entries);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Constant-speed walkers along their routes with Gaussian position noise;
/// yaw follows the heading of the current route segment.
Dataset generate_synthetic(const ScenarioConfig& config, std::uint64_t seed);

}  // namespace tpose
