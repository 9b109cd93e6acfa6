#include "tpose/synthetic.hpp"

#include <cmath>
#include <random>
#include <string>

namespace tpose {

namespace {

double parse_hms(std::string_view text) {
  const auto parts = split(trim(text), ':');
  if (parts.size() < 2 || parts.size() > 3) {
    throw ConfigError("schedule: expected HH:MM or HH:MM:SS, got '" + std::string(text) + "'");
  }
  const double h = parse_double(parts[0], "hour");
  const double m = parse_double(parts[1], "minute");
  const double s = parts.size() == 3 ? parse_double(parts[2], "second") : 0.0;
  const double total = h * 3600.0 + m * 60.0 + s;
  if (total < 0.0 || total > kSecondsPerDay) {
    throw ConfigError("schedule: time of day out of range '" + std::string(text) + "'");
  }
  return total;
}

Route parse_route(std::string_view text) {
  Route route;
  for (auto point : split_ws(text)) {
    const auto xy = split(point, ',');
    if (xy.size() != 2) {
      throw ConfigError("waypoints: expected 'x,y', got '" + std::string(point) + "'");
    }
    route.emplace_back(parse_double(xy[0], "waypoint x"), parse_double(xy[1], "waypoint y"));
  }
  return route;
}

ScheduleEntry parse_schedule(std::string_view text) {
  const auto pieces = split_ws(text);
  if (pieces.size() != 2) {
    throw ConfigError("schedule: expected 'BEGIN-END routes', got '" + std::string(text) + "'");
  }
  const auto window = split(pieces[0], '-');
  if (window.size() != 2) {
    throw ConfigError("schedule: expected BEGIN-END, got '" + std::string(pieces[0]) + "'");
  }
  ScheduleEntry e;
  e.begin_hms = parse_hms(window[0]);
  e.end_hms = parse_hms(window[1]);
  for (auto idx : split(pieces[1], ',')) {
    const auto v = parse_int(idx, "route index");
    if (v < 0) throw ConfigError("schedule: negative route index");
    e.routes.push_back(static_cast<std::size_t>(v));
  }
  return e;
}

/// Position and heading at arc length `s` along `route`.
std::pair<Eigen::Vector2d, double> walk(const Route& route, const std::vector<double>& cumulative, double s) {
  std::size_t seg = 0;
  while (seg + 2 < route.size() && cumulative[seg + 1] <= s) ++seg;
  // Skip degenerate segments when choosing the heading.
  std::size_t heading_seg = seg;
  while (heading_seg + 2 < route.size() && (route[heading_seg + 1] - route[heading_seg]).norm() == 0.0) {
    ++heading_seg;
  }
  const Eigen::Vector2d a = route[seg];
  const Eigen::Vector2d b = route[seg + 1];
  const double len = cumulative[seg + 1] - cumulative[seg];
  const double alpha = len > 0.0 ? std::clamp((s - cumulative[seg]) / len, 0.0, 1.0) : 0.0;
  const Eigen::Vector2d dir = route[heading_seg + 1] - route[heading_seg];
  return {a + alpha * (b - a), std::atan2(dir.y(), dir.x())};
}

}  // namespace

void ScenarioConfig::validate() const {
  if (walkers < 1) throw ConfigError("walkers must be >= 1");
  if (routes.empty()) throw ConfigError("at least one 'waypoints' route is required");
  for (std::size_t r = 0; r < routes.size(); ++r) {
    if (routes[r].size() < 2) throw ConfigError("route " + std::to_string(r) + " needs at least 2 waypoints");
    double length = 0.0;
    for (std::size_t i = 1; i < routes[r].size(); ++i) length += (routes[r][i] - routes[r][i - 1]).norm();
    if (!(length > 0.0)) throw ConfigError("route " + std::to_string(r) + " has zero length");
  }
  if (!(speed_min > 0.0) || !(speed_max >= speed_min)) throw ConfigError("need 0 < speed_min <= speed_max");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(interval > 0.0)) throw ConfigError("interval must be > 0");
  if (days < 1) throw ConfigError("days must be >= 1");
  if (!(waypoint_jitter >= 0.0)) throw ConfigError("waypoint_jitter must be >= 0");
  for (const auto& e : schedule) {
    if (!(e.begin_hms < e.end_hms)) throw ConfigError("schedule window must have begin < end");
    if (e.routes.empty()) throw ConfigError("schedule entry lists no routes");
    for (auto r : e.routes) {
      if (r >= routes.size()) throw ConfigError("schedule references unknown route " + std::to_string(r));
    }
  }
}

ScenarioConfig parse_scenario(const std::vector<KeyValue>& entries) {
  ScenarioConfig cfg;
  for (const auto& kv : entries) {
    try {
      if (kv.key == "walkers") {
        cfg.walkers = static_cast<int>(parse_int(kv.value, kv.key));
      } else if (kv.key == "waypoints") {
        cfg.routes.push_back(parse_route(kv.value));
      } else if (kv.key == "speed_min") {
        cfg.speed_min = parse_double(kv.value, kv.key);
      } else if (kv.key == "speed_max") {
        cfg.speed_max = parse_double(kv.value, kv.key);
      } else if (kv.key == "noise_sigma") {
        cfg.noise_sigma = parse_double(kv.value, kv.key);
      } else if (kv.key == "interval") {
        cfg.interval = parse_double(kv.value, kv.key);
      } else if (kv.key == "start_epoch") {
        cfg.start_epoch = parse_double(kv.value, kv.key);
      } else if (kv.key == "days") {
        cfg.days = static_cast<int>(parse_int(kv.value, kv.key));
      } else if (kv.key == "waypoint_jitter") {
        cfg.waypoint_jitter = parse_double(kv.value, kv.key);
      } else if (kv.key == "schedule") {
        cfg.schedule.push_back(parse_schedule(kv.value));
      } else {
        throw ConfigError("unknown key '" + kv.key + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) { return parse_scenario(load_key_values(path)); }

Dataset generate_synthetic(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> day_dist(0, config.days - 1);
  std::uniform_real_distribution<double> hms_dist(0.0, kSecondsPerDay);
  std::uniform_real_distribution<double> speed_dist(config.speed_min, config.speed_max);
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  Dataset ds;
  ds.interval = config.interval;
  for (int w = 0; w < config.walkers; ++w) {
    const int day = day_dist(rng);
    const double hms = hms_dist(rng);

    std::vector<std::size_t> candidates;
    for (const auto& e : config.schedule) {
      if (hms >= e.begin_hms && hms < e.end_hms) {
        candidates = e.routes;
        break;
      }
    }
    if (candidates.empty()) {
      for (std::size_t r = 0; r < config.routes.size(); ++r) candidates.push_back(r);
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    Route route = config.routes[candidates[pick(rng)]];
    if (config.waypoint_jitter > 0.0) {
      for (auto& p : route) {
        p.x() += config.waypoint_jitter * unit_normal(rng);
        p.y() += config.waypoint_jitter * unit_normal(rng);
      }
    }
    const double speed = speed_dist(rng);

    std::vector<double> cumulative(route.size(), 0.0);
    for (std::size_t i = 1; i < route.size(); ++i) {
      cumulative[i] = cumulative[i - 1] + (route[i] - route[i - 1]).norm();
    }
    const double total = cumulative.back();

    Trajectory traj;
    traj.track_id = "w" + std::to_string(w);
    traj.interval = config.interval;
    const double t0 = config.start_epoch + static_cast<double>(day) * kSecondsPerDay + hms;
    for (std::size_t k = 0;; ++k) {
      const double s = speed * static_cast<double>(k) * config.interval;
      if (s > total + 1e-9) break;
      auto [pos, heading] = walk(route, cumulative, std::min(s, total));
      if (config.noise_sigma > 0.0) {
        pos.x() += config.noise_sigma * unit_normal(rng);
        pos.y() += config.noise_sigma * unit_normal(rng);
      }
      traj.samples.push_back(
          TimestampedPose{t0 + static_cast<double>(k) * config.interval, make_pose(pos.x(), pos.y(), heading)});
    }
    ds.trajectories.push_back(std::move(traj));
  }
  return ds;
}

}  // namespace tpose
