#include "helpers.hpp"

#include "tpose/metrics.hpp"

#include <doctest.h>

#include <numbers>
#include <sstream>

using namespace tpose;
using namespace tpose::testing;

namespace {

Eigen::Vector2d q_deg(double deg) { return quaternion_from_yaw(deg * std::numbers::pi / 180.0); }

Eigen::Vector2d rotate(const Eigen::Vector2d& q, double yaw) {
  // Composition of two yaw-only quaternions.
  const Eigen::Vector2d r = quaternion_from_yaw(yaw);
  return {q.y() * r.x() + q.x() * r.y(), q.y() * r.y() - q.x() * r.x()};
}

Dataset lines(int count, std::size_t length, double dt) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    ds.trajectories.push_back(straight_line("l" + std::to_string(i), length, dt, 0.7 + 0.2 * i,
                                            kEpoch2017 + 30000.0 + 100.0 * i, i));
  }
  ds.interval = dt;
  return ds;
}

ModelParams model_for(const Dataset& ds) {
  ModelParams p = small_model(3, 3, 8);
  p.interval = ds.interval;
  p.encoding.norm = fit_norm_stats(ds, true);
  p.encoding.epoch_day = static_cast<std::int64_t>(kEpoch2017 / kSecondsPerDay);
  return p;
}

}  // namespace

TEST_CASE("ade examples") {
  CHECK(ade({{3, 4}, {1, 1}}, {{0, 0}, {1, 1}}) == 2.5);
  CHECK(ade({{0, 1}}, {{0, 0}}) == 1.0);
  CHECK(ade({{1, 2}, {3, -4}}, {{1, 2}, {3, -4}}) == 0.0);
  CHECK(ade({{1, 2}}, {{1, 2.000001}}) > 0.0);
  CHECK_THROWS_AS(ade({{0, 0}}, {{0, 0}, {1, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(ade({}, {}), std::invalid_argument);
}

TEST_CASE("aede examples") {
  CHECK(std::abs(aede({q_deg(10)}, {q_deg(350)}) - 20.0) < 1e-9);
  const double s = std::sin(std::numbers::pi / 4);
  CHECK(aede({{0, 1}}, {{s, s}}) == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(aede({q_deg(37)}, {q_deg(37)}) == 0.0);
  CHECK(aede({q_deg(0), q_deg(0)}, {q_deg(180), q_deg(90)}) == doctest::Approx(135.0));
  CHECK_THROWS_AS(aede({q_deg(0)}, {}), std::invalid_argument);
}

TEST_CASE("aede: range, sign flips and global rotation on random pairs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d a = quaternion_from_yaw(yaw(rng)), b = quaternion_from_yaw(yaw(rng));
    const double base = aede({a}, {b});
    CHECK(base >= 0.0);
    CHECK(base <= 180.0 + 1e-9);
    CHECK(std::abs(aede({-a}, {b}) - base) < 1e-9);
    CHECK(std::abs(aede({a}, {-b}) - base) < 1e-9);
    const double r = yaw(rng);
    CHECK(std::abs(aede({rotate(a, r)}, {rotate(b, r)}) - base) < 1e-9);
  }
}

TEST_CASE("constant-velocity baseline") {
  const auto obs = [](std::vector<Eigen::Vector2d> ps) {
    std::vector<TimestampedPose> out;
    for (std::size_t k = 0; k < ps.size(); ++k) out.push_back({double(k), Pose3DOF{ps[k].x(), ps[k].y(), 0, 1}});
    return out;
  };
  CHECK(constant_velocity_baseline(obs({{0, 0}, {1, 0}}), 3) == Positions{{2, 0}, {3, 0}, {4, 0}});
  CHECK(constant_velocity_baseline(obs({{5, 5}, {2, 2}, {2, 2}}), 2) == Positions{{2, 2}, {2, 2}});
  CHECK(constant_velocity_baseline(obs({{0, 0}, {1, 2}}), 1) == Positions{{2, 4}});
  CHECK_THROWS_AS(constant_velocity_baseline(obs({{0, 0}}), 1), std::invalid_argument);
}

TEST_CASE("baseline scores zero on noise-free straight lines") {
  const Dataset ds = lines(3, 20, 0.4);
  const EvalReport r = evaluate_baseline(ds, EvalConfig{});
  REQUIRE(r.ade.size() == 9);
  for (std::size_t k = 0; k < 9; ++k) {
    CHECK(r.ade[k] == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(r.aede[k] == 0.0);
    CHECK(r.windows[k] == 3 * (20 - 5 - (k + 1) + 1));
  }
  CHECK_THROWS_AS(evaluate_baseline(ds, EvalConfig{1}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_baseline(lines(1, 6, 0.4), EvalConfig{5, {2}}), EvaluationError);
}

TEST_CASE("evaluate: one row per horizon and prefix consistency") {
  const Dataset ds = lines(3, 16, 0.4);
  const ModelParams p = model_for(ds);
  const EvalReport full = evaluate(p, ds, EvalConfig{4, {1, 2, 3, 6}});
  CHECK(full.horizons == std::vector<int>{1, 2, 3, 6});
  CHECK(full.ade.size() == 4);
  CHECK(full.interval == 0.4);
  for (double v : full.ade) CHECK(v >= 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const EvalReport one = evaluate(p, ds, EvalConfig{4, {full.horizons[i]}});
    CHECK(one.ade[0] == full.ade[i]);
    CHECK(one.aede[0] == full.aede[i]);
    CHECK(one.windows[0] == full.windows[i]);
  }
  CHECK_THROWS_AS(evaluate(p, ds, EvalConfig{4, {1}, 1.0}), EvaluationError);
}

TEST_CASE("evaluate refuses relative timestamps for time-aware models") {
  Dataset ds = lines(2, 12, 0.4);
  const ModelParams p = model_for(ds);
  for (auto& t : ds.trajectories) {
    for (auto& s : t.samples) s.t -= kEpoch2017;
  }
  CHECK_THROWS_AS(evaluate(p, ds, EvalConfig{3, {1}}), EvaluationError);
}

TEST_CASE("grid: shape, non-negativity and files") {
  const Dataset ds = lines(2, 14, 0.4);
  const ModelParams p = model_for(ds);
  const GridReport g = evaluate_grid(p, ds, 4, 5);
  CHECK(g.ade.rows() == 4);
  CHECK(g.ade.cols() == 5);
  CHECK(g.ade.minCoeff() >= 0.0);
  CHECK(g.windows(0, 0) == 2 * (14 - 1));
  CHECK(g.windows(3, 4) == 2 * (14 - 9 + 1));
  // The grid cell agrees with a direct evaluation.
  CHECK(g.ade(2, 3) == doctest::Approx(evaluate(p, ds, EvalConfig{3, {4}}).ade[0]).epsilon(1e-12));

  std::ostringstream csv;
  write_grid_csv(csv, g);
  std::istringstream lines_in(csv.str());
  std::string line;
  std::getline(lines_in, line);
  CHECK(line == "obs\\pred,1,2,3,4,5");
  int rows = 0;
  while (std::getline(lines_in, line)) {
    CHECK(line.substr(0, 2) == std::to_string(rows + 1) + ",");
    ++rows;
  }
  CHECK(rows == 4);

  std::ostringstream ppm;
  write_heatmap_ppm(ppm, g.ade, 3);
  const std::string img = ppm.str();
  const std::string header = "P6\n15 12\n255\n";
  CHECK(img.substr(0, header.size()) == header);
  CHECK(img.size() == header.size() + 15 * 12 * 3);

  CHECK_THROWS_AS(evaluate_grid(p, ds, 10, 10), EvaluationError);
}

TEST_CASE("report csv layout") {
  EvalReport r;
  r.interval = 0.4;
  r.horizons = {1, 3};
  r.ade = {0.5, 1.25};
  r.aede = {10, 20.5};
  r.windows = {7, 5};
  std::ostringstream out;
  write_report_csv(out, r);
  CHECK(out.str() == "horizon_steps,horizon_seconds,ade_m,aede_deg,windows\n1,0.4,0.5,10,7\n3,1.2,1.25,20.5,5\n");
}
