#include "helpers.hpp"

#include "tpose/text.hpp"

#include <doctest.h>

#include <numbers>
#include <set>
#include <sstream>

using namespace tpose;
using namespace tpose::testing;

namespace {

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  return read_trajectories(in, FileFormat::kCsv);
}

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace

TEST_CASE("records are grouped by track id and sorted by time") {
  const Dataset ds = parse_csv(
      "track_id,t,x,y,qz,qw\n"
      "7,2,0,0,0,1\n"
      "9,1,5,5,0,1\n"
      "7,0,1,0,0,1\n"
      "9,0,4,5,0,1\n"
      "7,1,2,0,0,1\n");
  REQUIRE(ds.trajectories.size() == 2);
  CHECK(ds.trajectories[0].track_id == "7");
  CHECK(ds.trajectories[0].size() == 3);
  CHECK(ds.trajectories[1].size() == 2);
  CHECK(ds.trajectories[0].samples[0].t == 0.0);
  CHECK(ds.trajectories[0].samples[2].t == 2.0);
  CHECK(ds.interval == 0.0);
}

TEST_CASE("non-unit quaternions within tolerance are renormalized") {
  const Dataset ds = parse_csv("track_id,t,x,y,qz,qw\na,0,0,0,0.3,0.4\n");
  REQUIRE(ds.trajectories.size() == 1);
  const Pose3DOF& p = ds.trajectories[0].samples[0].pose;
  CHECK(p.qz == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p.qw == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("negative qw is flipped to the canonical sign") {
  const Dataset ds = parse_csv("track_id,t,x,y,qz,qw\na,0,0,0,0.6,-0.8\n");
  const Pose3DOF& p = ds.trajectories[0].samples[0].pose;
  CHECK(p.qz == doctest::Approx(-0.6));
  CHECK(p.qw == doctest::Approx(0.8));
}

TEST_CASE("degenerate quaternions are rejected and counted") {
  const Dataset ds = parse_csv("track_id,t,x,y,qz,qw\na,0,0,0,0,0\na,1,0,0,0,1\na,2,0,0,0.0001,0.0001\n");
  CHECK(ds.rejected_records == 2);
  CHECK(ds.trajectories[0].size() == 1);
}

TEST_CASE("empty input gives an empty dataset") {
  CHECK(parse_csv("").trajectories.empty());
  CHECK(parse_csv("track_id,t,x,y,qz,qw\n").trajectories.empty());
  std::istringstream in("");
  CHECK(read_trajectories(in, FileFormat::kJsonl).trajectories.empty());
}

TEST_CASE("duplicate (track_id, t) is an error") {
  CHECK_THROWS_AS(parse_csv("track_id,t,x,y,qz,qw\na,1,0,0,0,1\na,1,2,0,0,1\n"), DataError);
}

TEST_CASE("parse errors name the line") {
  try {
    parse_csv("track_id,t,x,y,qz,qw\na,0,0,0,0,1\na,oops,0,0,0,1\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("track_id,t,x,y,qz,qw\na,0,0\n"), DataError);
  CHECK_THROWS_AS(parse_csv("id,t,x,y\n"), DataError);
  std::istringstream bad_json("{\"track_id\": \"a\", \"t\": 0}\n");
  CHECK_THROWS_AS(read_trajectories(bad_json, FileFormat::kJsonl), DataError);
}

TEST_CASE("CSV and JSONL round-trip exactly") {
  Dataset ds;
  ds.trajectories.push_back(straight_line("a", 4, 0.4, 1.3));
  ds.trajectories.push_back(straight_line("b", 3, 0.4, 0.7, kEpoch2017 + 5.1, 2.0));
  ds.trajectories[1].samples[1].pose = make_pose(1.0 / 3.0, -2.5, 1.1);
  for (const FileFormat fmt : {FileFormat::kCsv, FileFormat::kJsonl}) {
    std::stringstream buf;
    write_trajectories(ds, buf, fmt);
    const Dataset back = read_trajectories(buf, fmt);
    REQUIRE(back.trajectories.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back.trajectories[i].track_id == ds.trajectories[i].track_id);
      REQUIRE(back.trajectories[i].size() == ds.trajectories[i].size());
      for (std::size_t k = 0; k < ds.trajectories[i].size(); ++k) {
        CHECK(back.trajectories[i].samples[k].t == ds.trajectories[i].samples[k].t);
        CHECK(back.trajectories[i].samples[k].pose == ds.trajectories[i].samples[k].pose);
      }
    }
  }
}

TEST_CASE("resampling a 10 Hz trajectory at 0.4 s takes every 4th sample") {
  Trajectory raw;
  raw.track_id = "r";
  for (int k = 0; k <= 40; ++k) raw.samples.push_back({100.0 + 0.1 * k, make_pose(0.37 * k, std::sin(k), 0.05 * k)});
  const Trajectory out = resample(raw, 0.4);
  REQUIRE(out.size() == 11);
  CHECK(out.interval == 0.4);
  for (std::size_t k = 0; k < out.size(); ++k) {
    CHECK(out.samples[k].pose == raw.samples[4 * k].pose);
    if (k > 0) CHECK(std::abs(out.samples[k].t - out.samples[k - 1].t - 0.4) <= 0.04);
  }
}

TEST_CASE("resampling interpolates position linearly and yaw on the shorter arc") {
  Trajectory raw;
  raw.samples = {{0.0, make_pose(0, 0, 0)}, {1.0, make_pose(1, 0, std::numbers::pi / 2)}};
  const Trajectory out = resample(raw, 0.5);
  REQUIRE(out.size() == 3);
  CHECK(out.samples[1].t == 0.5);
  CHECK(out.samples[1].pose.x == doctest::Approx(0.5));
  CHECK(out.samples[1].pose.y == 0.0);
  CHECK(deg(yaw_of(out.samples[1].pose)) == doctest::Approx(45.0));

  // 170 deg to -170 deg passes through 180, not through 0.
  raw.samples = {{0.0, make_pose(0, 0, 170 * std::numbers::pi / 180)},
                 {1.0, make_pose(0, 0, -170 * std::numbers::pi / 180)}};
  const Trajectory wrap = resample(raw, 0.5);
  CHECK(std::abs(deg(yaw_of(wrap.samples[1].pose))) == doctest::Approx(180.0));
}

TEST_CASE("resampling a trajectory shorter than one interval fails") {
  Trajectory raw;
  raw.samples = {{0.0, {}}, {0.3, {}}};
  CHECK_THROWS_WITH_AS(resample(raw, 0.4), doctest::Contains("too short"), DataError);
  Dataset ds;
  ds.trajectories = {raw, straight_line("ok", 5, 0.4)};
  CHECK(resample(ds, 0.4).trajectories.size() == 1);
}

TEST_CASE("calendar features count UTC days and seconds since midnight") {
  const double t = kEpoch2017 + 4 * kSecondsPerDay + 12 * 3600;  // 2017-01-05 12:00:00
  const TimeFeatures f = time_features(t, calendar_day(kEpoch2017));
  CHECK(f.t_day == 4.0);
  CHECK(f.t_hms == 43200.0);
}

TEST_CASE("features copy the pose and zero-fill time when disabled") {
  Trajectory traj;
  traj.samples = {{kEpoch2017 + 60, Pose3DOF{1, 2, 0, 1}}, {kEpoch2017 + 61, Pose3DOF{1.5, 2, 0, 1}}};
  const Matrix with = extract_features(traj, true, calendar_day(kEpoch2017));
  CHECK(with.row(0).head(4) == Eigen::RowVector4d(1, 2, 0, 1));
  CHECK(with(0, 5) == 60.0);
  const Matrix without = extract_features(traj, false, 0);
  CHECK(without.rightCols(2).isZero(0.0));
}

TEST_CASE("norm stats use the population std and guard constant dimensions") {
  Matrix f = Matrix::Zero(3, kFeatureDim);
  f.col(0) << 1, 2, 3;
  const NormStats s = fit_norm_stats(std::vector<Matrix>{f});
  CHECK(s.mean(0) == doctest::Approx(2.0));
  CHECK(s.std(0) == doctest::Approx(0.816496580927726));
  CHECK(s.mean(1) == 0.0);
  CHECK(s.std(1) == 1.0);
  CHECK_THROWS_AS(fit_norm_stats(std::vector<Matrix>{Matrix::Zero(1, kFeatureDim)}), DataError);

  std::mt19937_64 rng(3);
  Matrix z = random_matrix(500, kFeatureDim, rng);
  const NormStats zs = fit_norm_stats(std::vector<Matrix>{z});
  const NormStats again = fit_norm_stats(std::vector<Matrix>{apply_norm(z, zs)});
  for (int c = 0; c < kFeatureDim; ++c) {
    CHECK(std::abs(again.mean(c)) < 1e-12);
    CHECK(again.std(c) == doctest::Approx(1.0));
  }
}

TEST_CASE("apply_norm and invert_norm") {
  NormStats s;
  s.mean(0) = 2.0;
  s.std(0) = 0.8165;
  Matrix v = Matrix::Zero(1, kFeatureDim);
  v(0, 0) = 3.0;
  CHECK(apply_norm(v, s)(0, 0) == doctest::Approx(1.2247).epsilon(1e-4));
  CHECK(apply_norm(v, NormStats{}) == v);

  std::mt19937_64 rng(8);
  const Matrix x = random_matrix(20, kFeatureDim, rng, 100.0);
  NormStats r;
  r.mean = random_matrix(1, kFeatureDim, rng, 50.0);
  r.std = random_matrix(1, kFeatureDim, rng, 1.0).array().abs() + 0.1;
  CHECK((invert_norm(apply_norm(x, r), r) - x).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("split: counts, determinism and disjointness") {
  Dataset ds;
  for (int i = 0; i < 15; ++i) {
    ds.trajectories.push_back(straight_line("t" + std::to_string(i), 5, 0.4, 1.0, kEpoch2017 + 100.0 * (15 - i)));
  }
  const auto [train, test] = split_dataset(ds, 2.0 / 3.0, 42);
  CHECK(train.trajectories.size() == 10);
  CHECK(test.trajectories.size() == 5);
  const auto [train2, test2] = split_dataset(ds, 2.0 / 3.0, 42);
  std::set<std::string> a, b;
  for (std::size_t i = 0; i < train.trajectories.size(); ++i) {
    CHECK(train.trajectories[i].track_id == train2.trajectories[i].track_id);
    a.insert(train.trajectories[i].track_id);
    if (i > 0) CHECK(train.trajectories[i - 1].start_time() <= train.trajectories[i].start_time());
  }
  for (const auto& t : test.trajectories) b.insert(t.track_id);
  for (const auto& id : b) CHECK(a.count(id) == 0);
  CHECK(a.size() + b.size() == 15);

  Dataset one;
  one.trajectories.push_back(straight_line("x", 5, 0.4));
  CHECK_THROWS_AS(split_dataset(one, 0.5, 1), DataError);
  CHECK_THROWS_AS(split_dataset(ds, 1.0, 1), std::invalid_argument);
}

TEST_CASE("encoding round-trips a sample") {
  Dataset ds;
  ds.trajectories.push_back(straight_line("a", 30, 0.4));
  FeatureEncoding enc;
  enc.use_time = true;
  enc.epoch_day = first_calendar_day(ds);
  enc.norm = fit_norm_stats(ds, true);
  const TimestampedPose s = ds.trajectories[0].samples[7];
  const Feature back = enc.decode(enc.encode(s));
  CHECK((back - enc.raw(s)).cwiseAbs().maxCoeff() < 1e-9);
  const EncodedTrajectory e = encode_trajectory(ds.trajectories[0], enc);
  CHECK(e.features.rows() == 30);
  CHECK(e.poses.cols() == kTargetDim);
  CHECK(e.poses(7, 0) == doctest::Approx(enc.normalize_position(s.pose.position()).x()));
}

TEST_CASE("text helpers are locale independent and strict") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.5e-9) == "-2.5e-09");
  CHECK(parse_double(" 1.25 ") == 1.25);
  CHECK_THROWS_AS(parse_double("1,5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_int("3.5"), std::invalid_argument);
  CHECK(parse_bool("true"));
  CHECK_FALSE(parse_bool("0"));
  std::istringstream kv("# comment\na = 1\n\nb=two words # trailing\n");
  const auto entries = parse_key_values(kv);
  REQUIRE(entries.size() == 2);
  CHECK(entries[1].key == "b");
  CHECK(entries[1].value == "two words");
  CHECK(entries[1].line == 4);
}
