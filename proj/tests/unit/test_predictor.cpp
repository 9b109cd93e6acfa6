#include "helpers.hpp"

#include "tpose/predictor.hpp"

#include <doctest.h>

using namespace tpose;
using namespace tpose::testing;

namespace {

ModelParams zero_model(bool use_time) {
  ModelParams p = init_params(0, 1, use_time, 4);
  p.weights.visit([](const char*, Matrix& m, bool) { m.setZero(); });
  p.interval = 0.4;
  p.encoding.norm.mean << 3, -2, 0, 1, 0, 0;
  p.encoding.norm.std << 2, 5, 1, 1, 1, 1;
  return p;
}

ModelParams fitted_model(std::uint64_t seed, int layers) {
  ModelParams p = small_model(seed, layers, 8);
  p.interval = 0.4;
  Dataset ds;
  ds.trajectories.push_back(straight_line("a", 30, 0.4));
  p.encoding.norm = fit_norm_stats(ds, true);
  return p;
}

TrackSession observe_all(const ModelParams& p, const Trajectory& traj, std::size_t count) {
  TrackSession s = stream_open(p, traj.track_id);
  for (std::size_t k = 0; k < count; ++k) s = stream_observe(p, s, traj.samples[k].pose, traj.samples[k].t);
  return s;
}

}  // namespace

TEST_CASE("zero weights predict the normalization mean with the identity rotation") {
  const ModelParams p = zero_model(false);
  TrackSession s = stream_open(p, "a");
  s = stream_observe(p, s, Pose3DOF{10, 10, 0, 1}, 100.0);
  const auto pred = stream_predict(p, s, RolloutConfig{1, 20, RolloutMode::kDistributionMean, 0});
  REQUIRE(pred.size() == 1);
  CHECK(pred[0].pose.x == 3.0);
  CHECK(pred[0].pose.y == -2.0);
  CHECK(pred[0].pose.qz == 0.0);
  CHECK(pred[0].pose.qw == 1.0);
  CHECK(pred[0].rotation_fallback);
  CHECK(pred[0].sigma.x() == 2.0);
  CHECK(pred[0].sigma.y() == 5.0);
  CHECK(pred[0].t == doctest::Approx(100.4));
}

TEST_CASE("rollout config and horizon") {
  const ModelParams p = fitted_model(1, 3);
  const TrackSession s = observe_all(p, straight_line("a", 10, 0.4), 10);
  const auto pred = stream_predict(p, s, RolloutConfig{6, 5, RolloutMode::kSampleMean, 3});
  REQUIRE(pred.size() == 6);
  for (int k = 0; k < 6; ++k) {
    CHECK(pred[k].step == k + 1);
    CHECK(pred[k].t == doctest::Approx(s.last_seen + 0.4 * (k + 1)));
    CHECK(std::abs(pred[k].pose.rotation().norm() - 1.0) < 1e-12);
    CHECK(pred[k].pose.qw >= 0.0);
    CHECK(pred[k].sigma.minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(stream_predict(p, s, RolloutConfig{0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(stream_predict(p, s, RolloutConfig{1, 0}), std::invalid_argument);
  CHECK(stream_predict(p, s, RolloutConfig{6, 5, RolloutMode::kSampleMean, 3})[5].pose == pred[5].pose);
}

TEST_CASE("sessions count observations and reject misuse") {
  const ModelParams p = fitted_model(2, 1);
  const Trajectory traj = straight_line("a", 8, 0.4);
  TrackSession s = observe_all(p, traj, 5);
  CHECK(s.observation_count == 5);
  CHECK(s.last_seen == traj.samples[4].t);

  CHECK_THROWS_AS(stream_observe(p, s, traj.samples[3].pose, traj.samples[3].t), PredictionError);
  CHECK_THROWS_AS(stream_observe(p, s, traj.samples[4].pose, traj.samples[4].t), PredictionError);
  CHECK_THROWS_AS(stream_observe(p, s, Pose3DOF{}, std::nan("")), PredictionError);
  CHECK_THROWS_AS(stream_predict(p, stream_open(p, "empty"), RolloutConfig{}), PredictionError);

  stream_close(s);
  CHECK_THROWS_AS(stream_observe(p, s, traj.samples[5].pose, traj.samples[5].t), PredictionError);
  CHECK_THROWS_AS(stream_predict(p, s, RolloutConfig{}), PredictionError);
}

TEST_CASE("predict does not mutate the session") {
  const ModelParams p = fitted_model(3, 3);
  const Trajectory traj = straight_line("a", 8, 0.4);
  const TrackSession s = observe_all(p, traj, 6);
  const TrackSession copy = s;
  stream_predict(p, s, RolloutConfig{5, 10});
  CHECK(s.state == copy.state);
  CHECK(s.observation_count == copy.observation_count);
  CHECK(stream_observe(p, s, traj.samples[6].pose, traj.samples[6].t).state ==
        stream_observe(p, copy, traj.samples[6].pose, traj.samples[6].t).state);
}

TEST_CASE("streaming matches a batch forward pass bit for bit") {
  const ModelParams p = fitted_model(4, 3);
  const Trajectory traj = straight_line("a", 30, 0.4, 1.1);
  Matrix obs(30, kFeatureDim);
  for (std::size_t k = 0; k < 30; ++k) obs.row(static_cast<Eigen::Index>(k)) = p.encoding.encode(traj.samples[k]);
  const SequenceOutput batch = forward_sequence(p, obs, LstmState::zeros(p));

  TrackSession s = stream_open(p, "a");
  for (std::size_t k = 0; k < 30; ++k) {
    s = stream_observe(p, s, traj.samples[k].pose, traj.samples[k].t);
    CHECK(*s.last_output == batch.outputs[k]);
  }
  CHECK(s.state == batch.final_state);

  // Feature rollout from the same observations agrees on positions.
  const RolloutConfig cfg{4, 1, RolloutMode::kDistributionMean, 0};
  const auto a = stream_predict(p, s, cfg);
  const auto b = rollout(p, obs, cfg);
  for (std::size_t k = 0; k < 4; ++k) CHECK(a[k].pose == b[k].pose);
}

TEST_CASE("interleaved sessions do not interact") {
  const ModelParams p = fitted_model(5, 3);
  const Trajectory ta = straight_line("a", 12, 0.4, 1.0);
  const Trajectory tb = straight_line("b", 12, 0.4, 0.5, kEpoch2017 + 500.0, 3.0);
  const TrackSession alone_a = observe_all(p, ta, 12), alone_b = observe_all(p, tb, 12);

  auto store = SessionStore(std::make_shared<const ModelParams>(p));
  for (std::size_t k = 0; k < 12; ++k) {
    store.observe("b", tb.samples[k].pose, tb.samples[k].t);
    CHECK(store.observe("a", ta.samples[k].pose, ta.samples[k].t) == k + 1);
  }
  CHECK(store.snapshot("a")->state == alone_a.state);
  CHECK(store.snapshot("b")->state == alone_b.state);
  const RolloutConfig cfg{3, 4, RolloutMode::kSampleMean, 9};
  CHECK(store.predict("a", cfg)[2].pose == stream_predict(p, alone_a, cfg)[2].pose);
}

TEST_CASE("session store: close, gc and unknown tracks") {
  const ModelParams p = fitted_model(6, 1);
  SessionStore store(std::make_shared<const ModelParams>(p));
  store.observe("old", Pose3DOF{0, 0, 0, 1}, 10.0);
  store.observe("new", Pose3DOF{0, 0, 0, 1}, 95.0);
  CHECK(store.size() == 2);
  CHECK(store.gc(100.0, 30.0) == std::vector<std::string>{"old"});
  CHECK_FALSE(store.contains("old"));
  CHECK(store.contains("new"));
  CHECK(store.close("new"));
  CHECK_FALSE(store.close("new"));
  CHECK(store.size() == 0);
  CHECK_THROWS_AS(store.predict("new", RolloutConfig{}), PredictionError);
  // Closing then observing starts afresh.
  CHECK(store.observe("new", Pose3DOF{0, 0, 0, 1}, 1.0) == 1);
}

TEST_CASE("sample_position: mean of draws, invalid parameters") {
  std::mt19937_64 rng(1);
  const GaussianPoseOutput out{1.0, -2.0, 0.5, 0.2, 0.7, 0, 1};
  const Eigen::Vector2d m = sample_position(out, 200000, rng);
  CHECK(m.x() == doctest::Approx(1.0).epsilon(0.01));
  CHECK(m.y() == doctest::Approx(-2.0).epsilon(0.01));

  Eigen::Matrix<double, Eigen::Dynamic, 2> draws(20000, 2);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) draws.row(i) = sample_position(out, 1, rng).transpose();
  const Eigen::RowVector2d mean = draws.colwise().mean();
  const auto centered = draws.rowwise() - mean;
  const Eigen::Matrix2d cov = centered.transpose() * centered / static_cast<double>(draws.rows() - 1);
  CHECK(cov(0, 0) == doctest::Approx(0.25).epsilon(0.05));
  CHECK(cov(1, 1) == doctest::Approx(0.04).epsilon(0.05));
  CHECK(cov(0, 1) == doctest::Approx(0.7 * 0.5 * 0.2).epsilon(0.05));

  CHECK_THROWS_AS(sample_position(GaussianPoseOutput{0, 0, 0, 1, 0, 0, 1}, 1, rng), PredictionError);
  CHECK_THROWS_AS(sample_position(GaussianPoseOutput{0, 0, 1, 1, 1.0, 0, 1}, 1, rng), PredictionError);
  CHECK_THROWS_AS(sample_position(out, 0, rng), std::invalid_argument);
}
