#include "tpose/predictor.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace tpose {

void RolloutConfig::validate() const {
  if (horizon_steps < 1) throw std::invalid_argument("rollout: horizon_steps must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("rollout: n_samples must be >= 1");
}

Eigen::Vector2d sample_position(const GaussianPoseOutput& out, int n_samples, std::mt19937_64& rng) {
  if (n_samples < 1) throw std::invalid_argument("sample_position: n_samples must be >= 1");
  if (!(out.sigma_x > 0.0) || !(out.sigma_y > 0.0) || !(std::abs(out.rho) < 1.0)) {
    throw PredictionError("sample_position: invalid Gaussian parameters");
  }
  Eigen::Matrix2d cov;
  const double off = out.rho * out.sigma_x * out.sigma_y;
  cov << out.sigma_x * out.sigma_x, off, off, out.sigma_y * out.sigma_y;
  const Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw PredictionError("sample_position: covariance is not positive definite");
  }
  const Eigen::Matrix2d lower = llt.matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int k = 0; k < n_samples; ++k) {
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    acc += lower * Eigen::Vector2d(z0, z1);
  }
  return out.mu() + acc / static_cast<double>(n_samples);
}

std::vector<PredictedPose> rollout_from(const ModelParams& params, const RolloutSeed& seed, const RolloutConfig& cfg) {
  cfg.validate();
  const FeatureEncoding& enc = params.encoding;
  std::mt19937_64 rng(cfg.seed);

  LstmState state = seed.state;
  GaussianPoseOutput out = seed.output;
  Feature raw = seed.last_raw;

  std::vector<PredictedPose> poses;
  poses.reserve(static_cast<std::size_t>(cfg.horizon_steps));
  for (int k = 1; k <= cfg.horizon_steps; ++k) {
    const Eigen::Vector2d pos_n =
        cfg.mode == RolloutMode::kSampleMean ? sample_position(out, cfg.n_samples, rng) : out.mu();
    Eigen::Vector2d q(out.qz_raw, out.qw_raw);
    const bool fallback = !canonicalize_quaternion(q);
    if (fallback) q = {0.0, 1.0};
    const Eigen::Vector2d world = enc.denormalize_position(pos_n);

    PredictedPose p;
    p.step = k;
    p.t = seed.last_t + static_cast<double>(k) * params.interval;
    p.pose = Pose3DOF{world.x(), world.y(), q.x(), q.y()};
    p.mu = enc.denormalize_position(out.mu());
    p.sigma = {out.sigma_x * enc.norm.std(0), out.sigma_y * enc.norm.std(1)};
    p.rho = out.rho;
    p.rotation_fallback = fallback;
    poses.push_back(p);

    if (k == cfg.horizon_steps) break;
    double t_day = raw(4);
    double t_hms = raw(5);
    if (enc.use_time) {
      t_hms += params.interval;
      while (t_hms >= kSecondsPerDay) {
        t_hms -= kSecondsPerDay;
        t_day += 1.0;
      }
    }
    raw << world.x(), world.y(), q.x(), q.y(), t_day, t_hms;
    std::tie(state, out) = step(params, state, enc.encode_raw(raw));
  }
  return poses;
}

std::vector<PredictedPose> rollout(const ModelParams& params, const Matrix& observed, const RolloutConfig& cfg) {
  if (observed.rows() == 0) throw std::invalid_argument("rollout: empty observation sequence");
  cfg.validate();
  auto seq = forward_sequence(params, observed, LstmState::zeros(params));
  RolloutSeed seed;
  seed.state = std::move(seq.final_state);
  seed.output = seq.outputs.back();
  seed.last_raw = params.encoding.decode(observed.row(observed.rows() - 1));
  return rollout_from(params, seed, cfg);
}

TrackSession stream_open(const ModelParams& params, std::string track_id) {
  TrackSession s;
  s.track_id = std::move(track_id);
  s.state = LstmState::zeros(params);
  return s;
}

TrackSession stream_observe(const ModelParams& params, TrackSession session, const Pose3DOF& pose, double t) {
  if (session.closed) throw PredictionError("observe on closed session '" + session.track_id + "'");
  if (!std::isfinite(t)) throw PredictionError("observe: non-finite timestamp");
  if (session.observation_count > 0 && !(t > session.last_seen)) {
    throw PredictionError("observe: timestamp " + std::to_string(t) + " not after last " +
                          std::to_string(session.last_seen) + " for '" + session.track_id + "'");
  }
  const Feature raw = params.encoding.raw(TimestampedPose{t, canonical(pose)});
  auto [state, out] = step(params, session.state, params.encoding.encode_raw(raw));
  session.state = std::move(state);
  session.last_output = out;
  session.last_raw = raw;
  session.last_seen = t;
  ++session.observation_count;
  return session;
}

std::vector<PredictedPose> stream_predict(const ModelParams& params, const TrackSession& session,
                                          const RolloutConfig& cfg) {
  if (!session.last_output) {
    throw PredictionError("predict: session '" + session.track_id + "' has no observations");
  }
  RolloutSeed seed{session.state, *session.last_output, session.last_raw, session.last_seen};
  return rollout_from(params, seed, cfg);
}

void stream_close(TrackSession& session) {
  session.closed = true;
  session.state.layers.clear();
  session.last_output.reset();
}

SessionStore::SessionStore(std::shared_ptr<const ModelParams> params) : params_(std::move(params)) {
  if (!params_) throw std::invalid_argument("SessionStore: null model");
}

std::shared_ptr<SessionStore::Slot> SessionStore::find(const std::string& track_id) const {
  std::lock_guard lock(map_mutex_);
  const auto it = sessions_.find(track_id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionStore::observe(const std::string& track_id, const Pose3DOF& pose, double t) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(map_mutex_);
    auto& entry = sessions_[track_id];
    if (!entry) {
      entry = std::make_shared<Slot>();
      entry->session = stream_open(*params_, track_id);
    }
    slot = entry;
  }
  std::lock_guard lock(slot->mutex);
  slot->session = stream_observe(*params_, std::move(slot->session), pose, t);
  return slot->session.observation_count;
}

std::vector<PredictedPose> SessionStore::predict(const std::string& track_id, const RolloutConfig& cfg) const {
  const auto slot = find(track_id);
  if (!slot) throw PredictionError("predict: unknown track '" + track_id + "'");
  std::lock_guard lock(slot->mutex);
  return stream_predict(*params_, slot->session, cfg);
}

bool SessionStore::close(const std::string& track_id) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(map_mutex_);
    const auto it = sessions_.find(track_id);
    if (it == sessions_.end()) return false;
    slot = it->second;
    sessions_.erase(it);
  }
  std::lock_guard lock(slot->mutex);
  stream_close(slot->session);
  return true;
}

std::vector<std::string> SessionStore::gc(double now, double max_idle) {
  std::vector<std::shared_ptr<Slot>> doomed;
  std::vector<std::string> ids;
  {
    std::lock_guard lock(map_mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      bool idle;
      {
        std::lock_guard slot_lock(it->second->mutex);
        idle = now - it->second->session.last_seen > max_idle;
      }
      if (idle) {
        ids.push_back(it->first);
        doomed.push_back(it->second);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& slot : doomed) {
    std::lock_guard lock(slot->mutex);
    stream_close(slot->session);
  }
  return ids;
}

bool SessionStore::contains(const std::string& track_id) const { return find(track_id) != nullptr; }

std::size_t SessionStore::size() const {
  std::lock_guard lock(map_mutex_);
  return sessions_.size();
}

std::optional<TrackSession> SessionStore::snapshot(const std::string& track_id) const {
  const auto slot = find(track_id);
  if (!slot) return std::nullopt;
  std::lock_guard lock(slot->mutex);
  return slot->session;
}

}  // namespace tpose
