// Iterative rollout by Gaussian sampling, and per-track streaming sessions.
#pragma once

#include "tpose/model.hpp"
#include "tpose/trajectory.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace tpose {

class PredictionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RolloutMode {
  kSampleMean,        ///< average of n_samples draws from the predicted Gaussian
  kDistributionMean,  ///< the predicted mean itself
};

struct RolloutConfig {
  int horizon_steps = 1;
  int n_samples = 20;
  RolloutMode mode = RolloutMode::kSampleMean;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PredictedPose {
  int step = 0;           ///< 1-based steps ahead of the last observation
  double t = 0.0;         ///< predicted timestamp (last observation + step * interval)
  Pose3DOF pose;          ///< world frame, unit canonical quaternion
  Eigen::Vector2d mu;     ///< world frame
  Eigen::Vector2d sigma;  ///< world frame
  double rho = 0.0;
  /// The raw quaternion output was degenerate and (0, 1) was used.
  bool rotation_fallback = false;
};

/// Mean of `n_samples` draws from N(mu, Sigma), using the Cholesky factor of Sigma.
Eigen::Vector2d sample_position(const GaussianPoseOutput& out, int n_samples, std::mt19937_64& rng);

/// Where a rollout starts: the state after the last observation, the output
/// it produced, and that observation's raw (unnormalized) features.
struct RolloutSeed {
  LstmState state;
  GaussianPoseOutput output;
  Feature last_raw;
  double last_t = 0.0;
};

std::vector<PredictedPose> rollout_from(const ModelParams& params, const RolloutSeed& seed, const RolloutConfig& cfg);

/// Feeds every (normalized) observation row through the model from a zero
/// state, then predicts cfg.horizon_steps poses by feeding each prediction back.
std::vector<PredictedPose> rollout(const ModelParams& params, const Matrix& observed, const RolloutConfig& cfg);

// --- streaming -------------------------------------------------------------

struct TrackSession {
  std::string track_id;
  LstmState state;
  double last_seen = 0.0;
  std::size_t observation_count = 0;
  bool closed = false;
  std::optional<GaussianPoseOutput> last_output;
  Feature last_raw = Feature::Zero();
};

TrackSession stream_open(const ModelParams& params, std::string track_id);
/// Encodes the pose and its time features and advances the session by one step.
TrackSession stream_observe(const ModelParams& params, TrackSession session, const Pose3DOF& pose, double t);
/// Rollout from the session's current state; the session is not modified.
std::vector<PredictedPose> stream_predict(const ModelParams& params, const TrackSession& session,
                                          const RolloutConfig& cfg);
void stream_close(TrackSession& session);

/// Thread-safe map of sessions sharing one read-only model. Operations on
/// distinct tracks run concurrently; operations on one track are serialized.
class SessionStore {
 public:
  explicit SessionStore(std::shared_ptr<const ModelParams> params);

  /// Opens the track if unseen, then observes. Returns the new observation count.
  std::size_t observe(const std::string& track_id, const Pose3DOF& pose, double t);
  std::vector<PredictedPose> predict(const std::string& track_id, const RolloutConfig& cfg) const;
  /// Removes the track. Returns false if it was not open.
  bool close(const std::string& track_id);
  /// Removes tracks with now - last_seen > max_idle; returns their ids.
  std::vector<std::string> gc(double now, double max_idle);

  bool contains(const std::string& track_id) const;
  std::size_t size() const;
  std::optional<TrackSession> snapshot(const std::string& track_id) const;

  const ModelParams& params() const { return *params_; }

 private:
  struct Slot {
    mutable std::mutex mutex;
    TrackSession session;
  };

  std::shared_ptr<Slot> find(const std::string& track_id) const;

  std::shared_ptr<const ModelParams> params_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

}  // namespace tpose
