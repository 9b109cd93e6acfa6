// Two-stage RMSProp training: fixed-length windows first, then batches whose
// window length is drawn per batch.
#pragma once

#include "tpose/loss.hpp"
#include "tpose/model.hpp"
#include "tpose/text.hpp"
#include "tpose/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string_view>
#include <vector>

namespace tpose {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FixedStage {
  int seq_len = 20;
  int epochs = 100;
  double lr = 0.005;
  double decay = 0.98;
};

struct DynamicStage {
  int len_min = 8;
  int len_max = 20;
  int epochs = 100;
  double lr = 0.003;
  double decay = 0.98;
};

struct TrainConfig {
  int batch_size = 128;
  FixedStage stage1;
  DynamicStage stage2;
  LossOptions loss;
  double rms_decay = 0.9;
  double epsilon = 1e-8;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  int layers = 1;
  bool use_time = true;
  int hidden = kDefaultHidden;
  /// Resampling interval in seconds.
  double interval = 1.0;

  void validate() const;
};

/// "strands": 1 layer, 1.0 s, length 20 then [8, 20], time features on.
/// "lcas": 3 layers, 0.4 s, length 30 then [10, 20], time features off.
TrainConfig preset(std::string_view name);

/// Applies `key = value` overrides. A `preset` key resets to that preset first.
void apply_config(TrainConfig& cfg, const std::vector<KeyValue>& entries);

/// Learning rate of epoch `epoch` (0-based) within a stage.
double epoch_learning_rate(double lr0, double decay, int epoch);

struct TrainingWindow {
  Matrix inputs;   ///< length x 6
  Matrix targets;  ///< length x 4, row k is the pose following input row k
  std::size_t length = 0;
};

/// Cuts every trajectory into non-overlapping windows of `seq_len` inputs
/// plus a shorter remainder. Shuffled when `rng` is given.
std::vector<TrainingWindow> make_training_windows(const std::vector<EncodedTrajectory>& trajectories, int seq_len,
                                                  std::mt19937_64* rng = nullptr);
std::vector<TrainingWindow> make_training_windows(const Dataset& ds, const FeatureEncoding& encoding, int seq_len,
                                                  std::mt19937_64* rng = nullptr);

/// Pads windows to the longest one and builds the mask.
SequenceBatch assemble_batch(const std::vector<const TrainingWindow*>& windows);

using RmsPropState = Weights<Matrix>;

RmsPropState make_rmsprop_state(const Weights<Matrix>& params);

struct RmsPropOptions {
  double lr = 0.001;
  double rms_decay = 0.9;
  double epsilon = 1e-8;
  double grad_clip = 5.0;
};

/// One RMSProp update with global-norm clipping. Returns the pre-clip norm.
double rmsprop_step(Weights<Matrix>& params, Weights<Matrix> grads, RmsPropState& state,
                    const RmsPropOptions& options);

struct EpochLog {
  int epoch = 0;  ///< 0-based within the stage
  int stage = 1;
  double lr = 0.0;
  LossBreakdown loss;
};

/// `epoch,stage,lr,nll,rot,reg,total`
std::string format_epoch_log(const EpochLog& e);
inline constexpr std::string_view kTrainingLogHeader = "epoch,stage,lr,nll,rot,reg,total";

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

using ProgressSink = std::function<void(const EpochLog&)>;

/// Fits normalization on `ds_train`, initializes from cfg.seed and runs both
/// stages. Deterministic for identical inputs.
TrainResult train(const Dataset& ds_train, const TrainConfig& cfg, const ProgressSink& progress = {});

}  // namespace tpose
