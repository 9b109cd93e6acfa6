// ADE / AEDE, windowed evaluation of a model or the constant-velocity
// baseline, and the observation x prediction length error grid.
#pragma once

#include "tpose/model.hpp"
#include "tpose/predictor.hpp"
#include "tpose/trajectory.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace tpose {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Positions = std::vector<Eigen::Vector2d>;
using Quaternions = std::vector<Eigen::Vector2d>;  ///< (qz, qw) pairs

/// Mean Euclidean distance, in the units of the inputs.
double ade(const Positions& pred, const Positions& gt);
/// Mean wrapped yaw difference, in degrees.
double aede(const Quaternions& pred_q, const Quaternions& gt_q);

/// Extrapolates the last observed displacement `horizon` times.
Positions constant_velocity_baseline(const std::vector<TimestampedPose>& observed, int horizon);

struct EvalConfig {
  int obs_len = 5;
  std::vector<int> horizons = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  /// Grid spacing in seconds; 0 means the model's interval.
  double interval = 0.0;

  void validate() const;
  int max_horizon() const;
};

struct EvalReport {
  double interval = 0.0;
  std::vector<int> horizons;
  std::vector<double> ade;   ///< meters
  std::vector<double> aede;  ///< degrees
  std::vector<std::size_t> windows;
};

/// Slides a window with stride 1 over every test trajectory, observes
/// cfg.obs_len steps, rolls out and scores each horizon prefix. A window
/// counts towards horizon h when the trajectory has obs_len + h samples from
/// its start, so a short horizon never depends on the longest one.
/// `rollout_cfg.horizon_steps` is ignored.
EvalReport evaluate(const ModelParams& params, const Dataset& ds_test, const EvalConfig& cfg,
                    RolloutConfig rollout_cfg = {1, 20, RolloutMode::kDistributionMean, 0});

/// Same windows, predicted by constant_velocity_baseline with the last
/// observed rotation held. Needs obs_len >= 2.
EvalReport evaluate_baseline(const Dataset& ds_test, const EvalConfig& cfg);

struct GridReport {
  double interval = 0.0;
  Matrix ade;                    ///< obs_max x pred_max, entry (a-1, b-1)
  Eigen::MatrixXi windows;       ///< window count per entry
};

GridReport evaluate_grid(const ModelParams& params, const Dataset& ds_test, int obs_max, int pred_max,
                         RolloutConfig rollout_cfg = {1, 20, RolloutMode::kDistributionMean, 0});

/// `horizon_steps,horizon_seconds,ade_m,aede_deg,windows`
void write_report_csv(std::ostream& out, const EvalReport& report);
/// First row `obs\pred,1..B`, then one row per observation length.
void write_grid_csv(std::ostream& out, const GridReport& grid);
/// Binary PPM heat map, one `cell` x `cell` square per entry, low error dark.
void write_heatmap_ppm(std::ostream& out, const Matrix& values, int cell = 16);

/// Throws when the model expects absolute timestamps but the data starts
/// within a year of the epoch, which means relative times.
void check_time_compatibility(const ModelParams& params, const Dataset& ds);

}  // namespace tpose
