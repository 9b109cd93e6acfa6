// Training objective: bivariate Gaussian position NLL, quaternion L2 rotation
// loss, L2 weight penalty, and mask-weighted aggregation over padded batches.
#pragma once

#include "tpose/model.hpp"
#include "tpose/tape.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace tpose {

/// sigma values below this are raised to it inside the NLL only.
inline constexpr double kSigmaFloor = 1e-4;
/// |rho| is capped at this inside the NLL so that 1 - rho^2 stays positive
/// when tanh saturates in floating point.
inline constexpr double kRhoLimit = 1.0 - 1e-6;

struct LossOptions {
  double lambda = 0.005;
  /// Multiplier on the rotation term relative to the position NLL.
  double rotation_weight = 1.0;
  bool regularize_biases = false;
};

struct LossBreakdown {
  double nll_position = 0.0;
  double rotation_l2 = 0.0;
  double regularization = 0.0;
  double total = 0.0;
};

/// Partial derivatives of the NLL with respect to the Gaussian parameters.
struct NllGradient {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double rho = 0.0;
};

/// -log of the bivariate normal density at `gt`. Throws std::domain_error for
/// sigma <= 0 or |rho| >= 1.
double gaussian_nll(const GaussianPoseOutput& out, const Eigen::Vector2d& gt);

/// Same value as gaussian_nll, plus its gradient when `grad` is non-null.
double gaussian_nll(double mu_x, double mu_y, double sigma_x, double sigma_y, double rho, const Eigen::Vector2d& gt,
                    NllGradient* grad);

struct RotationLoss {
  double value = 0.0;
  /// The raw pair was too short to normalize and (0, 1) was used instead.
  bool degenerate = false;
};

/// Distance between the normalized, sign-canonical raw prediction and `gt_q`.
RotationLoss rotation_l2(const GaussianPoseOutput& out, const Eigen::Vector2d& gt_q);

/// Value and d/d(qz_raw, qw_raw).
RotationLoss rotation_l2(const Eigen::Vector2d& raw, const Eigen::Vector2d& gt_q, Eigen::Vector2d* grad);

/// lambda * sum of squared weight-matrix entries (biases only when asked).
double l2_regularization(const ModelParams& params, double lambda, bool include_biases = false);

/// Mean of `nll` and `rotation` over entries where `mask` is 1, plus the
/// regularization term once.
LossBreakdown masked_batch_loss(const Matrix& nll, const Matrix& rotation, const Matrix& mask,
                                const ModelParams& params, const LossOptions& options);

/// Row-prefix mask: row i has ones in its first lengths[i] columns.
Matrix make_mask(const std::vector<std::size_t>& lengths, std::size_t max_len);

// --- tape versions ---------------------------------------------------------

/// sum_r weights(r) * NLL(row r), as a 1x1 node. Rows with zero weight
/// contribute nothing to the value or the gradient.
Var<double> masked_gaussian_nll(const Var<double>& mu, const Var<double>& sigma, const Var<double>& rho,
                                const Matrix& target_xy, const Eigen::VectorXd& weights);

/// sum_r weights(r) * rotation_l2(row r); counts degenerate masked-in rows.
Var<double> masked_rotation_l2(const Var<double>& quat, const Matrix& target_q, const Eigen::VectorXd& weights,
                               std::size_t* degenerate = nullptr);

Var<double> l2_regularization(const Weights<Var<double>>& weights, double lambda, bool include_biases = false);

/// Padded batch of windows, one matrix per time step.
struct SequenceBatch {
  std::vector<Matrix> inputs;   ///< per step: rows x 6 normalized features
  std::vector<Matrix> targets;  ///< per step: rows x 4 (x, y normalized; qz, qw unit)
  Matrix mask;                  ///< rows x steps

  Eigen::Index rows() const { return mask.rows(); }
  std::size_t steps() const { return inputs.size(); }
};

struct BatchLoss {
  Var<double> total;
  LossBreakdown breakdown;
  std::size_t degenerate_rotations = 0;
};

/// Unrolls the model over `batch` on `tape` and assembles the full objective.
BatchLoss sequence_loss(Tape<double>& tape, const Weights<Var<double>>& weights, int layers, int hidden,
                        const SequenceBatch& batch, const LossOptions& options);

/// Binds every parameter block of `params` as a tape variable.
Weights<Var<double>> bind(Tape<double>& tape, const Weights<Matrix>& params);

/// Gradients of the last backward() for each bound block.
Weights<Matrix> gradients(const Tape<double>& tape, const Weights<Var<double>>& bound);

}  // namespace tpose
