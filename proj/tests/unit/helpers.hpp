// Shared fixtures for the unit tests.
#pragma once

#include "tpose/loss.hpp"
#include "tpose/model.hpp"
#include "tpose/tape.hpp"
#include "tpose/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace tpose::testing {

inline constexpr double kEpoch2017 = 1483228800.0;  // 2017-01-01T00:00:00Z

/// Straight line along +x at `speed` m/s, `n` samples every `dt` seconds.
inline Trajectory straight_line(const std::string& id, std::size_t n, double dt, double speed = 1.0,
                                double t0 = kEpoch2017 + 36000.0, double y = 0.0) {
  Trajectory traj;
  traj.track_id = id;
  for (std::size_t k = 0; k < n; ++k) {
    traj.samples.push_back({t0 + static_cast<double>(k) * dt, Pose3DOF{speed * dt * static_cast<double>(k), y, 0, 1}});
  }
  return traj;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double magnitude = 2.0) {
  std::uniform_real_distribution<double> u(-magnitude, magnitude);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Random parameters of modest scale for gradient checks, hidden size `hidden`.
inline ModelParams small_model(std::uint64_t seed, int layers, int hidden, double scale = 0.5) {
  ModelParams p = init_params(seed, layers, true, hidden);
  std::mt19937_64 rng(seed + 1);
  p.weights.visit([&](const char*, Matrix& m, bool) { m = random_matrix(m.rows(), m.cols(), rng, scale); });
  return p;
}

/// |a - n| / max(|a|, |n|, floor): relative error that degrades to an
/// absolute one for entries near zero, where finite differences carry only noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between reverse-mode gradients of `f` and central
/// differences, over every entry of every input.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline double gradient_check(const ScalarFn& f, const std::vector<Matrix>& inputs, double h = 1e-5,
                             double floor = 1e-6) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  tape.backward(f(tape, vars));

  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape<double> t;
    std::vector<Var<double>> v;
    for (const auto& m : xs) v.push_back(t.variable(m));
    return f(t, v).value()(0, 0);
  };

  double worst = 0.0;
  std::vector<Matrix> xs = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix analytic = tape.gradient(vars[i]);
    for (Eigen::Index j = 0; j < inputs[i].size(); ++j) {
      const double orig = xs[i].data()[j];
      xs[i].data()[j] = orig + h;
      const double up = eval(xs);
      xs[i].data()[j] = orig - h;
      const double down = eval(xs);
      xs[i].data()[j] = orig;
      worst = std::max(worst, relative_error(analytic.data()[j], (up - down) / (2.0 * h), floor));
    }
  }
  return worst;
}

/// Padded batch over random normalized inputs and targets with the given lengths.
inline SequenceBatch random_batch(const std::vector<std::size_t>& lengths, std::mt19937_64& rng) {
  const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
  const auto rows = static_cast<Eigen::Index>(lengths.size());
  SequenceBatch b;
  b.mask = make_mask(lengths, steps);
  std::uniform_real_distribution<double> yaw(-3.0, 3.0);
  for (std::size_t k = 0; k < steps; ++k) {
    b.inputs.push_back(random_matrix(rows, kFeatureDim, rng, 1.0));
    Matrix target(rows, kTargetDim);
    target.leftCols(2) = random_matrix(rows, 2, rng, 1.0);
    for (Eigen::Index r = 0; r < rows; ++r) target.row(r).tail(2) = quaternion_from_yaw(yaw(rng)).transpose();
    b.targets.push_back(target);
  }
  return b;
}

/// Largest relative error of the full training objective's parameter gradients.
inline double model_gradient_check(const ModelParams& params, const SequenceBatch& batch, const LossOptions& opts,
                                   double h = 1e-5, double floor = 1e-6) {
  Tape<double> tape;
  const auto bound = bind(tape, params.weights);
  tape.backward(sequence_loss(tape, bound, params.layers, params.hidden, batch, opts).total);
  const Weights<Matrix> analytic = gradients(tape, bound);

  auto loss_at = [&](const Weights<Matrix>& w) {
    Tape<double> t;
    return sequence_loss(t, bind(t, w), params.layers, params.hidden, batch, opts).breakdown.total;
  };

  double worst = 0.0;
  Weights<Matrix> w = params.weights;
  auto blocks = w.blocks();
  const auto grads = analytic.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Eigen::Index j = 0; j < blocks[b]->size(); ++j) {
      double& x = blocks[b]->data()[j];
      const double orig = x;
      x = orig + h;
      const double up = loss_at(w);
      x = orig - h;
      const double down = loss_at(w);
      x = orig;
      worst = std::max(worst, relative_error(grads[b]->data()[j], (up - down) / (2.0 * h), floor));
    }
  }
  return worst;
}

}  // namespace tpose::testing
