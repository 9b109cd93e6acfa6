#include "tpose/loss.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tpose {

namespace {

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

}  // namespace

double gaussian_nll(double mu_x, double mu_y, double sigma_x, double sigma_y, double rho, const Eigen::Vector2d& gt,
                    NllGradient* grad) {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) {
    throw std::domain_error("gaussian_nll: sigma must be positive");
  }
  if (!(std::abs(rho) < 1.0)) {
    throw std::domain_error("gaussian_nll: |rho| must be < 1");
  }
  const bool floor_x = sigma_x < kSigmaFloor;
  const bool floor_y = sigma_y < kSigmaFloor;
  const bool cap_rho = std::abs(rho) > kRhoLimit;
  const double sx = floor_x ? kSigmaFloor : sigma_x;
  const double sy = floor_y ? kSigmaFloor : sigma_y;
  const double r = cap_rho ? std::copysign(kRhoLimit, rho) : rho;

  const double a = (gt.x() - mu_x) / sx;
  const double b = (gt.y() - mu_y) / sy;
  const double q = 1.0 - r * r;
  const double z = a * a + b * b - 2.0 * r * a * b;
  const double value = z / (2.0 * q) + kLogTwoPi + std::log(sx) + std::log(sy) + 0.5 * std::log(q);

  if (grad != nullptr) {
    grad->mu_x = -(a - r * b) / (q * sx);
    grad->mu_y = -(b - r * a) / (q * sy);
    grad->sigma_x = floor_x ? 0.0 : (1.0 - a * (a - r * b) / q) / sx;
    grad->sigma_y = floor_y ? 0.0 : (1.0 - b * (b - r * a) / q) / sy;
    grad->rho = cap_rho ? 0.0 : -a * b / q + r * z / (q * q) - r / q;
  }
  return value;
}

double gaussian_nll(const GaussianPoseOutput& out, const Eigen::Vector2d& gt) {
  return gaussian_nll(out.mu_x, out.mu_y, out.sigma_x, out.sigma_y, out.rho, gt, nullptr);
}

RotationLoss rotation_l2(const Eigen::Vector2d& raw, const Eigen::Vector2d& gt_q, Eigen::Vector2d* grad) {
  RotationLoss loss;
  Eigen::Vector2d pred = raw;
  const double norm = raw.norm();
  if (!canonicalize_quaternion(pred)) {
    pred = {0.0, 1.0};
    loss.degenerate = true;
  }
  const Eigen::Vector2d diff = pred - gt_q;
  loss.value = diff.norm();
  if (grad != nullptr) {
    grad->setZero();
    if (!loss.degenerate && loss.value > 0.0) {
      // pred = s * raw / |raw| with s = +-1 fixed locally.
      const Eigen::Vector2d unit = raw / norm;
      const double sign = pred.dot(unit) < 0.0 ? -1.0 : 1.0;
      const Eigen::Vector2d u = diff / loss.value;
      *grad = sign * (u - unit * unit.dot(u)) / norm;
    }
  }
  return loss;
}

RotationLoss rotation_l2(const GaussianPoseOutput& out, const Eigen::Vector2d& gt_q) {
  return rotation_l2(Eigen::Vector2d(out.qz_raw, out.qw_raw), gt_q, nullptr);
}

double l2_regularization(const ModelParams& params, double lambda, bool include_biases) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("l2_regularization: lambda must be >= 0");
  double total = 0.0;
  params.weights.visit([&](const char*, const Matrix& m, bool is_weight) {
    if (is_weight || include_biases) total += m.squaredNorm();
  });
  return lambda * total;
}

Matrix make_mask(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  Matrix mask = Matrix::Zero(static_cast<Eigen::Index>(lengths.size()), static_cast<Eigen::Index>(max_len));
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > max_len) throw std::invalid_argument("make_mask: length exceeds max_len");
    mask.row(static_cast<Eigen::Index>(i)).head(static_cast<Eigen::Index>(lengths[i])).setOnes();
  }
  return mask;
}

LossBreakdown masked_batch_loss(const Matrix& nll, const Matrix& rotation, const Matrix& mask,
                                const ModelParams& params, const LossOptions& options) {
  detail::require_same_shape("masked_batch_loss", nll, mask);
  detail::require_same_shape("masked_batch_loss", rotation, mask);
  const double count = mask.sum();
  if (!(count > 0.0)) throw std::invalid_argument("masked_batch_loss: mask selects no entries");
  LossBreakdown out;
  // Select rather than multiply so that masked-out entries never leak NaN/Inf.
  out.nll_position = (mask.array() != 0.0).select(nll.array() * mask.array(), 0.0).sum() / count;
  out.rotation_l2 =
      options.rotation_weight * (mask.array() != 0.0).select(rotation.array() * mask.array(), 0.0).sum() / count;
  out.regularization = l2_regularization(params, options.lambda, options.regularize_biases);
  out.total = out.nll_position + out.rotation_l2 + out.regularization;
  return out;
}

Var<double> masked_gaussian_nll(const Var<double>& mu, const Var<double>& sigma, const Var<double>& rho,
                                const Matrix& target_xy, const Eigen::VectorXd& weights) {
  const Eigen::Index rows = mu.rows();
  if (mu.cols() != 2 || sigma.cols() != 2 || rho.cols() != 1 || sigma.rows() != rows || rho.rows() != rows ||
      target_xy.rows() != rows || target_xy.cols() != 2 || weights.size() != rows) {
    throw ShapeError("masked_gaussian_nll: inconsistent shapes");
  }
  Matrix d_mu = Matrix::Zero(rows, 2), d_sigma = Matrix::Zero(rows, 2), d_rho = Matrix::Zero(rows, 1);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double w = weights(r);
    if (w == 0.0) continue;
    NllGradient g;
    const double v = gaussian_nll(mu.value()(r, 0), mu.value()(r, 1), sigma.value()(r, 0), sigma.value()(r, 1),
                                  rho.value()(r, 0), target_xy.row(r).transpose(), &g);
    total += w * v;
    d_mu.row(r) << w * g.mu_x, w * g.mu_y;
    d_sigma.row(r) << w * g.sigma_x, w * g.sigma_y;
    d_rho(r, 0) = w * g.rho;
  }
  Matrix value(1, 1);
  value(0, 0) = total;
  const std::size_t im = mu.id(), is = sigma.id(), ir = rho.id();
  return mu.tape()->record(std::move(value), {mu, sigma, rho},
                           [im, is, ir, d_mu = std::move(d_mu), d_sigma = std::move(d_sigma),
                            d_rho = std::move(d_rho)](Tape<double>& t, std::size_t self) {
                             const double g = t.grad(self)(0, 0);
                             t.accumulate(im, d_mu * g);
                             t.accumulate(is, d_sigma * g);
                             t.accumulate(ir, d_rho * g);
                           });
}

Var<double> masked_rotation_l2(const Var<double>& quat, const Matrix& target_q, const Eigen::VectorXd& weights,
                               std::size_t* degenerate) {
  const Eigen::Index rows = quat.rows();
  if (quat.cols() != 2 || target_q.rows() != rows || target_q.cols() != 2 || weights.size() != rows) {
    throw ShapeError("masked_rotation_l2: inconsistent shapes");
  }
  Matrix d_quat = Matrix::Zero(rows, 2);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double w = weights(r);
    if (w == 0.0) continue;
    Eigen::Vector2d g;
    const auto loss = rotation_l2(quat.value().row(r).transpose(), target_q.row(r).transpose(), &g);
    if (loss.degenerate && degenerate != nullptr) ++*degenerate;
    total += w * loss.value;
    d_quat.row(r) = w * g.transpose();
  }
  Matrix value(1, 1);
  value(0, 0) = total;
  const std::size_t iq = quat.id();
  return quat.tape()->record(std::move(value), {quat},
                             [iq, d_quat = std::move(d_quat)](Tape<double>& t, std::size_t self) {
                               t.accumulate(iq, d_quat * t.grad(self)(0, 0));
                             });
}

Var<double> l2_regularization(const Weights<Var<double>>& weights, double lambda, bool include_biases) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("l2_regularization: lambda must be >= 0");
  Var<double> total;
  bool first = true;
  weights.visit([&](const char*, const Var<double>& w, bool is_weight) {
    if (!is_weight && !include_biases) return;
    const Var<double> sq = sum(hadamard(w, w));
    total = first ? sq : add(total, sq);
    first = false;
  });
  return scale(total, lambda);
}

Weights<Var<double>> bind(Tape<double>& tape, const Weights<Matrix>& params) {
  return params.transform([&](const char*, const Matrix& m, bool) { return tape.variable(m); });
}

Weights<Matrix> gradients(const Tape<double>& tape, const Weights<Var<double>>& bound) {
  return bound.transform([&](const char*, const Var<double>& v, bool) { return tape.gradient(v); });
}

BatchLoss sequence_loss(Tape<double>& tape, const Weights<Var<double>>& weights, int layers, int hidden,
                        const SequenceBatch& batch, const LossOptions& options) {
  const Eigen::Index rows = batch.rows();
  const std::size_t steps = batch.steps();
  if (steps == 0 || rows == 0 || batch.targets.size() != steps ||
      batch.mask.cols() != static_cast<Eigen::Index>(steps)) {
    throw ShapeError("sequence_loss: malformed batch");
  }
  const double count = batch.mask.sum();
  if (!(count > 0.0)) throw std::invalid_argument("sequence_loss: mask selects no entries");

  std::vector<Var<double>> cells(static_cast<std::size_t>(layers)), hiddens(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    cells[static_cast<std::size_t>(l)] = tape.constant(Matrix::Zero(rows, hidden));
    hiddens[static_cast<std::size_t>(l)] = tape.constant(Matrix::Zero(rows, hidden));
  }

  BatchLoss out;
  Var<double> nll_sum, rot_sum;
  for (std::size_t k = 0; k < steps; ++k) {
    const Var<double> obs = tape.constant(batch.inputs[k]);
    stack_step(weights, obs, cells, hiddens);
    const auto heads = decode(weights, hiddens.back());
    const Eigen::VectorXd w = batch.mask.col(static_cast<Eigen::Index>(k));
    const Matrix& target = batch.targets[k];
    const Var<double> nll = masked_gaussian_nll(heads.mu, heads.sigma, heads.rho, target.leftCols(2), w);
    const Var<double> rot = masked_rotation_l2(heads.quat, target.rightCols(2), w, &out.degenerate_rotations);
    nll_sum = k == 0 ? nll : add(nll_sum, nll);
    rot_sum = k == 0 ? rot : add(rot_sum, rot);
  }
  const Var<double> nll_mean = scale(nll_sum, 1.0 / count);
  const Var<double> rot_mean = scale(rot_sum, options.rotation_weight / count);
  const Var<double> reg = l2_regularization(weights, options.lambda, options.regularize_biases);
  out.total = add(add(nll_mean, rot_mean), reg);

  out.breakdown.nll_position = nll_mean.value()(0, 0);
  out.breakdown.rotation_l2 = rot_mean.value()(0, 0);
  out.breakdown.regularization = reg.value()(0, 0);
  out.breakdown.total = out.total.value()(0, 0);
  return out;
}

}  // namespace tpose
