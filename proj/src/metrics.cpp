#include "tpose/metrics.hpp"

#include "tpose/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <string>

namespace tpose {

double ade(const Positions& pred, const Positions& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("ade: length mismatch");
  if (pred.empty()) throw std::invalid_argument("ade: empty sequences");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) total += (pred[k] - gt[k]).norm();
  return total / static_cast<double>(pred.size());
}

double aede(const Quaternions& pred_q, const Quaternions& gt_q) {
  if (pred_q.size() != gt_q.size()) throw std::invalid_argument("aede: length mismatch");
  if (pred_q.empty()) throw std::invalid_argument("aede: empty sequences");
  double total = 0.0;
  for (std::size_t k = 0; k < pred_q.size(); ++k) {
    total += angle_distance(yaw_of(pred_q[k].x(), pred_q[k].y()), yaw_of(gt_q[k].x(), gt_q[k].y()));
  }
  return total / static_cast<double>(pred_q.size()) * 180.0 / std::numbers::pi;
}

Positions constant_velocity_baseline(const std::vector<TimestampedPose>& observed, int horizon) {
  if (observed.size() < 2) throw std::invalid_argument("constant_velocity_baseline: needs >= 2 observations");
  if (horizon < 1) throw std::invalid_argument("constant_velocity_baseline: horizon must be >= 1");
  const Eigen::Vector2d last = observed.back().pose.position();
  const Eigen::Vector2d delta = last - observed[observed.size() - 2].pose.position();
  Positions out;
  out.reserve(static_cast<std::size_t>(horizon));
  for (int k = 1; k <= horizon; ++k) out.push_back(last + static_cast<double>(k) * delta);
  return out;
}

void EvalConfig::validate() const {
  if (obs_len < 1) throw std::invalid_argument("eval: obs_len must be >= 1");
  if (horizons.empty()) throw std::invalid_argument("eval: no horizons");
  for (int h : horizons) {
    if (h < 1) throw std::invalid_argument("eval: horizons must be >= 1");
  }
  if (interval < 0.0 || !std::isfinite(interval)) throw std::invalid_argument("eval: invalid interval");
}

int EvalConfig::max_horizon() const { return *std::max_element(horizons.begin(), horizons.end()); }

void check_time_compatibility(const ModelParams& params, const Dataset& ds) {
  if (!params.use_time()) return;
  constexpr double kOneYear = 365.0 * kSecondsPerDay;
  for (const auto& traj : ds.trajectories) {
    for (const auto& s : traj.samples) {
      if (s.t >= kOneYear) return;
    }
  }
  throw EvaluationError(
      "model uses time features but the data timestamps look relative (all within a year of the epoch)");
}

namespace {

Dataset on_grid(const Dataset& ds, double interval) {
  if (ds.interval == interval) return ds;
  return resample(ds, interval);
}

// Predicts `steps` poses after observing samples [start, start + obs_len).
using WindowPredictor =
    std::function<std::vector<Pose3DOF>(const Trajectory&, std::size_t start, int obs_len, int steps)>;

EvalReport score_windows(const Dataset& ds, const EvalConfig& cfg, double interval, const WindowPredictor& predict) {
  const int max_h = cfg.max_horizon();
  std::vector<double> ade_sum(static_cast<std::size_t>(max_h + 1), 0.0), aede_sum(ade_sum);
  std::vector<std::size_t> count(static_cast<std::size_t>(max_h + 1), 0);
  const auto obs = static_cast<std::size_t>(cfg.obs_len);

  for (const auto& traj : ds.trajectories) {
    const std::size_t n = traj.size();
    for (std::size_t start = 0; start + obs < n; ++start) {
      const int steps = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_h), n - start - obs));
      const auto pred = predict(traj, start, cfg.obs_len, steps);
      Positions pp, gp;
      Quaternions pq, gq;
      for (int k = 0; k < steps; ++k) {
        const Pose3DOF& gt = traj.samples[start + obs + static_cast<std::size_t>(k)].pose;
        pp.push_back(pred[static_cast<std::size_t>(k)].position());
        pq.push_back(pred[static_cast<std::size_t>(k)].rotation());
        gp.push_back(gt.position());
        gq.push_back(gt.rotation());
        const auto h = static_cast<std::size_t>(k + 1);
        ade_sum[h] += ade(pp, gp);
        aede_sum[h] += aede(pq, gq);
        ++count[h];
      }
    }
  }

  EvalReport report;
  report.interval = interval;
  for (int h : cfg.horizons) {
    const auto i = static_cast<std::size_t>(h);
    if (count[i] == 0) {
      throw EvaluationError("no qualifying window for obs_len " + std::to_string(cfg.obs_len) + " and horizon " +
                            std::to_string(h));
    }
    report.horizons.push_back(h);
    report.ade.push_back(ade_sum[i] / static_cast<double>(count[i]));
    report.aede.push_back(aede_sum[i] / static_cast<double>(count[i]));
    report.windows.push_back(count[i]);
  }
  return report;
}

std::vector<Pose3DOF> poses_of(const std::vector<PredictedPose>& predicted) {
  std::vector<Pose3DOF> out;
  out.reserve(predicted.size());
  for (const auto& p : predicted) out.push_back(p.pose);
  return out;
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const Dataset& ds_test, const EvalConfig& cfg,
                    RolloutConfig rollout_cfg) {
  cfg.validate();
  if (cfg.interval != 0.0 && cfg.interval != params.interval) {
    throw EvaluationError("eval interval " + format_double(cfg.interval) + " differs from the model's " +
                          format_double(params.interval));
  }
  check_time_compatibility(params, ds_test);
  const Dataset ds = on_grid(ds_test, params.interval);
  const FeatureEncoding& enc = params.encoding;

  return score_windows(ds, cfg, params.interval, [&](const Trajectory& traj, std::size_t start, int obs_len, int steps) {
    Matrix observed(obs_len, kFeatureDim);
    for (int k = 0; k < obs_len; ++k) observed.row(k) = enc.encode(traj.samples[start + static_cast<std::size_t>(k)]);
    auto seq = forward_sequence(params, observed, LstmState::zeros(params));
    const TimestampedPose& last = traj.samples[start + static_cast<std::size_t>(obs_len) - 1];
    RolloutSeed seed{std::move(seq.final_state), seq.outputs.back(), enc.raw(last), last.t};
    rollout_cfg.horizon_steps = steps;
    return poses_of(rollout_from(params, seed, rollout_cfg));
  });
}

EvalReport evaluate_baseline(const Dataset& ds_test, const EvalConfig& cfg) {
  cfg.validate();
  if (cfg.obs_len < 2) throw std::invalid_argument("evaluate_baseline: obs_len must be >= 2");
  const double interval = cfg.interval > 0.0 ? cfg.interval : ds_test.interval;
  if (!(interval > 0.0)) throw EvaluationError("evaluate_baseline: the dataset has no grid interval; pass one explicitly");
  const Dataset ds = on_grid(ds_test, interval);

  return score_windows(ds, cfg, interval, [](const Trajectory& traj, std::size_t start, int obs_len, int steps) {
    const auto first = traj.samples.begin() + static_cast<std::ptrdiff_t>(start);
    const std::vector<TimestampedPose> observed(first, first + obs_len);
    const Positions positions = constant_velocity_baseline(observed, steps);
    std::vector<Pose3DOF> out;
    for (const auto& p : positions) {
      out.push_back(Pose3DOF{p.x(), p.y(), observed.back().pose.qz, observed.back().pose.qw});
    }
    return out;
  });
}

GridReport evaluate_grid(const ModelParams& params, const Dataset& ds_test, int obs_max, int pred_max,
                         RolloutConfig rollout_cfg) {
  if (obs_max < 1 || pred_max < 1) throw std::invalid_argument("evaluate_grid: ranges must be >= 1");
  check_time_compatibility(params, ds_test);
  const Dataset ds = on_grid(ds_test, params.interval);
  const FeatureEncoding& enc = params.encoding;

  Matrix sum = Matrix::Zero(obs_max, pred_max);
  Eigen::MatrixXi count = Eigen::MatrixXi::Zero(obs_max, pred_max);

  for (const auto& traj : ds.trajectories) {
    const std::size_t n = traj.size();
    for (std::size_t start = 0; start + 1 < n; ++start) {
      // One state per start, advanced through every observation length.
      LstmState state = LstmState::zeros(params);
      for (int a = 1; a <= obs_max; ++a) {
        const std::size_t last_idx = start + static_cast<std::size_t>(a) - 1;
        if (last_idx + 1 >= n) break;
        const TimestampedPose& last = traj.samples[last_idx];
        auto [next, out] = step(params, state, enc.encode(last));
        state = std::move(next);
        const int steps = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(pred_max), n - last_idx - 1));
        rollout_cfg.horizon_steps = steps;
        const auto pred = rollout_from(params, RolloutSeed{state, out, enc.raw(last), last.t}, rollout_cfg);
        Positions pp, gp;
        for (int b = 1; b <= steps; ++b) {
          pp.push_back(pred[static_cast<std::size_t>(b - 1)].pose.position());
          gp.push_back(traj.samples[last_idx + static_cast<std::size_t>(b)].pose.position());
          sum(a - 1, b - 1) += ade(pp, gp);
          ++count(a - 1, b - 1);
        }
      }
    }
  }

  GridReport grid;
  grid.interval = params.interval;
  grid.windows = count;
  grid.ade = Matrix(obs_max, pred_max);
  for (int a = 0; a < obs_max; ++a) {
    for (int b = 0; b < pred_max; ++b) {
      if (count(a, b) == 0) {
        throw EvaluationError("no qualifying window for observation length " + std::to_string(a + 1) +
                              " and prediction length " + std::to_string(b + 1));
      }
      grid.ade(a, b) = sum(a, b) / count(a, b);
    }
  }
  return grid;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "horizon_steps,horizon_seconds,ade_m,aede_deg,windows\n";
  for (std::size_t i = 0; i < report.horizons.size(); ++i) {
    out << report.horizons[i] << ',' << format_double(std::round(report.horizons[i] * report.interval * 1e9) / 1e9) << ','
        << format_double(report.ade[i]) << ',' << format_double(report.aede[i]) << ',' << report.windows[i] << '\n';
  }
}

void write_grid_csv(std::ostream& out, const GridReport& grid) {
  out << "obs\\pred";
  for (Eigen::Index b = 0; b < grid.ade.cols(); ++b) out << ',' << b + 1;
  out << '\n';
  for (Eigen::Index a = 0; a < grid.ade.rows(); ++a) {
    out << a + 1;
    for (Eigen::Index b = 0; b < grid.ade.cols(); ++b) out << ',' << format_double(grid.ade(a, b));
    out << '\n';
  }
}

namespace {

// Dark blue through teal and yellow to red.
std::array<unsigned char, 3> heat_color(double u) {
  static constexpr std::array<std::array<double, 3>, 5> kStops = {{
      {20, 30, 110}, {30, 140, 160}, {120, 200, 90}, {250, 220, 60}, {210, 40, 30},
  }};
  u = std::clamp(std::isfinite(u) ? u : 1.0, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(u), kStops.size() - 2);
  const double f = u - static_cast<double>(i);
  std::array<unsigned char, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<unsigned char>(std::lround(kStops[i][c] * (1.0 - f) + kStops[i + 1][c] * f));
  }
  return rgb;
}

}  // namespace

void write_heatmap_ppm(std::ostream& out, const Matrix& values, int cell) {
  if (cell < 1 || values.size() == 0) throw std::invalid_argument("write_heatmap_ppm: empty image");
  const double lo = values.minCoeff();
  const double span = values.maxCoeff() - lo;
  const Eigen::Index width = values.cols() * cell, height = values.rows() * cell;
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::string row(static_cast<std::size_t>(width) * 3, '\0');
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const auto rgb = heat_color(span > 0.0 ? (values(r, c) - lo) / span : 0.0);
      for (int px = 0; px < cell; ++px) {
        const auto at = static_cast<std::size_t>((c * cell + px) * 3);
        row[at] = static_cast<char>(rgb[0]);
        row[at + 1] = static_cast<char>(rgb[1]);
        row[at + 2] = static_cast<char>(rgb[2]);
      }
    }
    for (int py = 0; py < cell; ++py) out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

}  // namespace tpose
