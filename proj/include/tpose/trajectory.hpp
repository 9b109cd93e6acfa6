// Pose trajectories in the world frame: ingestion, resampling, feature
// extraction, normalization and train/test splitting.
#pragma once

#include "tpose/pose.hpp"
#include "tpose/tape.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tpose {

/// Observation width: x, y, qz, qw, t_day, t_hms.
inline constexpr int kFeatureDim = 6;
/// Regression target width: x, y (normalized) and qz, qw (unit, canonical).
inline constexpr int kTargetDim = 4;
inline constexpr double kSecondsPerDay = 86400.0;

using Feature = Eigen::Matrix<double, 1, kFeatureDim>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimestampedPose {
  double t = 0.0;  ///< seconds since the Unix epoch
  Pose3DOF pose;
};

struct TimeFeatures {
  double t_day = 0.0;  ///< whole days since the dataset's first calendar day
  double t_hms = 0.0;  ///< seconds since midnight (UTC)
};

struct Trajectory {
  std::string track_id;
  std::vector<TimestampedPose> samples;
  double interval = 0.0;  ///< grid spacing after resampling, 0 when raw

  std::size_t size() const { return samples.size(); }
  double start_time() const { return samples.empty() ? 0.0 : samples.front().t; }
  double duration() const { return samples.size() < 2 ? 0.0 : samples.back().t - samples.front().t; }
};

struct NormStats {
  Feature mean = Feature::Zero();
  Feature std = Feature::Ones();

  bool operator==(const NormStats&) const = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::optional<NormStats> norm;
  double interval = 0.0;
  /// Records dropped during loading because their quaternion could not be normalized.
  std::size_t rejected_records = 0;

  std::size_t total_samples() const;
};

enum class FileFormat { kCsv, kJsonl };

FileFormat parse_format(const std::string& name);
/// Guesses the format from the file extension (.jsonl/.json -> jsonl, else csv).
FileFormat format_for_path(const std::filesystem::path& path);

// --- ingestion -------------------------------------------------------------

Dataset load_trajectories(const std::filesystem::path& path, FileFormat format);
Dataset read_trajectories(std::istream& in, FileFormat format);

void save_trajectories(const Dataset& ds, const std::filesystem::path& path, FileFormat format);
void write_trajectories(const Dataset& ds, std::ostream& out, FileFormat format);

// --- resampling ------------------------------------------------------------

/// Arithmetic time grid from the first sample; linear in position, shorter
/// arc in yaw.
Trajectory resample(const Trajectory& traj, double interval);

/// Resamples every trajectory, dropping those shorter than one interval.
Dataset resample(const Dataset& ds, double interval);

// --- features --------------------------------------------------------------

std::int64_t calendar_day(double t);
TimeFeatures time_features(double t, std::int64_t epoch_day);

/// Earliest calendar day over all samples; 0 for an empty dataset.
std::int64_t first_calendar_day(const Dataset& ds);

/// Unnormalized n x 6 feature rows. Time columns are zero when `use_time` is false.
Matrix extract_features(const Trajectory& traj, bool use_time, std::int64_t epoch_day);

NormStats fit_norm_stats(const std::vector<Matrix>& feature_sequences);
NormStats fit_norm_stats(const Dataset& ds, bool use_time);

Matrix apply_norm(const Matrix& features, const NormStats& stats);
Matrix invert_norm(const Matrix& features, const NormStats& stats);

/// Everything needed to turn a timestamped pose into a network input and back.
struct FeatureEncoding {
  bool use_time = false;
  std::int64_t epoch_day = 0;
  NormStats norm;

  Feature raw(const TimestampedPose& sample) const;
  Feature encode(const TimestampedPose& sample) const;
  Feature encode_raw(const Feature& raw) const;
  Feature decode(const Feature& normalized) const;

  Eigen::Vector2d normalize_position(const Eigen::Vector2d& world) const;
  Eigen::Vector2d denormalize_position(const Eigen::Vector2d& normalized) const;

  bool operator==(const FeatureEncoding&) const = default;
};

/// Normalized inputs (n x 6) and next-step targets (n x 4) for one trajectory.
/// Row k of `targets` is the pose of sample k, so for training the target of
/// input row k is targets row k + 1.
struct EncodedTrajectory {
  Matrix features;
  Matrix poses;
  std::vector<double> times;
};

EncodedTrajectory encode_trajectory(const Trajectory& traj, const FeatureEncoding& encoding);

// --- splitting -------------------------------------------------------------

/// Orders trajectories by start time and assigns round(n * train_fraction)
/// of them to the training side by a seeded draw.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed);

}  // namespace tpose
