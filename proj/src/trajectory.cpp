#include "tpose/trajectory.hpp"

#include "tpose/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace tpose {

namespace {

// Quaternion pairs shorter than this are rejected rather than renormalized.
constexpr double kMinQuaternionNorm = 1e-3;
// Grid points this close to a raw sample take the sample verbatim.
constexpr double kGridHitTolerance = 1e-6;

struct Record {
  std::string track_id;
  TimestampedPose sample;
};

bool accept_quaternion(Pose3DOF& pose) {
  Eigen::Vector2d q = pose.rotation();
  if (!(q.norm() >= kMinQuaternionNorm)) {
    return false;
  }
  canonicalize_quaternion(q);
  pose.qz = q.x();
  pose.qw = q.y();
  return true;
}

Dataset group_records(std::vector<Record> records, std::size_t rejected) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<TimestampedPose>> groups;
  for (auto& r : records) {
    auto [it, inserted] = groups.try_emplace(r.track_id);
    if (inserted) order.push_back(r.track_id);
    it->second.push_back(r.sample);
  }
  Dataset ds;
  ds.rejected_records = rejected;
  for (const auto& id : order) {
    auto& samples = groups[id];
    std::stable_sort(samples.begin(), samples.end(),
                     [](const TimestampedPose& a, const TimestampedPose& b) { return a.t < b.t; });
    for (std::size_t i = 1; i < samples.size(); ++i) {
      if (samples[i].t == samples[i - 1].t) {
        throw DataError("duplicate record for track '" + id + "' at t=" + format_double(samples[i].t));
      }
    }
    ds.trajectories.push_back(Trajectory{id, std::move(samples), 0.0});
  }
  return ds;
}

double finite_field(std::string_view text, const char* name, int line_no) {
  double v = 0.0;
  try {
    v = parse_double(text, name);
  } catch (const std::invalid_argument& e) {
    throw DataError("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ": non-finite " + name);
  }
  return v;
}

Dataset read_csv(std::istream& in) {
  static const char* kColumns[] = {"track_id", "t", "x", "y", "qz", "qw"};
  std::string line;
  int line_no = 0;
  std::vector<int> column_of(6, -1);
  std::size_t width = 0;
  bool have_header = false;
  std::vector<Record> records;
  std::size_t rejected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (line_no == 1 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
    if (view.empty()) continue;
    const auto fields = split(view, ',');
    if (!have_header) {
      width = fields.size();
      for (std::size_t i = 0; i < fields.size(); ++i) {
        for (int c = 0; c < 6; ++c) {
          if (trim(fields[i]) == kColumns[c]) column_of[c] = static_cast<int>(i);
        }
      }
      for (int c = 0; c < 6; ++c) {
        if (column_of[c] < 0) {
          throw DataError("line " + std::to_string(line_no) + ": header lacks column '" + kColumns[c] + "'");
        }
      }
      have_header = true;
      continue;
    }
    if (fields.size() != width) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                      " fields, got " + std::to_string(fields.size()));
    }
    Record r;
    r.track_id = std::string(trim(fields[column_of[0]]));
    if (r.track_id.empty()) {
      throw DataError("line " + std::to_string(line_no) + ": empty track_id");
    }
    r.sample.t = finite_field(fields[column_of[1]], "t", line_no);
    r.sample.pose.x = finite_field(fields[column_of[2]], "x", line_no);
    r.sample.pose.y = finite_field(fields[column_of[3]], "y", line_no);
    r.sample.pose.qz = finite_field(fields[column_of[4]], "qz", line_no);
    r.sample.pose.qw = finite_field(fields[column_of[5]], "qw", line_no);
    if (!accept_quaternion(r.sample.pose)) {
      ++rejected;
      continue;
    }
    records.push_back(std::move(r));
  }
  return group_records(std::move(records), rejected);
}

double json_number(const nlohmann::json& obj, const char* key, int line_no) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw DataError("line " + std::to_string(line_no) + ": missing numeric '" + key + "'");
  }
  const double v = it->get<double>();
  if (!std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ": non-finite " + key);
  }
  return v;
}

Dataset read_jsonl(std::istream& in) {
  std::string line;
  int line_no = 0;
  std::vector<Record> records;
  std::size_t rejected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");
    }
    Record r;
    const auto id = obj.find("track_id");
    if (id == obj.end()) {
      throw DataError("line " + std::to_string(line_no) + ": missing 'track_id'");
    }
    if (id->is_string()) {
      r.track_id = id->get<std::string>();
    } else if (id->is_number_integer()) {
      r.track_id = std::to_string(id->get<std::int64_t>());
    } else {
      throw DataError("line " + std::to_string(line_no) + ": track_id must be a string or integer");
    }
    r.sample.t = json_number(obj, "t", line_no);
    r.sample.pose.x = json_number(obj, "x", line_no);
    r.sample.pose.y = json_number(obj, "y", line_no);
    r.sample.pose.qz = json_number(obj, "qz", line_no);
    r.sample.pose.qw = json_number(obj, "qw", line_no);
    if (!accept_quaternion(r.sample.pose)) {
      ++rejected;
      continue;
    }
    records.push_back(std::move(r));
  }
  return group_records(std::move(records), rejected);
}

TimestampedPose interpolate(const TimestampedPose& a, const TimestampedPose& b, double t) {
  const double alpha = (t - a.t) / (b.t - a.t);
  const double yaw_a = yaw_of(a.pose);
  const double yaw = yaw_a + alpha * wrap_angle(yaw_of(b.pose) - yaw_a);
  TimestampedPose out;
  out.t = t;
  out.pose = make_pose(a.pose.x + alpha * (b.pose.x - a.pose.x), a.pose.y + alpha * (b.pose.y - a.pose.y), yaw);
  return out;
}

}  // namespace

std::size_t Dataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

FileFormat parse_format(const std::string& name) {
  if (name == "csv") return FileFormat::kCsv;
  if (name == "jsonl") return FileFormat::kJsonl;
  throw std::invalid_argument("unknown format '" + name + "' (expected csv or jsonl)");
}

FileFormat format_for_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json") ? FileFormat::kJsonl : FileFormat::kCsv;
}

Dataset read_trajectories(std::istream& in, FileFormat format) {
  return format == FileFormat::kCsv ? read_csv(in) : read_jsonl(in);
}

Dataset load_trajectories(const std::filesystem::path& path, FileFormat format) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return read_trajectories(in, format);
}

void write_trajectories(const Dataset& ds, std::ostream& out, FileFormat format) {
  if (format == FileFormat::kCsv) {
    out << "track_id,t,x,y,qz,qw\n";
  }
  for (const auto& traj : ds.trajectories) {
    const std::string quoted_id = nlohmann::json(traj.track_id).dump();
    for (const auto& s : traj.samples) {
      if (format == FileFormat::kCsv) {
        out << traj.track_id << ',' << format_double(s.t) << ',' << format_double(s.pose.x) << ','
            << format_double(s.pose.y) << ',' << format_double(s.pose.qz) << ',' << format_double(s.pose.qw)
            << '\n';
      } else {
        out << "{\"track_id\":" << quoted_id << ",\"t\":" << format_double(s.t)
            << ",\"x\":" << format_double(s.pose.x) << ",\"y\":" << format_double(s.pose.y)
            << ",\"qz\":" << format_double(s.pose.qz) << ",\"qw\":" << format_double(s.pose.qw) << "}\n";
      }
    }
  }
}

void save_trajectories(const Dataset& ds, const std::filesystem::path& path, FileFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot write " + path.string());
  }
  write_trajectories(ds, out, format);
  if (!out) {
    throw DataError("write failed for " + path.string());
  }
}

Trajectory resample(const Trajectory& traj, double interval) {
  if (!(interval > 0.0)) {
    throw std::invalid_argument("resample: interval must be positive");
  }
  if (traj.size() < 2 || traj.duration() < interval - kGridHitTolerance) {
    throw DataError("resample: trajectory '" + traj.track_id + "' too short for interval " +
                    format_double(interval));
  }
  const auto& src = traj.samples;
  const double t0 = src.front().t;
  const auto steps = static_cast<std::size_t>(std::floor(traj.duration() / interval + 1e-9));

  Trajectory out;
  out.track_id = traj.track_id;
  out.interval = interval;
  out.samples.reserve(steps + 1);
  std::size_t seg = 0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = t0 + static_cast<double>(k) * interval;
    while (seg + 2 < src.size() && src[seg + 1].t <= t) ++seg;
    const auto& a = src[seg];
    const auto& b = src[seg + 1];
    TimestampedPose p;
    if (std::abs(t - a.t) <= kGridHitTolerance) {
      p = a;
    } else if (std::abs(t - b.t) <= kGridHitTolerance || t > b.t) {
      p = b;
    } else {
      p = interpolate(a, b, t);
    }
    p.t = t;
    out.samples.push_back(p);
  }
  return out;
}

Dataset resample(const Dataset& ds, double interval) {
  Dataset out;
  out.interval = interval;
  out.norm = ds.norm;
  out.rejected_records = ds.rejected_records;
  for (const auto& traj : ds.trajectories) {
    if (traj.size() < 2 || traj.duration() < interval - kGridHitTolerance) continue;
    out.trajectories.push_back(resample(traj, interval));
  }
  return out;
}

std::int64_t calendar_day(double t) { return static_cast<std::int64_t>(std::floor(t / kSecondsPerDay)); }

TimeFeatures time_features(double t, std::int64_t epoch_day) {
  const std::int64_t day = calendar_day(t);
  const double hms = std::clamp(t - static_cast<double>(day) * kSecondsPerDay, 0.0, std::nextafter(kSecondsPerDay, 0.0));
  return TimeFeatures{static_cast<double>(day - epoch_day), hms};
}

std::int64_t first_calendar_day(const Dataset& ds) {
  bool any = false;
  double earliest = 0.0;
  for (const auto& traj : ds.trajectories) {
    if (traj.samples.empty()) continue;
    if (!any || traj.samples.front().t < earliest) earliest = traj.samples.front().t;
    any = true;
  }
  return any ? calendar_day(earliest) : 0;
}

Matrix extract_features(const Trajectory& traj, bool use_time, std::int64_t epoch_day) {
  Matrix out(static_cast<Eigen::Index>(traj.size()), kFeatureDim);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj.samples[i];
    const auto tf = use_time ? time_features(s.t, epoch_day) : TimeFeatures{};
    out.row(static_cast<Eigen::Index>(i)) << s.pose.x, s.pose.y, s.pose.qz, s.pose.qw, tf.t_day, tf.t_hms;
  }
  return out;
}

NormStats fit_norm_stats(const std::vector<Matrix>& feature_sequences) {
  Eigen::Index count = 0;
  Eigen::Matrix<double, 1, kFeatureDim> sum = Feature::Zero();
  for (const auto& m : feature_sequences) {
    if (m.cols() != kFeatureDim) {
      throw ShapeError("fit_norm_stats: expected " + std::to_string(kFeatureDim) + " columns");
    }
    count += m.rows();
    if (m.rows() > 0) sum += m.colwise().sum();
  }
  if (count < 2) {
    throw DataError("fit_norm_stats: need at least 2 samples, got " + std::to_string(count));
  }
  NormStats stats;
  stats.mean = sum / static_cast<double>(count);
  Feature sq = Feature::Zero();
  for (const auto& m : feature_sequences) {
    if (m.rows() == 0) continue;
    sq += (m.rowwise() - stats.mean).array().square().matrix().colwise().sum();
  }
  stats.std = (sq / static_cast<double>(count)).cwiseSqrt();
  for (int d = 0; d < kFeatureDim; ++d) {
    if (!(stats.std(d) >= 1e-8)) stats.std(d) = 1.0;
  }
  return stats;
}

NormStats fit_norm_stats(const Dataset& ds, bool use_time) {
  const std::int64_t epoch = first_calendar_day(ds);
  std::vector<Matrix> seqs;
  seqs.reserve(ds.trajectories.size());
  for (const auto& traj : ds.trajectories) seqs.push_back(extract_features(traj, use_time, epoch));
  return fit_norm_stats(seqs);
}

Matrix apply_norm(const Matrix& features, const NormStats& stats) {
  if (features.cols() != kFeatureDim) throw ShapeError("apply_norm: expected 6 columns");
  return ((features.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
}

Matrix invert_norm(const Matrix& features, const NormStats& stats) {
  if (features.cols() != kFeatureDim) throw ShapeError("invert_norm: expected 6 columns");
  return ((features.array().rowwise() * stats.std.array()).rowwise() + stats.mean.array()).matrix();
}

Feature FeatureEncoding::raw(const TimestampedPose& sample) const {
  const auto tf = use_time ? time_features(sample.t, epoch_day) : TimeFeatures{};
  Feature f;
  f << sample.pose.x, sample.pose.y, sample.pose.qz, sample.pose.qw, tf.t_day, tf.t_hms;
  return f;
}

Feature FeatureEncoding::encode_raw(const Feature& raw_feature) const {
  return ((raw_feature - norm.mean).array() / norm.std.array()).matrix();
}

Feature FeatureEncoding::encode(const TimestampedPose& sample) const { return encode_raw(raw(sample)); }

Feature FeatureEncoding::decode(const Feature& normalized) const {
  return (normalized.array() * norm.std.array()).matrix() + norm.mean;
}

Eigen::Vector2d FeatureEncoding::normalize_position(const Eigen::Vector2d& world) const {
  return {(world.x() - norm.mean(0)) / norm.std(0), (world.y() - norm.mean(1)) / norm.std(1)};
}

Eigen::Vector2d FeatureEncoding::denormalize_position(const Eigen::Vector2d& normalized) const {
  return {normalized.x() * norm.std(0) + norm.mean(0), normalized.y() * norm.std(1) + norm.mean(1)};
}

EncodedTrajectory encode_trajectory(const Trajectory& traj, const FeatureEncoding& encoding) {
  EncodedTrajectory out;
  const auto n = static_cast<Eigen::Index>(traj.size());
  out.features.resize(n, kFeatureDim);
  out.poses.resize(n, kTargetDim);
  out.times.reserve(traj.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = traj.samples[static_cast<std::size_t>(i)];
    out.features.row(i) = encoding.encode(s);
    const Pose3DOF p = canonical(s.pose);
    const Eigen::Vector2d xy = encoding.normalize_position(p.position());
    out.poses.row(i) << xy.x(), xy.y(), p.qz, p.qw;
    out.times.push_back(s.t);
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: train_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.trajectories.size();
  if (n < 2) {
    throw DataError("split_dataset: need at least 2 trajectories, got " + std::to_string(n));
  }
  std::vector<std::size_t> by_time(n);
  std::iota(by_time.begin(), by_time.end(), 0);
  std::stable_sort(by_time.begin(), by_time.end(), [&](std::size_t a, std::size_t b) {
    return ds.trajectories[a].start_time() < ds.trajectories[b].start_time();
  });

  const auto n_train = static_cast<std::size_t>(
      std::clamp<long long>(std::llround(static_cast<double>(n) * train_fraction), 1, static_cast<long long>(n) - 1));
  std::vector<std::size_t> draw(n);
  std::iota(draw.begin(), draw.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(draw.begin(), draw.end(), rng);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[draw[i]] = true;

  Dataset train, test;
  for (Dataset* part : {&train, &test}) {
    part->interval = ds.interval;
    part->norm = ds.norm;
  }
  for (std::size_t rank = 0; rank < n; ++rank) {
    (is_train[rank] ? train : test).trajectories.push_back(ds.trajectories[by_time[rank]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace tpose
