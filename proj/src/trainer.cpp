#include "tpose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace tpose {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (stage1.seq_len < 1) fail("stage1.seq_len must be >= 1");
  if (stage1.epochs < 0 || stage2.epochs < 0) fail("epochs must be >= 0");
  if (!(stage1.lr > 0.0) || !(stage2.lr > 0.0)) fail("lr must be > 0");
  if (!(stage1.decay > 0.0 && stage1.decay <= 1.0) || !(stage2.decay > 0.0 && stage2.decay <= 1.0)) {
    fail("decay must lie in (0, 1]");
  }
  if (stage2.len_min < 2 || stage2.len_max < stage2.len_min) fail("need 2 <= stage2.len_min <= stage2.len_max");
  if (!(loss.lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(loss.rotation_weight >= 0.0)) fail("rotation_weight must be >= 0");
  if (!(rms_decay >= 0.0 && rms_decay < 1.0)) fail("rms_decay must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (layers != 1 && layers != 3) fail("layers must be 1 or 3");
  if (hidden < 1) fail("hidden must be >= 1");
  if (!(interval > 0.0)) fail("interval must be > 0");
}

TrainConfig preset(std::string_view name) {
  TrainConfig cfg;
  if (name == "strands") {
    cfg.layers = 1;
    cfg.interval = 1.0;
    cfg.use_time = true;
    cfg.stage1 = FixedStage{20, 100, 0.005, 0.98};
    cfg.stage2 = DynamicStage{8, 20, 100, 0.003, 0.98};
  } else if (name == "lcas") {
    cfg.layers = 3;
    cfg.interval = 0.4;
    cfg.use_time = false;
    cfg.stage1 = FixedStage{30, 100, 0.005, 0.98};
    cfg.stage2 = DynamicStage{10, 20, 100, 0.003, 0.98};
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected strands or lcas)");
  }
  return cfg;
}

void apply_config(TrainConfig& cfg, const std::vector<KeyValue>& entries) {
  for (const auto& kv : entries) {
    const auto& k = kv.key;
    const auto& v = kv.value;
    try {
      auto as_int = [&] { return static_cast<int>(parse_int(v, k)); };
      auto as_double = [&] { return parse_double(v, k); };
      if (k == "preset") cfg = preset(v);
      else if (k == "batch_size") cfg.batch_size = as_int();
      else if (k == "stage1.seq_len") cfg.stage1.seq_len = as_int();
      else if (k == "stage1.epochs") cfg.stage1.epochs = as_int();
      else if (k == "stage1.lr") cfg.stage1.lr = as_double();
      else if (k == "stage1.decay") cfg.stage1.decay = as_double();
      else if (k == "stage2.len_min") cfg.stage2.len_min = as_int();
      else if (k == "stage2.len_max") cfg.stage2.len_max = as_int();
      else if (k == "stage2.epochs") cfg.stage2.epochs = as_int();
      else if (k == "stage2.lr") cfg.stage2.lr = as_double();
      else if (k == "stage2.decay") cfg.stage2.decay = as_double();
      else if (k == "lambda") cfg.loss.lambda = as_double();
      else if (k == "rotation_weight") cfg.loss.rotation_weight = as_double();
      else if (k == "regularize_biases") cfg.loss.regularize_biases = parse_bool(v, k);
      else if (k == "rms_decay") cfg.rms_decay = as_double();
      else if (k == "epsilon") cfg.epsilon = as_double();
      else if (k == "grad_clip") cfg.grad_clip = as_double();
      else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(v, k));
      else if (k == "layers") cfg.layers = as_int();
      else if (k == "use_time") cfg.use_time = parse_bool(v, k);
      else if (k == "hidden") cfg.hidden = as_int();
      else if (k == "interval") cfg.interval = as_double();
      else throw ConfigError("unknown key '" + k + "'");
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  cfg.validate();
}

double epoch_learning_rate(double lr0, double decay, int epoch) { return lr0 * std::pow(decay, epoch); }

namespace {

void append_windows(const EncodedTrajectory& traj, Eigen::Index len, std::vector<TrainingWindow>& out) {
  const Eigen::Index inputs = traj.features.rows() - 1;
  for (Eigen::Index start = 0; start < inputs; start += len) {
    const Eigen::Index n = std::min(len, inputs - start);
    TrainingWindow w;
    w.inputs = traj.features.middleRows(start, n);
    w.targets = traj.poses.middleRows(start + 1, n);
    w.length = static_cast<std::size_t>(n);
    out.push_back(std::move(w));
  }
}

}  // namespace

std::vector<TrainingWindow> make_training_windows(const std::vector<EncodedTrajectory>& trajectories, int seq_len,
                                                  std::mt19937_64* rng) {
  if (seq_len < 1) throw std::invalid_argument("make_training_windows: seq_len must be >= 1");
  const bool any_usable = std::any_of(trajectories.begin(), trajectories.end(),
                                      [](const EncodedTrajectory& t) { return t.features.rows() >= 3; });
  if (!any_usable) throw DataError("make_training_windows: no trajectory with at least 3 samples");

  std::vector<TrainingWindow> windows;
  for (const auto& traj : trajectories) append_windows(traj, seq_len, windows);
  if (rng != nullptr) std::shuffle(windows.begin(), windows.end(), *rng);
  return windows;
}

std::vector<TrainingWindow> make_training_windows(const Dataset& ds, const FeatureEncoding& encoding, int seq_len,
                                                  std::mt19937_64* rng) {
  std::vector<EncodedTrajectory> encoded;
  encoded.reserve(ds.trajectories.size());
  for (const auto& t : ds.trajectories) encoded.push_back(encode_trajectory(t, encoding));
  return make_training_windows(encoded, seq_len, rng);
}

SequenceBatch assemble_batch(const std::vector<const TrainingWindow*>& windows) {
  if (windows.empty()) throw std::invalid_argument("assemble_batch: no windows");
  std::size_t max_len = 0;
  std::vector<std::size_t> lengths;
  lengths.reserve(windows.size());
  for (const auto* w : windows) {
    lengths.push_back(w->length);
    max_len = std::max(max_len, w->length);
  }
  const auto rows = static_cast<Eigen::Index>(windows.size());
  SequenceBatch batch;
  batch.mask = make_mask(lengths, max_len);
  batch.inputs.assign(max_len, Matrix::Zero(rows, kFeatureDim));
  batch.targets.assign(max_len, Matrix::Zero(rows, kTargetDim));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto* w = windows[static_cast<std::size_t>(r)];
    for (std::size_t k = 0; k < w->length; ++k) {
      batch.inputs[k].row(r) = w->inputs.row(static_cast<Eigen::Index>(k));
      batch.targets[k].row(r) = w->targets.row(static_cast<Eigen::Index>(k));
    }
  }
  return batch;
}

RmsPropState make_rmsprop_state(const Weights<Matrix>& params) {
  return params.transform([](const char*, const Matrix& m, bool) -> Matrix { return Matrix::Zero(m.rows(), m.cols()); });
}

double rmsprop_step(Weights<Matrix>& params, Weights<Matrix> grads, RmsPropState& state,
                    const RmsPropOptions& options) {
  double sq = 0.0;
  grads.visit([&](const char* name, const Matrix& g, bool) {
    if (!g.allFinite()) throw TrainingError(std::string("non-finite gradient in block ") + name);
    sq += g.squaredNorm();
  });
  const double norm = std::sqrt(sq);
  const double factor = norm > options.grad_clip ? options.grad_clip / norm : 1.0;

  auto p = params.blocks();
  auto g = grads.blocks();
  auto c = state.blocks();
  for (std::size_t i = 0; i < p.size(); ++i) {
    detail::require_same_shape("rmsprop_step", *p[i], *g[i]);
    detail::require_same_shape("rmsprop_step", *p[i], *c[i]);
    if (factor != 1.0) *g[i] *= factor;
    c[i]->array() = options.rms_decay * c[i]->array() + (1.0 - options.rms_decay) * g[i]->array().square();
    p[i]->array() -= options.lr * g[i]->array() / (c[i]->array().sqrt() + options.epsilon);
  }
  return norm;
}

std::string format_epoch_log(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << ',' << e.stage << ',' << format_double(e.lr) << ',' << format_double(e.loss.nll_position) << ','
     << format_double(e.loss.rotation_l2) << ',' << format_double(e.loss.regularization) << ','
     << format_double(e.loss.total);
  return os.str();
}

namespace {

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, ModelParams& params, const ProgressSink& progress)
      : cfg_(cfg), params_(params), progress_(progress), cache_(make_rmsprop_state(params.weights)) {}

  LossBreakdown run_batch(const std::vector<const TrainingWindow*>& windows, double lr, int stage, int epoch,
                          std::size_t batch_index) {
    const SequenceBatch batch = assemble_batch(windows);
    Tape<double> tape;
    const auto bound = bind(tape, params_.weights);
    const BatchLoss loss = sequence_loss(tape, bound, params_.layers, params_.hidden, batch, cfg_.loss);
    if (!std::isfinite(loss.breakdown.total)) {
      throw TrainingError("non-finite loss at stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                          " batch " + std::to_string(batch_index));
    }
    tape.backward(loss.total);
    try {
      rmsprop_step(params_.weights, gradients(tape, bound), cache_,
                   RmsPropOptions{lr, cfg_.rms_decay, cfg_.epsilon, cfg_.grad_clip});
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at stage " + std::to_string(stage) + " epoch " +
                          std::to_string(epoch) + " batch " + std::to_string(batch_index));
    }
    return loss.breakdown;
  }

  void finish_epoch(int stage, int epoch, double lr, const LossBreakdown& sum, std::size_t batches,
                    std::vector<EpochLog>& log) {
    EpochLog e;
    e.stage = stage;
    e.epoch = epoch;
    e.lr = lr;
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    e.loss.nll_position = sum.nll_position / n;
    e.loss.rotation_l2 = sum.rotation_l2 / n;
    e.loss.regularization = sum.regularization / n;
    e.loss.total = sum.total / n;
    log.push_back(e);
    if (progress_) progress_(e);
  }

 private:
  const TrainConfig& cfg_;
  ModelParams& params_;
  const ProgressSink& progress_;
  RmsPropState cache_;
};

void add_into(LossBreakdown& acc, const LossBreakdown& b) {
  acc.nll_position += b.nll_position;
  acc.rotation_l2 += b.rotation_l2;
  acc.regularization += b.regularization;
  acc.total += b.total;
}

}  // namespace

TrainResult train(const Dataset& ds_train, const TrainConfig& cfg, const ProgressSink& progress) {
  cfg.validate();
  if (ds_train.trajectories.empty()) throw DataError("train: empty dataset");
  const Dataset ds = std::abs(ds_train.interval - cfg.interval) <= 1e-9 ? ds_train : resample(ds_train, cfg.interval);
  if (ds.trajectories.empty()) throw DataError("train: no trajectory survives resampling");

  TrainResult result;
  ModelParams& params = result.params;
  params = init_params(cfg.seed, cfg.layers, cfg.use_time, cfg.hidden);
  params.interval = cfg.interval;
  params.encoding.use_time = cfg.use_time;
  params.encoding.epoch_day = first_calendar_day(ds);
  params.encoding.norm = fit_norm_stats(ds, cfg.use_time);

  std::vector<EncodedTrajectory> encoded;
  encoded.reserve(ds.trajectories.size());
  for (const auto& t : ds.trajectories) encoded.push_back(encode_trajectory(t, params.encoding));

  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  Trainer trainer(cfg, params, progress);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  // Stage 1: fixed window length.
  auto windows = make_training_windows(encoded, cfg.stage1.seq_len);
  std::vector<const TrainingWindow*> order;
  for (const auto& w : windows) order.push_back(&w);
  for (int epoch = 0; epoch < cfg.stage1.epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg.stage1.lr, cfg.stage1.decay, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::vector<const TrainingWindow*> chunk(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
      add_into(sum, trainer.run_batch(chunk, lr, 1, epoch, batches));
      ++batches;
    }
    trainer.finish_epoch(1, epoch, lr, sum, batches, result.log);
  }

  // Stage 2: window length drawn per batch.
  std::uniform_int_distribution<int> len_dist(cfg.stage2.len_min, cfg.stage2.len_max);
  std::vector<std::size_t> traj_order(encoded.size());
  for (std::size_t i = 0; i < traj_order.size(); ++i) traj_order[i] = i;
  for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg.stage2.lr, cfg.stage2.decay, epoch);
    std::shuffle(traj_order.begin(), traj_order.end(), rng);
    LossBreakdown sum;
    std::size_t batches = 0;
    std::size_t next_traj = 0;
    std::deque<TrainingWindow> pending;
    while (next_traj < traj_order.size() || !pending.empty()) {
      const int len = len_dist(rng);
      while (pending.size() < batch_size && next_traj < traj_order.size()) {
        const auto& traj = encoded[traj_order[next_traj++]];
        std::vector<TrainingWindow> cut;
        append_windows(traj, len, cut);
        for (auto& w : cut) pending.push_back(std::move(w));
      }
      if (pending.empty()) break;
      const std::size_t take = std::min(batch_size, pending.size());
      std::vector<TrainingWindow> batch_windows(std::make_move_iterator(pending.begin()),
                                                std::make_move_iterator(pending.begin() + static_cast<std::ptrdiff_t>(take)));
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(take));
      std::vector<const TrainingWindow*> ptrs;
      for (const auto& w : batch_windows) ptrs.push_back(&w);
      add_into(sum, trainer.run_batch(ptrs, lr, 2, epoch, batches));
      ++batches;
    }
    trainer.finish_epoch(2, epoch, lr, sum, batches, result.log);
  }
  return result;
}

}  // namespace tpose
