#include "tpose/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace tpose {

namespace {

struct BlockShape {
  Eigen::Index rows;
  Eigen::Index cols;
};

std::array<BlockShape, Weights<Matrix>::kBlockCount> expected_shapes(int hidden) {
  const Eigen::Index h = hidden;
  return {{{kFeatureDim, h},
           {1, h},
           {2 * h, h},
           {2 * h, h},
           {2 * h, h},
           {2 * h, h},
           {1, h},
           {1, h},
           {1, h},
           {1, h},
           {h, kDecoderOutputs},
           {1, kDecoderOutputs}}};
}

// Little-endian byte writer/reader for the model file.
class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ModelError("model file truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  weights.visit([&](const char*, const Matrix& m, bool) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void ModelParams::validate() const {
  if (layers != 1 && layers != 3) {
    throw ModelError("unsupported layer count " + std::to_string(layers) + " (expected 1 or 3)");
  }
  if (hidden < 1) throw ModelError("hidden size must be positive");
  const auto shapes = expected_shapes(hidden);
  std::size_t i = 0;
  weights.visit([&](const char* name, const Matrix& m, bool) {
    if (m.rows() != shapes[i].rows || m.cols() != shapes[i].cols) {
      throw ShapeError(std::string("block ") + name + ": expected " + detail::shape_str(shapes[i].rows, shapes[i].cols) +
                       ", got " + detail::shape_str(m.rows(), m.cols()));
    }
    if (!m.allFinite()) throw ModelError(std::string("block ") + name + " has non-finite entries");
    ++i;
  });
}

LstmState LstmState::zeros(const ModelParams& params) {
  LstmState s;
  s.layers.assign(static_cast<std::size_t>(params.layers),
                  LayerState{Eigen::RowVectorXd::Zero(params.hidden), Eigen::RowVectorXd::Zero(params.hidden)});
  return s;
}

ModelParams init_params(std::uint64_t seed, int layers, bool use_time, int hidden) {
  ModelParams p;
  p.layers = layers;
  p.hidden = hidden;
  p.encoding.use_time = use_time;
  if (layers != 1 && layers != 3) {
    throw ModelError("unsupported layer count " + std::to_string(layers) + " (expected 1 or 3)");
  }
  if (hidden < 1) throw ModelError("hidden size must be positive");

  std::mt19937_64 rng(seed);
  const auto shapes = expected_shapes(hidden);
  std::size_t i = 0;
  p.weights.visit([&](const char* name, Matrix& m, bool is_weight) {
    const auto [rows, cols] = shapes[i++];
    if (is_weight) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      m.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    } else {
      m = Matrix::Zero(rows, cols);
      if (std::string_view(name) == "cell.forget.b") m.setOnes();
    }
  });
  return p;
}

std::pair<LstmState, GaussianPoseOutput> step(const ModelParams& params, const LstmState& state, const Feature& obs) {
  if (state.layers.size() != static_cast<std::size_t>(params.layers)) {
    throw ShapeError("step: state has " + std::to_string(state.layers.size()) + " layers, model has " +
                     std::to_string(params.layers));
  }
  std::vector<Matrix> cells, hiddens;
  cells.reserve(state.layers.size());
  hiddens.reserve(state.layers.size());
  for (const auto& layer : state.layers) {
    if (layer.cell.size() != params.hidden || layer.hidden.size() != params.hidden) {
      throw ShapeError("step: state width does not match hidden size " + std::to_string(params.hidden));
    }
    cells.emplace_back(layer.cell);
    hiddens.emplace_back(layer.hidden);
  }
  const Matrix input = obs;
  stack_step(params.weights, input, cells, hiddens);
  const auto heads = decode(params.weights, hiddens.back());

  std::pair<LstmState, GaussianPoseOutput> out;
  out.first.layers.resize(cells.size());
  for (std::size_t l = 0; l < cells.size(); ++l) {
    out.first.layers[l].cell = cells[l].row(0);
    out.first.layers[l].hidden = hiddens[l].row(0);
  }
  out.second = GaussianPoseOutput{heads.mu(0, 0),  heads.mu(0, 1),   heads.sigma(0, 0), heads.sigma(0, 1),
                                  heads.rho(0, 0), heads.quat(0, 0), heads.quat(0, 1)};
  return out;
}

SequenceOutput forward_sequence(const ModelParams& params, const Matrix& observations, const LstmState& init_state) {
  if (observations.rows() == 0) throw std::invalid_argument("forward_sequence: empty observation sequence");
  if (observations.cols() != kFeatureDim) throw ShapeError("forward_sequence: expected 6 feature columns");
  SequenceOutput out;
  out.outputs.reserve(static_cast<std::size_t>(observations.rows()));
  out.final_state = init_state;
  for (Eigen::Index k = 0; k < observations.rows(); ++k) {
    auto [next, output] = step(params, out.final_state, observations.row(k));
    out.final_state = std::move(next);
    out.outputs.push_back(output);
  }
  return out;
}

std::string serialize(const ModelParams& params) {
  params.validate();
  Writer w;
  w.bytes(kModelMagic, sizeof(kModelMagic));
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.layers));
  w.u32(static_cast<std::uint32_t>(params.hidden));
  w.u8(params.encoding.use_time ? 1 : 0);
  w.f64(params.interval);
  w.i64(params.encoding.epoch_day);
  for (int d = 0; d < kFeatureDim; ++d) w.f64(params.encoding.norm.mean(d));
  for (int d = 0; d < kFeatureDim; ++d) w.f64(params.encoding.norm.std(d));
  w.u32(static_cast<std::uint32_t>(Weights<Matrix>::kBlockCount));
  params.weights.visit([&](const char* name, const Matrix& m, bool) {
    const std::size_t len = std::strlen(name);
    w.u32(static_cast<std::uint32_t>(len));
    w.bytes(name, len);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  });
  return w.take();
}

ModelParams deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kModelMagic)) != std::string_view(kModelMagic, sizeof(kModelMagic))) {
    throw ModelError("not a model file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw ModelError("unsupported model format version " + std::to_string(version));
  }
  ModelParams p;
  p.layers = static_cast<int>(r.u32());
  p.hidden = static_cast<int>(r.u32());
  if (p.hidden < 1 || p.hidden > (1 << 16)) throw ModelError("implausible hidden size in model file");
  p.encoding.use_time = r.u8() != 0;
  p.interval = r.f64();
  p.encoding.epoch_day = r.i64();
  for (int d = 0; d < kFeatureDim; ++d) p.encoding.norm.mean(d) = r.f64();
  for (int d = 0; d < kFeatureDim; ++d) p.encoding.norm.std(d) = r.f64();
  const std::uint32_t count = r.u32();
  if (count != Weights<Matrix>::kBlockCount) {
    throw ModelError("model file has " + std::to_string(count) + " blocks, expected " +
                     std::to_string(Weights<Matrix>::kBlockCount));
  }
  const auto shapes = expected_shapes(p.hidden);
  std::size_t i = 0;
  p.weights.visit([&](const char* name, Matrix& m, bool) {
    const auto len = r.u32();
    if (r.bytes(len) != name) throw ModelError(std::string("model file: expected block ") + name);
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows != shapes[i].rows || cols != shapes[i].cols) {
      throw ModelError(std::string("model file: bad shape for block ") + name);
    }
    ++i;
    m.resize(rows, cols);
    for (Eigen::Index rr = 0; rr < m.rows(); ++rr)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(rr, c) = r.f64();
  });
  if (!r.done()) throw ModelError("model file has trailing bytes");
  p.validate();
  return p;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelError("write failed for " + path.string());
}

ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace tpose
