// The pose LSTM: ReLU embedding, one LSTM cell shared by every stacked layer,
// and a 7-output Gaussian pose decoder.
#pragma once

#include "tpose/tape.hpp"
#include "tpose/trajectory.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tpose {

inline constexpr int kDefaultHidden = 128;
/// mu_x, mu_y, sigma_x, sigma_y, rho, qz, qw.
inline constexpr int kDecoderOutputs = 7;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gate weights act on the row [input, h_prev] (width 2H) and produce width H.
template <typename T>
struct CellWeights {
  T w_input, w_forget, w_output, w_state;
  T b_input, b_forget, b_output, b_state;
};

/// Trainable blocks. T is Matrix for stored parameters/gradients and Var for
/// tape-bound copies.
template <typename T>
struct Weights {
  T w_embed, b_embed;
  CellWeights<T> cell;
  T w_decoder, b_decoder;

  /// Calls f(name, block, is_weight_matrix) on every block in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  /// Builds a Weights<U> by mapping every block through f(name, block, is_weight).
  template <typename F>
  auto transform(F&& f) const {
    using U = std::decay_t<decltype(f("", w_embed, true))>;
    Weights<U> out;
    auto src = std::as_const(*this).blocks();
    auto dst = out.blocks();
    for (std::size_t i = 0; i < src.size(); ++i) {
      *dst[i] = f(kBlockNames[i], *src[i], kIsWeight[i]);
    }
    return out;
  }

  static constexpr std::size_t kBlockCount = 12;
  static constexpr const char* kBlockNames[kBlockCount] = {
      "embed.w",       "embed.b",       "cell.input.w", "cell.forget.w", "cell.output.w", "cell.state.w",
      "cell.input.b",  "cell.forget.b", "cell.output.b", "cell.state.b", "decoder.w",     "decoder.b"};
  static constexpr bool kIsWeight[kBlockCount] = {true,  false, true,  true,  true, true,
                                                  false, false, false, false, true, false};

  std::array<T*, kBlockCount> blocks() {
    return {&w_embed,       &b_embed,       &cell.w_input,  &cell.w_forget, &cell.w_output, &cell.w_state,
            &cell.b_input,  &cell.b_forget, &cell.b_output, &cell.b_state,  &w_decoder,     &b_decoder};
  }
  std::array<const T*, kBlockCount> blocks() const {
    return {&w_embed,       &b_embed,       &cell.w_input,  &cell.w_forget, &cell.w_output, &cell.w_state,
            &cell.b_input,  &cell.b_forget, &cell.b_output, &cell.b_state,  &w_decoder,     &b_decoder};
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto ptrs = self.blocks();
    for (std::size_t i = 0; i < kBlockCount; ++i) f(kBlockNames[i], *ptrs[i], kIsWeight[i]);
  }
};

struct ModelParams {
  int layers = 1;
  int hidden = kDefaultHidden;
  /// Resampling interval the model was trained at, in seconds.
  double interval = 0.4;
  FeatureEncoding encoding;
  Weights<Matrix> weights;

  bool use_time() const { return encoding.use_time; }
  std::size_t parameter_count() const;
  void validate() const;
};

struct LayerState {
  Eigen::RowVectorXd cell;
  Eigen::RowVectorXd hidden;

  bool operator==(const LayerState&) const = default;
};

struct LstmState {
  std::vector<LayerState> layers;

  static LstmState zeros(const ModelParams& params);
  bool operator==(const LstmState&) const = default;
};

struct GaussianPoseOutput {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double rho = 0.0;
  double qz_raw = 0.0;
  double qw_raw = 0.0;

  Eigen::Vector2d mu() const { return {mu_x, mu_y}; }
  bool operator==(const GaussianPoseOutput&) const = default;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero except the
/// forget gate, which starts at one.
ModelParams init_params(std::uint64_t seed, int layers, bool use_time, int hidden = kDefaultHidden);

/// Advances the state by one normalized observation. Does not touch `state`.
std::pair<LstmState, GaussianPoseOutput> step(const ModelParams& params, const LstmState& state, const Feature& obs);

struct SequenceOutput {
  std::vector<GaussianPoseOutput> outputs;
  LstmState final_state;
};

/// outputs[k] predicts the pose of row k + 1.
SequenceOutput forward_sequence(const ModelParams& params, const Matrix& observations, const LstmState& init_state);

// --- shared layer math, usable with Matrix or Var --------------------------

/// Per-row decoder heads after activation.
template <typename T>
struct DecoderHeads {
  T mu;     ///< rows x 2
  T sigma;  ///< rows x 2, exp-activated
  T rho;    ///< rows x 1, tanh-activated
  T quat;   ///< rows x 2, raw
};

template <typename T>
T embed(const Weights<T>& w, const T& obs) {
  return relu(add_rowwise(matmul(obs, w.w_embed), w.b_embed));
}

/// One application of the shared cell; returns (cell, hidden).
template <typename T>
std::pair<T, T> lstm_cell(const CellWeights<T>& w, const T& input, const T& cell, const T& hidden) {
  const T joined = concat_cols(input, hidden);
  const T in_gate = sigmoid(add_rowwise(matmul(joined, w.w_input), w.b_input));
  const T forget_gate = sigmoid(add_rowwise(matmul(joined, w.w_forget), w.b_forget));
  const T out_gate = sigmoid(add_rowwise(matmul(joined, w.w_output), w.b_output));
  const T candidate = tanh(add_rowwise(matmul(joined, w.w_state), w.b_state));
  T next_cell = add(hadamard(forget_gate, cell), hadamard(in_gate, candidate));
  T next_hidden = hadamard(out_gate, tanh(next_cell));
  return {std::move(next_cell), std::move(next_hidden)};
}

/// Embeds `obs` and pushes it through every layer, updating cells/hiddens in place.
template <typename T>
void stack_step(const Weights<T>& w, const T& obs, std::vector<T>& cells, std::vector<T>& hiddens) {
  T input = embed(w, obs);
  for (std::size_t l = 0; l < cells.size(); ++l) {
    auto [c, h] = lstm_cell(w.cell, input, cells[l], hiddens[l]);
    cells[l] = std::move(c);
    hiddens[l] = std::move(h);
    input = hiddens[l];
  }
}

template <typename T>
DecoderHeads<T> decode(const Weights<T>& w, const T& top_hidden) {
  const T raw = add_rowwise(matmul(top_hidden, w.w_decoder), w.b_decoder);
  return DecoderHeads<T>{slice_cols(raw, 0, 2), exp(slice_cols(raw, 2, 2)), tanh(slice_cols(raw, 4, 1)),
                         slice_cols(raw, 5, 2)};
}

// --- model file ------------------------------------------------------------

inline constexpr char kModelMagic[8] = {'T', 'P', 'L', 'S', 'T', 'M', '1', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize(const ModelParams& params);
ModelParams deserialize(std::string_view bytes);

void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace tpose
