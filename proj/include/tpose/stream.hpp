// Newline-delimited streaming protocol over a SessionStore.
//
//   in:  OBS <track_id> <t> <x> <y> <qz> <qw>
//        BYE <track_id>
//   out: PRED <track_id> <t_pred> <step> <x> <y> <qz> <qw> <sigma_x> <sigma_y> <rho>
//        ERR <line-no> <reason>
#pragma once

#include "tpose/predictor.hpp"

#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace tpose {

struct StreamOptions {
  RolloutConfig rollout;  ///< horizon_steps PRED lines follow every OBS
  /// Sessions idle longer than this (in stream time) are dropped; 0 disables.
  double gc_idle = 0.0;
};

struct StreamStats {
  std::size_t lines = 0;
  std::size_t observations = 0;
  std::size_t predictions = 0;
  std::size_t errors = 0;
  std::size_t collected = 0;
  std::size_t rotation_fallbacks = 0;
};

class StreamProcessor {
 public:
  StreamProcessor(std::shared_ptr<const ModelParams> params, StreamOptions options);

  /// Handles one input line and appends any response lines to `out`.
  void process_line(std::string_view line, std::string& out);

  const StreamStats& stats() const { return stats_; }
  const SessionStore& sessions() const { return store_; }

 private:
  void observe(const std::vector<std::string_view>& fields, std::string& out);
  void bye(const std::vector<std::string_view>& fields);

  SessionStore store_;
  StreamOptions options_;
  StreamStats stats_;
  double clock_ = -std::numeric_limits<double>::infinity();
};

/// Reads lines until end of input, flushing after each response block.
StreamStats run_stream(std::istream& in, std::ostream& out, StreamProcessor& processor);

/// Formats one PRED line (without the newline).
std::string format_prediction(const std::string& track_id, const PredictedPose& p);

}  // namespace tpose
