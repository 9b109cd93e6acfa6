#include "tpose/stream.hpp"

#include "tpose/text.hpp"

#include <istream>
#include <ostream>

namespace tpose {

namespace {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace

StreamProcessor::StreamProcessor(std::shared_ptr<const ModelParams> params, StreamOptions options)
    : store_(std::move(params)), options_(options) {
  options_.rollout.validate();
  if (!(options_.gc_idle >= 0.0)) throw std::invalid_argument("stream: gc_idle must be >= 0");
}

std::string format_prediction(const std::string& track_id, const PredictedPose& p) {
  std::string line = "PRED " + track_id;
  for (const std::string& f :
       {format_double(p.t), std::to_string(p.step), format_double(p.pose.x), format_double(p.pose.y),
        format_double(p.pose.qz), format_double(p.pose.qw), format_double(p.sigma.x()), format_double(p.sigma.y()),
        format_double(p.rho)}) {
    line += ' ';
    line += f;
  }
  return line;
}

void StreamProcessor::observe(const std::vector<std::string_view>& fields, std::string& out) {
  if (fields.size() != 7) throw ProtocolError("OBS expects 6 fields: track_id t x y qz qw");
  const std::string id(fields[1]);
  double v[5];
  static constexpr const char* kNames[] = {"t", "x", "y", "qz", "qw"};
  for (int i = 0; i < 5; ++i) {
    try {
      v[i] = parse_double(fields[static_cast<std::size_t>(i) + 2], kNames[i]);
    } catch (const std::invalid_argument& e) {
      throw ProtocolError(e.what());
    }
  }
  const Pose3DOF pose{v[1], v[2], v[3], v[4]};
  if (pose.rotation().norm() < 1e-3) throw ProtocolError("quaternion norm too small");

  store_.observe(id, pose, v[0]);
  ++stats_.observations;
  if (v[0] > clock_) clock_ = v[0];

  for (const auto& p : store_.predict(id, options_.rollout)) {
    out += format_prediction(id, p);
    out += '\n';
    ++stats_.predictions;
    if (p.rotation_fallback) ++stats_.rotation_fallbacks;
  }
  if (options_.gc_idle > 0.0) stats_.collected += store_.gc(clock_, options_.gc_idle).size();
}

void StreamProcessor::bye(const std::vector<std::string_view>& fields) {
  if (fields.size() != 2) throw ProtocolError("BYE expects 1 field: track_id");
  if (!store_.close(std::string(fields[1]))) throw ProtocolError("unknown track '" + std::string(fields[1]) + "'");
}

void StreamProcessor::process_line(std::string_view line, std::string& out) {
  const std::size_t line_no = ++stats_.lines;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto fields = split_ws(line);
  if (fields.empty() || fields[0].front() == '#') return;
  try {
    if (fields[0] == "OBS") {
      observe(fields, out);
    } else if (fields[0] == "BYE") {
      bye(fields);
    } else {
      throw ProtocolError("unknown command '" + std::string(fields[0]) + "'");
    }
  } catch (const std::exception& e) {
    ++stats_.errors;
    std::string reason = e.what();
    for (char& c : reason) {
      if (c == '\n' || c == '\r') c = ' ';
    }
    out += "ERR " + std::to_string(line_no) + ' ' + reason + '\n';
  }
}

StreamStats run_stream(std::istream& in, std::ostream& out, StreamProcessor& processor) {
  std::string line, response;
  while (std::getline(in, line)) {
    response.clear();
    processor.process_line(line, response);
    if (!response.empty()) {
      out << response;
      out.flush();
    }
  }
  return processor.stats();
}

}  // namespace tpose
