#include "tpose/cli.hpp"

#include "tpose/metrics.hpp"
#include "tpose/model.hpp"
#include "tpose/predictor.hpp"
#include "tpose/stream.hpp"
#include "tpose/synthetic.hpp"
#include "tpose/text.hpp"
#include "tpose/trainer.hpp"
#include "tpose/trajectory.hpp"

#include <CLI11.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tpose {

namespace {

struct RolloutFlags {
  std::string mode = "sample";
  int samples = 20;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd, const std::string& default_mode) {
    mode = default_mode;
    cmd->add_option("--mode", mode, "Position rollout: sample (mean of draws) or mean (predicted mu)")
        ->check(CLI::IsMember({"sample", "mean"}))
        ->capture_default_str();
    cmd->add_option("--samples", samples, "Draws per step in sample mode")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--rollout-seed", seed, "Seed for sampling")->capture_default_str();
  }

  RolloutConfig config(int horizon) const {
    return RolloutConfig{horizon, samples, mode == "mean" ? RolloutMode::kDistributionMean : RolloutMode::kSampleMean,
                         seed};
  }
};

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode | std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  return f;
}

// Writes to `path`, or to `fallback` when the path is empty.
template <typename Fn>
void emit(const std::string& path, std::ostream& fallback, Fn&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  auto f = open_output(path);
  write(f);
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

Dataset load_data(const std::string& path, const std::string& format, std::ostream& err) {
  const FileFormat fmt = format.empty() ? format_for_path(path) : parse_format(format);
  Dataset ds = load_trajectories(path, fmt);
  if (ds.rejected_records > 0) {
    err << "warning: " << ds.rejected_records << " record(s) rejected for degenerate quaternions\n";
  }
  return ds;
}

std::vector<int> parse_horizons(const std::string& text) {
  std::vector<int> out;
  for (auto part : split(text, ',')) {
    const auto h = parse_int(trim(part), "horizon");
    if (h < 1 || h > 100000) throw std::invalid_argument("horizon out of range: " + std::string(part));
    out.push_back(static_cast<int>(h));
  }
  if (out.empty()) throw std::invalid_argument("empty horizon list");
  return out;
}

int serve_socket(int port, StreamProcessor& processor, std::ostream& err) {
  const int server = ::socket(AF_INET, SOCK_STREAM, 0);
  if (server < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  const int yes = 1;
  ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(server, 4) < 0) {
    const std::string msg = std::strerror(errno);
    ::close(server);
    throw std::runtime_error("listen on port " + std::to_string(port) + ": " + msg);
  }
  err << "listening on 127.0.0.1:" << port << '\n';
  // Clients are served one at a time; sessions persist across connections.
  for (;;) {
    const int client = ::accept(server, nullptr, nullptr);
    if (client < 0) {
      if (errno == EINTR) continue;
      break;
    }
    std::string pending, response;
    char buf[4096];
    for (ssize_t n; (n = ::recv(client, buf, sizeof buf, 0)) > 0;) {
      pending.append(buf, static_cast<std::size_t>(n));
      std::size_t eol;
      while ((eol = pending.find('\n')) != std::string::npos) {
        response.clear();
        processor.process_line(std::string_view(pending).substr(0, eol), response);
        pending.erase(0, eol + 1);
        for (std::size_t sent = 0; sent < response.size();) {
          const ssize_t w = ::send(client, response.data() + sent, response.size() - sent, MSG_NOSIGNAL);
          if (w <= 0) break;
          sent += static_cast<std::size_t>(w);
        }
      }
    }
    ::close(client);
  }
  ::close(server);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"T-Pose-LSTM: pedestrian pose trajectory prediction", "tpose"};
  app.require_subcommand(1, 1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic walker dataset");
  std::string scenario_path, synth_out, synth_format;
  std::uint64_t synth_seed = 0;
  synth->add_option("--scenario", scenario_path, "Scenario key-value file")->required();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output trajectory file")->required();
  synth->add_option("--format", synth_format, "csv or jsonl (default from extension)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_data, train_config, train_preset = "strands", train_out, train_log, train_test_out, data_format;
  double train_fraction = 1.0;
  std::uint64_t split_seed = 0;
  std::optional<std::uint64_t> train_seed;
  bool verbose = false;
  train_cmd->add_option("--data", train_data, "Trajectory file")->required();
  train_cmd->add_option("--config", train_config, "Key-value training config (applied after the preset)");
  train_cmd->add_option("--preset", train_preset, "strands or lcas")
      ->check(CLI::IsMember({"strands", "lcas"}))
      ->capture_default_str();
  train_cmd->add_option("--out", train_out, "Model file")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch CSV log");
  train_cmd->add_option("--seed", train_seed, "Training seed (overrides the config)");
  train_cmd->add_option("--train-fraction", train_fraction, "Train on a seeded split of this fraction")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  train_cmd->add_option("--split-seed", split_seed, "Seed of the train/test split")->capture_default_str();
  train_cmd->add_option("--test-out", train_test_out, "Write the held-out split here");
  train_cmd->add_option("--format", data_format, "Input format: csv or jsonl");
  train_cmd->add_flag("--verbose", verbose, "Print each epoch to stderr");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Per-horizon ADE/AEDE report");
  std::string eval_model, eval_data, eval_out, horizons_text = "1,2,3,4,5,6,7,8,9";
  int eval_obs = 5;
  bool eval_baseline = false;
  RolloutFlags eval_rollout;
  eval_cmd->add_option("--model", eval_model, "Model file");
  eval_cmd->add_option("--data", eval_data, "Test trajectory file")->required();
  eval_cmd->add_option("--obs", eval_obs, "Observation length")->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--horizons", horizons_text, "Comma-separated prediction horizons")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report CSV (default stdout)");
  eval_cmd->add_flag("--baseline", eval_baseline, "Score the constant-velocity baseline instead of a model");
  eval_cmd->add_option("--format", data_format, "Input format: csv or jsonl");
  double baseline_interval = 0.0;
  eval_cmd->add_option("--interval", baseline_interval, "Resampling interval in seconds for --baseline");
  eval_rollout.add_to(eval_cmd, "mean");

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "Observation x prediction length ADE grid");
  std::string grid_model, grid_data, grid_out, grid_image;
  int obs_max = 20, pred_max = 20;
  RolloutFlags grid_rollout;
  grid_cmd->add_option("--model", grid_model, "Model file")->required();
  grid_cmd->add_option("--data", grid_data, "Test trajectory file")->required();
  grid_cmd->add_option("--obs-max", obs_max, "Largest observation length")->check(CLI::PositiveNumber)->capture_default_str();
  grid_cmd->add_option("--pred-max", pred_max, "Largest prediction length")->check(CLI::PositiveNumber)->capture_default_str();
  grid_cmd->add_option("--out", grid_out, "Grid CSV (default stdout)");
  grid_cmd->add_option("--image", grid_image, "PPM heat map");
  grid_cmd->add_option("--format", data_format, "Input format: csv or jsonl");
  grid_rollout.add_to(grid_cmd, "mean");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Predict the continuation of each track in a file");
  std::string predict_model, predict_data, predict_out, predict_track;
  int predict_horizon = 5, predict_obs = 0;
  RolloutFlags predict_rollout;
  predict_cmd->add_option("--model", predict_model, "Model file")->required();
  predict_cmd->add_option("--data", predict_data, "Observed trajectory file")->required();
  predict_cmd->add_option("--track", predict_track, "Only this track id");
  predict_cmd->add_option("--horizon", predict_horizon, "Steps to predict")->check(CLI::PositiveNumber)->capture_default_str();
  predict_cmd->add_option("--obs", predict_obs, "Use only the last N observations (0 = all)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  predict_cmd->add_option("--out", predict_out, "Output (default stdout)");
  predict_cmd->add_option("--format", data_format, "Input format: csv or jsonl");
  predict_rollout.add_to(predict_cmd, "sample");

  // stream
  auto* stream_cmd = app.add_subcommand("stream", "Line protocol over stdin/stdout (or a socket)");
  std::string stream_model;
  int stream_horizon = 1, listen_port = 0;
  double gc_idle = 0.0;
  RolloutFlags stream_rollout;
  stream_cmd->add_option("--model", stream_model, "Model file")->required();
  stream_cmd->add_option("--horizon", stream_horizon, "PRED lines per OBS")->check(CLI::PositiveNumber)->capture_default_str();
  stream_cmd->add_option("--gc-idle", gc_idle, "Drop sessions idle this many seconds (0 = never)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  stream_cmd->add_option("--listen", listen_port, "Serve on 127.0.0.1:PORT instead of stdin")->check(CLI::Range(1, 65535));
  stream_rollout.add_to(stream_cmd, "sample");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("tpose");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      const ScenarioConfig scenario = load_scenario(scenario_path);
      const Dataset ds = generate_synthetic(scenario, synth_seed);
      const FileFormat fmt = synth_format.empty() ? format_for_path(synth_out) : parse_format(synth_format);
      save_trajectories(ds, synth_out, fmt);
      err << "wrote " << ds.trajectories.size() << " trajectories (" << ds.total_samples() << " samples) to "
          << synth_out << '\n';
    } else if (train_cmd->parsed()) {
      TrainConfig cfg = preset(train_preset);
      if (!train_config.empty()) apply_config(cfg, load_key_values(train_config));
      if (train_seed) cfg.seed = *train_seed;
      cfg.validate();

      Dataset ds = load_data(train_data, data_format, err);
      if (train_fraction < 1.0) {
        auto [train_part, test_part] = split_dataset(ds, train_fraction, split_seed);
        if (!train_test_out.empty()) save_trajectories(test_part, train_test_out, format_for_path(train_test_out));
        ds = std::move(train_part);
      } else if (!train_test_out.empty()) {
        throw std::invalid_argument("--test-out needs --train-fraction below 1");
      }
      if (cfg.use_time) {
        ModelParams probe;
        probe.encoding.use_time = true;
        check_time_compatibility(probe, ds);
      }

      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file = open_output(train_log);
        log_file << kTrainingLogHeader << '\n';
      }
      const auto progress = [&](const EpochLog& e) {
        const std::string line = format_epoch_log(e);
        if (log_file.is_open()) log_file << line << '\n';
        if (verbose) err << line << '\n';
      };
      const TrainResult result = train(ds, cfg, progress);
      save_model(result.params, train_out);
      err << "trained " << result.params.layers << "-layer model (" << result.params.parameter_count()
          << " parameters) on " << ds.trajectories.size() << " trajectories; wrote " << train_out << '\n';
    } else if (eval_cmd->parsed()) {
      EvalConfig cfg;
      cfg.obs_len = eval_obs;
      cfg.horizons = parse_horizons(horizons_text);
      const Dataset ds = load_data(eval_data, data_format, err);
      EvalReport report;
      if (eval_baseline) {
        cfg.interval = baseline_interval;
        report = evaluate_baseline(ds, cfg);
      } else {
        if (eval_model.empty()) throw CLI::RequiredError("--model");
        const ModelParams params = load_model(eval_model);
        report = evaluate(params, ds, cfg, eval_rollout.config(1));
      }
      emit(eval_out, out, [&](std::ostream& o) { write_report_csv(o, report); });
    } else if (grid_cmd->parsed()) {
      const ModelParams params = load_model(grid_model);
      const Dataset ds = load_data(grid_data, data_format, err);
      const GridReport grid = evaluate_grid(params, ds, obs_max, pred_max, grid_rollout.config(1));
      emit(grid_out, out, [&](std::ostream& o) { write_grid_csv(o, grid); });
      if (!grid_image.empty()) {
        auto f = open_output(grid_image);
        write_heatmap_ppm(f, grid.ade);
      }
    } else if (predict_cmd->parsed()) {
      const ModelParams params = load_model(predict_model);
      Dataset ds = load_data(predict_data, data_format, err);
      check_time_compatibility(params, ds);
      if (ds.interval != params.interval) ds = resample(ds, params.interval);
      const RolloutConfig rcfg = predict_rollout.config(predict_horizon);
      std::size_t emitted = 0;
      emit(predict_out, out, [&](std::ostream& o) {
        for (const auto& traj : ds.trajectories) {
          if (!predict_track.empty() && traj.track_id != predict_track) continue;
          TrackSession session = stream_open(params, traj.track_id);
          const std::size_t first =
              predict_obs > 0 && traj.size() > static_cast<std::size_t>(predict_obs) ? traj.size() - static_cast<std::size_t>(predict_obs) : 0;
          for (std::size_t k = first; k < traj.size(); ++k) {
            session = stream_observe(params, std::move(session), traj.samples[k].pose, traj.samples[k].t);
          }
          for (const auto& p : stream_predict(params, session, rcfg)) o << format_prediction(traj.track_id, p) << '\n';
          ++emitted;
        }
      });
      if (emitted == 0) {
        throw std::runtime_error(predict_track.empty() ? "no trajectories to predict"
                                                       : "track '" + predict_track + "' not found");
      }
    } else if (stream_cmd->parsed()) {
      auto params = std::make_shared<const ModelParams>(load_model(stream_model));
      StreamProcessor processor(params, StreamOptions{stream_rollout.config(stream_horizon), gc_idle});
      if (listen_port > 0) return serve_socket(listen_port, processor, err);
      const StreamStats stats = run_stream(in, out, processor);
      if (stats.errors > 0 || stats.rotation_fallbacks > 0) {
        err << stats.errors << " malformed line(s), " << stats.rotation_fallbacks << " rotation fallback(s)\n";
      }
    }
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << " is required\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace tpose
