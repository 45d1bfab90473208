// trn: synthesize datasets, train, run online inference, evaluate and check
// gradients from the command line.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O error.
// Log verbosity: TRN_LOG_LEVEL=trace|debug|info|warn|error|off (default info).

#include <trn/trn.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

/// Thrown for bad user input that CLI11 cannot catch by itself.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("trn");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("TRN_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

void log_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) spdlog::warn("{}", w);
}

/// A subcommand parser: config file support, strict extras, defaults shown.
std::unique_ptr<CLI::App> make_app(const std::string& name, const std::string& description,
                                   const std::string& config_flag) {
  auto app = std::make_unique<CLI::App>(description, "trn " + name);
  app->option_defaults()->always_capture_default();
  app->set_config(config_flag, "", "Config file (TOML/INI, keys are flag names); flags override it");
  app->allow_config_extras(CLI::config_extras_mode::error);
  return app;
}

struct HelpShown {};

/// Parses, printing help here while the app (and its option table) is alive.
void parse(CLI::App& app, int argc, char** argv) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    throw HelpShown{};
  }
}

void echo_config(const CLI::App& app) {
  std::istringstream lines(app.config_to_str(true, false));
  std::string line;
  spdlog::info("effective configuration ({}):", app.get_name());
  while (std::getline(lines, line)) {
    if (!line.empty()) spdlog::info("  {}", line);
  }
}

// ---------------------------------------------------------------- synth

int run_synth(int argc, char** argv) {
  auto app = make_app("synth", "Generate a synthetic segment-structured dataset", "--spec");
  trn::SyntheticSpec spec;
  std::string out;
  bool no_pose = false;
  app->add_option("--out", out, "Output directory")->required();
  app->add_option("--classes", spec.num_classes, "Number of action classes (background excluded)");
  app->add_option("--appearance-dim", spec.appearance_dim, "Appearance feature dimension");
  app->add_option("--motion-dim", spec.motion_dim, "Motion feature dimension");
  app->add_flag("--no-pose", no_pose, "Skip the 134-dimensional pose stream");
  app->add_option("--sigma-ratio", spec.sigma_ratio, "Noise std relative to class-mean spread");
  app->add_option("--mean-segment", spec.mean_segment_chunks, "Mean segment length in chunks");
  app->add_option("--background-prior", spec.background_prior, "Probability that a segment is background");
  app->add_option("--train-videos", spec.train_videos, "Videos tagged train");
  app->add_option("--test-videos", spec.test_videos, "Videos tagged test");
  app->add_option("--chunks", spec.video_chunks, "Chunks per video");
  app->add_option("--chunk-size", spec.chunk_size, "Frames per chunk");
  app->add_option("--fps", spec.fps, "Frames per second");
  app->add_option("--seed", spec.seed, "Random seed");
  parse(*app, argc, argv);
  spec.pose = !no_pose;
  echo_config(*app);

  const auto manifest = trn::generate_synthetic(spec, out);
  spdlog::info("wrote {} videos, {} classes (incl. background) to {}", manifest.videos.size(),
               spec.num_classes + 1, out);
  return kExitOk;
}

// ---------------------------------------------------------------- train

int run_train(int argc, char** argv) {
  auto app = make_app("train", "Train a model on a manifest's train split", "--config");
  std::string manifest_path;
  std::string out;
  std::string metrics_path;
  std::string variant = "TWO_STREAM";
  std::string train_split = "train";
  std::string test_split = "test";
  double target_map = 0.0;
  trn::TrnConfig model;
  trn::TrainConfig training;
  app->add_option("--manifest", manifest_path, "Dataset manifest")->required();
  app->add_option("--out", out, "Checkpoint to write")->required();
  app->add_option("--metrics", metrics_path, "Per-epoch metrics log (JSON lines); default <out>.metrics.jsonl");
  app->add_option("--variant", variant, "ONE_STREAM, TWO_STREAM or FUSED_TWO_STREAM");
  app->add_option("--hidden", model.hidden_size, "Hidden width");
  app->add_option("--decoder-steps", model.decoder_steps, "Decoder (anticipation) steps");
  app->add_option("--lr", training.learning_rate, "Adam learning rate");
  app->add_option("--weight-decay", training.weight_decay, "Decoupled weight decay");
  app->add_option("--batch", training.batch_size, "Windows per Adam step");
  app->add_option("--seq-len", training.seq_len, "Training window length in chunks");
  app->add_option("--epochs", training.epochs, "Maximum epochs");
  app->add_option("--seed", training.seed, "Random seed (initialization and shuffling)");
  app->add_option("--lambda-enc", training.lambda_encoder, "Encoder loss weight");
  app->add_option("--lambda-dec", training.lambda_decoder, "Decoder loss weight");
  app->add_option("--train-split", train_split, "Split tag used for training");
  app->add_option("--test-split", test_split, "Split tag evaluated after every epoch (empty: none)");
  app->add_option("--target-map", target_map, "Stop once test encoder mAP reaches this (0: never)");
  parse(*app, argc, argv);
  echo_config(*app);

  model.fusion = trn::parse_fusion_variant(variant);
  model.seq_len = training.seq_len;
  const auto manifest = trn::Manifest::read(manifest_path);
  const auto classes = trn::ClassMap::read(manifest.classmap.string());
  trn::configure_from_manifest(model, manifest);
  model.num_actions = classes.num_actions();
  model.validate();

  std::vector<std::string> warnings;
  const auto train_set = trn::load_labeled_split(manifest, train_split, classes, model.fusion, &warnings);
  const auto test_set = test_split.empty()
                            ? std::vector<trn::LabeledSequence>{}
                            : trn::load_labeled_split(manifest, test_split, classes, model.fusion, &warnings);
  log_warnings(warnings);
  if (train_set.empty()) throw UsageError("no videos tagged '" + train_split + "' in the manifest");
  spdlog::info("{} train / {} test videos, variant {}, {} parameters", train_set.size(), test_set.size(),
               trn::to_string(model.fusion), trn::TrnParams<double>::zeros(model).parameter_count());

  if (metrics_path.empty()) metrics_path = out + ".metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::ios_base::failure("cannot create metrics log '" + metrics_path + "'");

  auto result = trn::train(train_set, test_set, model, training, [&](const trn::EpochMetrics& m) {
    nlohmann::json rec = {{"epoch", m.epoch}, {"train_loss", m.train_loss}};
    if (m.evaluated) {
      rec["test_encoder_map"] = m.test.encoder_map;
      rec["test_step_maps"] = m.test.step_maps;
      spdlog::info("epoch {:>3}  loss {:.6f}  test mAP {:.4f}  step-1 mAP {:.4f}", m.epoch, m.train_loss,
                   m.test.encoder_map, m.test.step_maps.front());
    } else {
      spdlog::info("epoch {:>3}  loss {:.6f}", m.epoch, m.train_loss);
    }
    metrics << rec.dump() << '\n';
    metrics.flush();
    return !(target_map > 0.0 && m.evaluated && m.test.encoder_map >= target_map);
  });

  trn::save_checkpoint(out, {model, training, result.params, result.adam});
  spdlog::info("checkpoint written to {}", out);
  return kExitOk;
}

// ---------------------------------------------------------------- stream / infer

struct InferenceInputs {
  std::string ckpt;
  std::vector<std::string> features;
  std::string manifest;
  std::string split = "test";
  std::string video_id;
  std::string out;
  int precision = 64;
};

void add_inference_options(CLI::App& app, InferenceInputs& in) {
  app.add_option("--ckpt", in.ckpt, "Checkpoint")->required();
  app.add_option("--features", in.features,
                 "Feature files as role=path (roles: appearance, motion, pose)");
  app.add_option("--manifest", in.manifest, "Run every video of a manifest split instead of --features");
  app.add_option("--split", in.split, "Split tag used with --manifest (empty: all)");
  app.add_option("--video-id", in.video_id, "Video id recorded for --features input (default: file stem)");
  app.add_option("--out", in.out, "Prediction dump to write")->required();
  app.add_option("--precision", in.precision, "Arithmetic width, 64 or 32")->check(CLI::IsMember({32, 64}));
}

std::vector<std::pair<std::string, trn::Sequence<double>>> load_inputs(const InferenceInputs& in,
                                                                       const trn::TrnConfig& config) {
  std::vector<std::pair<std::string, trn::Sequence<double>>> videos;
  if (!in.manifest.empty()) {
    if (!in.features.empty()) throw UsageError("use either --features or --manifest, not both");
    const auto manifest = trn::Manifest::read(in.manifest);
    std::vector<std::string> warnings;
    for (const auto* v : manifest.split(in.split)) {
      videos.emplace_back(v->id, trn::load_video_features(*v, config.fusion, &warnings));
    }
    log_warnings(warnings);
    return videos;
  }
  if (in.features.empty()) throw UsageError("no input: give --features role=path or --manifest");
  trn::Sequence<double> seq;
  std::string id = in.video_id;
  for (const auto& spec : in.features) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--features expects role=path, got '" + spec + "'");
    const std::string role = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    trn::Matrix<double> m = trn::read_features(path).cast<double>();
    if (role == "appearance") {
      seq.appearance = std::move(m);
    } else if (role == "motion") {
      seq.motion = std::move(m);
    } else if (role == "pose") {
      seq.pose = std::move(m);
    } else {
      throw UsageError("unknown stream role '" + role + "'");
    }
    if (id.empty()) {
      id = fs::path(path).stem().string();
      if (const auto dot = id.find('.'); dot != std::string::npos) id = id.substr(0, dot);
    }
  }
  seq.length();
  videos.emplace_back(id, std::move(seq));
  return videos;
}

template <typename T>
trn::VideoPrediction run_video(const trn::TrnConfig& config,
                               const std::shared_ptr<const trn::TrnParams<T>>& params,
                               const std::string& id, const trn::Sequence<double>& features, bool batch) {
  const trn::Sequence<T> seq = features.template cast<T>();
  std::vector<trn::DetectionOutput<T>> outputs;
  if (batch) {
    outputs = trn::trn_forward(*params, config, seq, trn::TrnState<T>::zeros(config.hidden_size)).outputs;
  } else {
    trn::OnlineDetector<T> detector(config, params);
    const std::size_t n = seq.length();
    outputs.reserve(n);
    for (std::size_t t = 0; t < n; ++t) outputs.push_back(detector.push_chunk(seq.chunk(t)));
  }
  return trn::to_video_prediction(id, std::span<const trn::DetectionOutput<T>>(outputs));
}

int run_inference(const InferenceInputs& in, bool batch) {
  const auto ckpt = trn::load_checkpoint(in.ckpt);
  const auto& config = ckpt.config;
  const auto videos = load_inputs(in, config);

  trn::PredictionDump dump;
  dump.chunk_size = config.chunk_size;
  dump.fps = config.fps;
  dump.decoder_steps = config.decoder_steps;
  dump.classes = config.classes();
  if (in.precision == 32) {
    auto params = std::make_shared<const trn::TrnParams<float>>(ckpt.params.cast<float>());
    for (const auto& [id, seq] : videos) dump.videos.push_back(run_video<float>(config, params, id, seq, batch));
  } else {
    auto params = std::make_shared<const trn::TrnParams<double>>(ckpt.params);
    for (const auto& [id, seq] : videos) dump.videos.push_back(run_video<double>(config, params, id, seq, batch));
  }
  std::ofstream out(in.out, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot create dump '" + in.out + "'");
  dump.write(out);
  if (!out) throw std::ios_base::failure("cannot write dump '" + in.out + "'");
  std::size_t chunks = 0;
  for (const auto& v : dump.videos) chunks += v.chunks.size();
  spdlog::info("{} mode: {} videos, {} chunks written to {}", batch ? "batch" : "streaming",
               dump.videos.size(), chunks, in.out);
  return kExitOk;
}

int run_stream(int argc, char** argv) {
  auto app = make_app("stream", "Online inference, one chunk at a time", "--config");
  InferenceInputs in;
  add_inference_options(*app, in);
  parse(*app, argc, argv);
  echo_config(*app);
  return run_inference(in, false);
}

int run_infer(int argc, char** argv) {
  auto app = make_app("infer", "Inference over whole sequences (streaming unless --batch)", "--config");
  InferenceInputs in;
  bool batch = false;
  add_inference_options(*app, in);
  app->add_flag("--batch", batch, "Use the full-sequence forward pass");
  parse(*app, argc, argv);
  echo_config(*app);
  return run_inference(in, batch);
}

// ---------------------------------------------------------------- eval

int run_eval(int argc, char** argv) {
  auto app = make_app("eval", "Per-frame mAP for detection and every anticipation step", "--config");
  std::string dump_path;
  std::string gt_path;
  std::string classmap_path;
  std::string json_path;
  std::string label = "model";
  bool keep_ambiguous = false;
  bool expand_frames = false;
  double grid = 0.25;
  app->add_option("--dump", dump_path, "Prediction dump")->required();
  app->add_option("--gt", gt_path, "Ground-truth annotations (video, class, start, end)")->required();
  app->add_option("--classmap", classmap_path, "Class map (index<TAB>name)")->required();
  app->add_option("--json", json_path, "Also write the numbers as JSON");
  app->add_option("--label", label, "Row label in the report");
  app->add_flag("--keep-ambiguous", keep_ambiguous, "Score chunks inside Ambiguous intervals");
  app->add_flag("--expand-frames", expand_frames, "Replicate chunk samples once per frame");
  app->add_option("--grid", grid, "Spacing of the fixed horizon header row, seconds");
  parse(*app, argc, argv);
  echo_config(*app);

  const auto classes = trn::ClassMap::read(classmap_path);
  const auto gt = trn::GroundTruth::read(gt_path, classes);
  const auto dump = trn::PredictionDump::read(dump_path);
  if (dump.classes != classes.size()) {
    throw UsageError("dump has " + std::to_string(dump.classes) + " classes, class map has " +
                     std::to_string(classes.size()));
  }
  trn::EvalOptions options{!keep_ambiguous, expand_frames};
  std::vector<std::string> warnings;
  const auto labels = trn::label_videos(dump, gt, options, &warnings);
  log_warnings(warnings);

  const auto detection = trn::per_frame_map(dump, labels, options);
  for (auto c : detection.skipped) spdlog::warn("class '{}' has no positives; skipped", classes.name(c));
  const auto row = trn::report_row(label, "", dump, labels, options);
  const std::vector<trn::ReportRow> rows{row};
  std::cout << trn::render_report(rows, {dump.chunk_size, dump.fps, grid});
  std::cout << "\nPer-class detection AP (%):\n";
  for (std::size_t c = 1; c < classes.size(); ++c) {
    const auto& ap = detection.per_class[c];
    std::cout << "  " << classes.name(c) << ": " << (ap ? trn::format_fixed(100.0 * *ap) : "skipped") << '\n';
  }
  if (!json_path.empty()) {
    nlohmann::json doc = {{"encoder_map", detection.map}, {"step_maps", nlohmann::json::array()},
                          {"average", row.average() / 100.0}};
    for (std::size_t i = 1; i <= dump.decoder_steps; ++i) {
      doc["step_maps"].push_back(trn::anticipation_map(dump, labels, i, options).map);
    }
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot create '" + json_path + "'");
    out << doc.dump(2) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int run_gradcheck(int argc, char** argv) {
  auto app = make_app("gradcheck", "Compare analytic gradients with central differences", "--config");
  trn::TrnConfig model;
  model.hidden_size = 4;
  model.decoder_steps = 2;
  model.num_actions = 2;
  model.appearance_dim = 5;
  model.motion_dim = 3;
  model.pose_dim = 4;
  std::size_t length = 4;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::string variant = "TWO_STREAM";
  bool corrupt = false;
  app->add_option("--seed", seed, "Random seed for parameters, inputs and labels");
  app->add_option("--variant", variant, "ONE_STREAM, TWO_STREAM or FUSED_TWO_STREAM");
  app->add_option("--hidden", model.hidden_size, "Hidden width");
  app->add_option("--decoder-steps", model.decoder_steps, "Decoder steps");
  app->add_option("--actions", model.num_actions, "Action classes (background excluded)");
  app->add_option("--length", length, "Sequence length in chunks");
  app->add_option("--appearance-dim", model.appearance_dim, "Appearance dimension");
  app->add_option("--motion-dim", model.motion_dim, "Motion dimension");
  app->add_option("--pose-dim", model.pose_dim, "Pose dimension");
  app->add_option("--tolerance", tolerance, "Maximum accepted relative error");
  app->add_option("--step", step, "Central-difference step");
  app->add_flag("--corrupt-gradient", corrupt, "Perturb the analytic gradient (self-test)")->group("");
  parse(*app, argc, argv);
  echo_config(*app);

  model.fusion = trn::parse_fusion_variant(variant);
  model.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_matrix = [&](std::size_t rows, std::size_t cols) {
    trn::Matrix<double> m(rows, cols);
    for (auto& v : m.values()) v = gauss(rng);
    return m;
  };
  trn::Sequence<double> seq;
  seq.appearance = random_matrix(length, model.appearance_dim);
  if (model.uses_motion()) seq.motion = random_matrix(length, model.motion_dim);
  if (model.uses_pose()) seq.pose = random_matrix(length, model.pose_dim);
  std::uniform_int_distribution<std::size_t> pick(0, model.num_actions);
  std::vector<std::size_t> labels(length);
  for (auto& l : labels) l = pick(rng);
  auto params = trn::TrnParams<double>::init(model, seed + 1);

  const auto lg = trn::sequence_loss_and_gradient(params, model, seq, labels);
  auto analytic = lg.gradient.flatten();
  if (corrupt && !analytic.empty()) analytic[analytic.size() / 2] += 0.1;
  const auto theta = params.flatten();
  auto probe = params;
  const auto report = trn::grad_check(
      [&](std::span<const double> values) {
        probe.assign(values);
        return trn::sequence_loss(probe, model, seq, labels);
      },
      theta, analytic, step);
  const bool pass = report.max_relative_error < tolerance;
  std::cout << "parameters: " << theta.size() << "\n"
            << "loss: " << lg.loss << "\n"
            << "max relative error: " << report.max_relative_error << " (coordinate " << report.worst_index
            << ", analytic " << report.worst_analytic << ", numeric " << report.worst_numeric << ")\n"
            << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------- report

int run_report(int argc, char** argv) {
  auto app = make_app("report", "Render published reference results as report tables", "--config");
  double fps = 30.0;
  double grid = 0.25;
  app->add_option("--fps", fps, "Frames per second for the chunk-duration header");
  app->add_option("--grid", grid, "Spacing of the fixed horizon header row, seconds");
  parse(*app, argc, argv);
  for (const auto& table : trn::reference_results()) {
    std::cout << table.title << "\n";
    std::cout << trn::render_report(table.rows, {table.chunk_size, fps, grid}) << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- pose

int run_pose(int argc, char** argv) {
  auto app = make_app("pose", "Build a pose feature file from per-frame keypoint documents", "--config");
  std::string dir;
  std::string video;
  std::string out;
  std::size_t chunk_size = 6;
  bool carry_forward = false;
  app->add_option("--keypoints", dir, "Directory of <video>_<frame>_keypoints.json files")->required();
  app->add_option("--video", video, "Video id")->required();
  app->add_option("--out", out, "Feature file to write")->required();
  app->add_option("--chunk-size", chunk_size, "Frames per chunk");
  app->add_flag("--carry-forward", carry_forward, "Repeat the last valid pose for chunks without one");
  parse(*app, argc, argv);
  echo_config(*app);

  const auto frames = trn::skeleton::read_openpose_video(dir, video);
  if (frames.size() < chunk_size) throw UsageError("video '" + video + "' has fewer frames than one chunk");
  const auto features = trn::skeleton::pose_sequence_features(frames, chunk_size, carry_forward);
  trn::write_features(out, features.cast<float>());
  spdlog::info("{} frames -> {} pose chunks written to {}", frames.size(), features.rows(), out);
  return kExitOk;
}

void print_usage(std::ostream& out) {
  out << "usage: trn <command> [options]\n\n"
         "commands:\n"
         "  synth      generate a synthetic dataset\n"
         "  train      train a model from a manifest\n"
         "  stream     online inference, one chunk at a time\n"
         "  infer      inference (use --batch for the full-sequence pass)\n"
         "  eval       per-frame detection and anticipation mAP report\n"
         "  gradcheck  finite-difference gradient check\n"
         "  report     render published reference results\n"
         "  pose       keypoint documents -> pose feature file\n\n"
         "Run 'trn <command> --help' for the options of a command.\n";
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  if (argc < 2) {
    print_usage(std::cerr);
    return kExitValidation;
  }
  const std::string command = argv[1];
  if (command == "-h" || command == "--help" || command == "help") {
    print_usage(std::cout);
    return kExitOk;
  }
  static const std::map<std::string, int (*)(int, char**)> commands{
      {"synth", run_synth},   {"train", run_train},         {"stream", run_stream},
      {"infer", run_infer},   {"eval", run_eval},           {"gradcheck", run_gradcheck},
      {"report", run_report}, {"pose", run_pose}};
  const auto it = commands.find(command);
  if (it == commands.end()) {
    std::cerr << "trn: unknown command '" << command << "'\n";
    print_usage(std::cerr);
    return kExitValidation;
  }
  try {
    return it->second(argc - 1, argv + 1);
  } catch (const HelpShown&) {
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const std::ios_base::failure& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  }
}
