#include "nasa/commands.hpp"

#include "nasa/binary_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace nasa {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionMismatch:
    case ErrorCode::Truncated:
    case ErrorCode::ChecksumMismatch: return kExitIo;
    default: return kExitValidation;
  }
}

namespace {

void log_line(const std::string& msg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::cerr << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::Config, std::string("missing ") + what + ": " + p.string());
}

std::vector<FrameSamples> sequence_frames(const Corpus& corpus, int sequence_index) {
  if (sequence_index < 0 || sequence_index >= static_cast<int>(corpus.test_sequences.size()))
    throw Error(ErrorCode::Config, "track.sequence out of range");
  const int id = corpus.test_sequences[sequence_index];
  std::vector<FrameSamples> out;
  for (const auto& f : corpus.test)
    if (f.sequence_id == id) out.push_back(f);
  return out;
}

}  // namespace

void cmd_gen_data(const GenDataOptions& o) {
  if (!o.config.body) throw Error(ErrorCode::Config, "gen-data needs a [body] section");
  o.config.validate();
  const CapsuleBody body = o.config.body->build();
  const Corpus corpus = build_corpus(body, o.config.data);
  ensure_dir(o.out);
  write_corpus(corpus, o.out / "corpus.bin");

  const CorpusSpec& s = o.config.data;
  nlohmann::ordered_json m;
  m["format"] = kCorpusMagic;
  m["dim"] = body.dim();
  m["bones"] = body.bone_count();
  m["seeds"] = {{"animation", s.animation_seed}, {"split", s.split_seed}, {"sample", s.sample_seed}};
  m["frames_per_sequence"] = s.animation.frame_count;
  m["counts"] = {{"train", {{"uniform", s.train_counts.uniform}, {"surface", s.train_counts.surface},
                            {"vertices", s.train_counts.vertices}}},
                 {"test", {{"uniform", s.test_counts.uniform}, {"surface", s.test_counts.surface},
                           {"vertices", s.test_counts.vertices}}},
                 {"sigma_frac", s.train_counts.sigma_frac}};
  m["split"] = {{"train_sequences", corpus.train_sequences}, {"test_sequences", corpus.test_sequences}};
  m["train_frames"] = corpus.train.size();
  m["test_frames"] = corpus.test.size();
  write_text_file(o.out / "manifest.json", m.dump(2) + "\n");
  log_line("gen-data: wrote " + std::to_string(corpus.train.size() + corpus.test.size()) + " frames");
}

TrainResult cmd_train(const TrainOptions& o) {
  o.config.validate();
  if (o.kind == ModelKind::Unstructured && o.lambda_given && o.config.train.lambda > 0.0)
    throw Error(ErrorCode::UnsupportedModel, "the unstructured model does not take the skinning-weight loss");
  require_file(o.corpus, "corpus");
  const Corpus corpus = read_corpus(o.corpus);
  const ModelConfig mc = o.config.model(o.kind, corpus.body.dim(), corpus.body.bone_count());
  OccupancyModel model = OccupancyModel::initialized(mc, derive_seed(o.config.train.seed, 99));
  const std::vector<Pose> poses = poses_of(corpus.train);
  ensure_dir(o.out);
  const TrainResult result = train(model, corpus.body, poses, o.config.train, [&](int step, const OccupancyModel& m) {
    save_checkpoint(m, o.out / ("checkpoint_" + std::to_string(step) + ".bin"));
  });
  save_checkpoint(model, o.out / "checkpoint.bin");
  write_text_file(o.out / "loss.csv", loss_history_csv(result));
  if (!result.history.empty())
    log_line("train: final window loss " + std::to_string(result.history.back().total));
  return result;
}

MetricsReport cmd_eval(const EvalOptions& o) {
  o.config.validate();
  require_file(o.corpus, "corpus");
  if (o.checkpoint) require_file(*o.checkpoint, "checkpoint");
  const Corpus corpus = read_corpus(o.corpus);
  OccupancyModel model;
  FieldFn field;
  if (o.checkpoint) {
    model = load_checkpoint(*o.checkpoint);
    if (model.config().dim != corpus.body.dim() || model.config().bones != corpus.body.bone_count())
      throw Error(ErrorCode::DimensionMismatch, "checkpoint does not match the corpus body");
    field = model_field(model, BlendMode::Hard);
  } else {
    field = oracle_field(corpus.body);
  }
  const auto& frames = o.train_split ? corpus.train : corpus.test;
  const MetricsReport report = evaluate_frames(field, corpus.body, frames, o.config.eval);
  ensure_dir(o.out);
  write_text_file(o.out / "metrics.csv", metrics_csv(report));
  if (o.svg && corpus.body.dim() == 2) {
    for (const auto& f : frames) {
      if (f.frame_index != 0 && f.frame_index != static_cast<int>(o.config.data.animation.frame_count) / 2) continue;
      const PosedBones posed = forward_kinematics(corpus.body.rig, f.pose);
      const LevelSet ls = extract_surface_points(field, corpus.body, posed, o.config.eval.grid_res);
      write_text_file(o.out / ("levelset_seq" + std::to_string(f.sequence_id) + "_frame" +
                               std::to_string(f.frame_index) + ".svg"),
                      level_set_svg(corpus.body, posed, ls, o.config.eval.seed));
    }
  }
  log_line("eval: miou " + std::to_string(report.miou));
  return report;
}

TrackResult cmd_track(const TrackOptions& o) {
  o.config.validate();
  require_file(o.corpus, "corpus");
  require_file(o.checkpoint, "checkpoint");
  const Corpus corpus = read_corpus(o.corpus);
  const OccupancyModel model = load_checkpoint(o.checkpoint);
  if (model.config().dim != corpus.body.dim() || model.config().bones != corpus.body.bone_count())
    throw Error(ErrorCode::DimensionMismatch, "checkpoint does not match the corpus body");
  TrackConfig cfg = o.config.track;
  if (!o.config.track_sigma_set) cfg.sigma = TrackConfig::defaults_for(corpus.body).sigma;
  if (o.no_prior) cfg.w_prior = 0.0;
  if (o.no_smoothing) {
    cfg.sigma = 0.0;
    cfg.samples = 1;
  }
  std::vector<FrameSamples> frames = sequence_frames(corpus, o.config.track_sequence);
  if (o.max_frames > 0 && static_cast<int>(frames.size()) > o.max_frames) frames.resize(o.max_frames);
  const TrackResult result = track_sequence(model, corpus.body, frames, cfg, true, o.config.eval);
  ensure_dir(o.out);
  write_text_file(o.out / "track.csv", track_csv(result));
  if (corpus.body.dim() == 2 && !result.frames.empty()) {
    const FieldFn field = model_field(model, BlendMode::Hard);
    const std::size_t n = result.frames.size();
    for (std::size_t t : {std::size_t{0}, n / 2, n - 1}) {
      const TrackedFrame& tf = result.frames[t];
      const PosedBones tracked = PosedBones::from_inverses(tf.inverses);
      const PosedBones truth = forward_kinematics(corpus.body.rig, frames[t].pose);
      const FieldFn at_tracked = [&](const PosedBones&, const Points& x) { return field(tracked, x); };
      const LevelSet ls = extract_surface_points(at_tracked, corpus.body, truth, o.config.eval.grid_res);
      write_text_file(o.out / ("track_frame" + std::to_string(tf.frame) + ".svg"),
                      level_set_svg(corpus.body, truth, ls, o.config.eval.seed));
    }
  }
  log_line("track: mean joint error " + std::to_string(result.mean_joint_error()));
  return result;
}

namespace {

struct ReportRow {
  std::string label;
  double miou = 0.0, chamfer = 0.0, fscore = 0.0;
};

ReportRow read_metrics_aggregate(const ReportInput& in) {
  require_file(in.path, "metrics input");
  const auto bytes = read_file(in.path);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  std::string line, last;
  while (std::getline(is, line))
    if (line.rfind("all,mean,", 0) == 0) last = line;
  if (last.empty()) throw Error(ErrorCode::Config, "no aggregate row in " + in.path.string());
  ReportRow row;
  row.label = in.label;
  std::istringstream ls(last.substr(9));
  std::string a, b, c;
  std::getline(ls, a, ',');
  std::getline(ls, b, ',');
  std::getline(ls, c, ',');
  try {
    row.miou = std::stod(a);
    row.chamfer = std::stod(b);
    row.fscore = std::stod(c);
  } catch (const std::exception&) {
    throw Error(ErrorCode::Config, "malformed aggregate row in " + in.path.string());
  }
  return row;
}

const ReportRow* find_row(const std::vector<ReportRow>& rows, const std::string& label) {
  for (const auto& r : rows) {
    std::string l = r.label;
    for (auto& ch : l) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (l == label) return &r;
  }
  return nullptr;
}

}  // namespace

void cmd_report(const ReportOptions& o) {
  if (o.inputs.empty()) throw Error(ErrorCode::Config, "report needs at least one input");
  std::vector<ReportRow> rows;
  for (const auto& in : o.inputs) rows.push_back(read_metrics_aggregate(in));
  const ReportRow* u = find_row(rows, "u");
  const ReportRow* r = find_row(rows, "r");
  const ReportRow* d = find_row(rows, "d");
  std::string order = "n/a";
  if (u && r && d) order = (d->miou >= r->miou && r->miou >= u->miou) ? "yes" : "no";

  ensure_dir(o.out);
  std::ostringstream csv, md;
  csv << std::setprecision(9) << "model,miou,chamfer_l1,fscore,d_ge_r_ge_u\n";
  md << std::fixed << std::setprecision(4) << "| model | mIoU | Chamfer-L1 | F-score |\n|---|---|---|---|\n";
  for (const auto& row : rows) {
    csv << row.label << ',' << row.miou << ',' << row.chamfer << ',' << row.fscore << ',' << order << '\n';
    md << "| " << row.label << " | " << row.miou << " | " << row.chamfer << " | " << row.fscore << " |\n";
  }
  md << "\nD >= R >= U on mIoU: " << order << '\n';
  write_text_file(o.out / "report.csv", csv.str());
  write_text_file(o.out / "report.md", md.str());

  std::ostringstream svg;
  const double bar = 60.0, gap = 30.0, height = 300.0;
  const double width = gap + rows.size() * (bar + gap);
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + 40 << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double h = std::clamp(rows[i].miou, 0.0, 1.0) * height;
    const double x = gap + i * (bar + gap);
    svg << "<rect x=\"" << x << "\" y=\"" << height - h << "\" width=\"" << bar << "\" height=\"" << h
        << "\" fill=\"#3a6ea5\"/>\n";
    svg << "<text x=\"" << x + bar / 2 << "\" y=\"" << height + 16 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << rows[i].label << " " << std::setprecision(3) << rows[i].miou << std::setprecision(2) << "</text>\n";
  }
  svg << "</svg>\n";
  write_text_file(o.out / "report.svg", svg.str());
}

namespace {

int threads_from_env() {
  if (const char* s = std::getenv("NASAOCC_THREADS")) {
    const int n = std::atoi(s);
    if (n > 0) return n;
  }
  return 0;
}

void load_config(RunConfig& cfg, const std::string& path) {
  if (path.empty()) return;
  require_file(path, "config");
  cfg.apply(read_config_file(path));
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Articulated occupancy models: data, training, evaluation and tracking", "nasa-occ"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: NASAOCC_THREADS or all cores)");

  std::string config_path, out, corpus, checkpoint, model = "d", projection;
  std::optional<int> iterations, seed, width, steps, sequence;
  std::optional<double> lambda, lr, w_prior;
  bool oracle = false, svg = false, train_split = false, no_prior = false, no_smoothing = false;
  int max_frames = 0;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", config_path, "Config file")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train an occupancy model");
  tr->add_option("--config", config_path, "Config file");
  tr->add_option("--corpus", corpus, "Corpus file")->required();
  tr->add_option("--model", model, "Model kind")->check(CLI::IsMember({"u", "r", "d"}));
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--iterations", iterations, "Training steps");
  tr->add_option("--lambda-weights", lambda, "Skinning-weight loss weight");
  tr->add_option("--learning-rate", lr, "Adam learning rate");
  tr->add_option("--seed", seed, "Training seed");
  tr->add_option("--width", width, "Network width");
  tr->add_option("--projection", projection, "learned or identity")->check(CLI::IsMember({"learned", "identity"}));

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--config", config_path, "Config file");
  ev->add_option("--corpus", corpus, "Corpus file")->required();
  auto* ck = ev->add_option("--checkpoint", checkpoint, "Checkpoint file");
  ev->add_flag("--oracle", oracle, "Evaluate the analytic body instead of a model")->excludes(ck);
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_flag("--svg", svg, "Write level-set SVGs");
  ev->add_flag("--train-split", train_split, "Evaluate on the training frames");

  auto* tk = app.add_subcommand("track", "Track a test sequence");
  tk->add_option("--config", config_path, "Config file");
  tk->add_option("--corpus", corpus, "Corpus file")->required();
  tk->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  tk->add_option("--out", out, "Output directory")->required();
  tk->add_option("--sequence", sequence, "Test sequence index");
  tk->add_option("--steps", steps, "Optimizer steps per frame");
  tk->add_option("--seed", seed, "Tracking seed");
  tk->add_option("--w-prior", w_prior, "Pose prior weight");
  tk->add_option("--frames", max_frames, "Track at most this many frames");
  tk->add_flag("--no-prior", no_prior, "Disable the pose prior");
  tk->add_flag("--no-smoothing", no_smoothing, "Disable occupancy smoothing");

  auto* rp = app.add_subcommand("report", "Compare metric files");
  rp->add_option("--input", inputs, "label=metrics.csv")->required();
  rp->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  if (threads <= 0) threads = threads_from_env();
  if (threads > 0) omp_set_num_threads(threads);

  try {
    RunConfig cfg;
    load_config(cfg, config_path);
    if (gen->parsed()) {
      cmd_gen_data({cfg, out});
    } else if (tr->parsed()) {
      if (iterations) cfg.train.iterations = *iterations;
      if (lambda) cfg.train.lambda = *lambda;
      if (lr) cfg.train.learning_rate = *lr;
      if (seed) cfg.train.seed = static_cast<std::uint64_t>(*seed);
      if (width) cfg.model_width = *width;
      if (projection == "identity") cfg.projection = ProjectionMode::Identity;
      if (projection == "learned") cfg.projection = ProjectionMode::Learned;
      cmd_train({cfg, corpus, out, parse_model_kind(model), lambda.has_value()});
    } else if (ev->parsed()) {
      if (!oracle && checkpoint.empty()) throw Error(ErrorCode::Config, "eval needs --checkpoint or --oracle");
      EvalOptions o{cfg, corpus, std::nullopt, out, svg, train_split};
      if (!oracle) o.checkpoint = checkpoint;
      cmd_eval(o);
    } else if (tk->parsed()) {
      if (sequence) cfg.track_sequence = *sequence;
      if (steps) cfg.track.steps_per_frame = *steps;
      if (seed) cfg.track.seed = static_cast<std::uint64_t>(*seed);
      if (w_prior) cfg.track.w_prior = *w_prior;
      cmd_track({cfg, corpus, checkpoint, out, no_prior, no_smoothing, max_frames});
    } else if (rp->parsed()) {
      ReportOptions o{{}, out};
      for (const auto& s : inputs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::Config, "report input must be label=path");
        o.inputs.push_back({s.substr(0, eq), s.substr(eq + 1)});
      }
      cmd_report(o);
    }
  } catch (const Error& e) {
    std::cerr << "nasa-occ: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "nasa-occ: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace nasa
