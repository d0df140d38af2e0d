// mdnet: train, run and evaluate the motion/descriptor network from the shell.
//
// Exit codes: 0 ok, 2 usage, 3 bad input file, 4 numerical failure,
// 5 unreadable or incompatible checkpoint.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mdnet/checkpoint.hpp"
#include "mdnet/config.hpp"
#include "mdnet/dataset.hpp"
#include "mdnet/features.hpp"
#include "mdnet/geometry.hpp"
#include "mdnet/image_io.hpp"
#include "mdnet/io_util.hpp"
#include "mdnet/metrics.hpp"
#include "mdnet/model.hpp"
#include "mdnet/toy_data.hpp"
#include "mdnet/training.hpp"

namespace {

using namespace mdnet;

enum Exit { kOk = 0, kUsage = 2, kInput = 3, kNumeric = 4, kCheckpoint = 5 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.file, "flat key = value config file");
  cmd->add_option("--set", args.overrides, "override one config key (key=value), repeatable");
}

Config build_config(const ConfigArgs& args) {
  Config cfg = Config::defaults();
  if (!args.file.empty()) cfg.load_file(args.file);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string slurp_or_throw(const std::string& path) {
  try {
    return read_file(path);
  } catch (const IoError&) {
    throw IoError("cannot read " + path);
  }
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string manifest;
  std::string teacher;
  std::string out;
  std::string log;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  Config cfg = build_config(a.config);
  if (!a.manifest.empty()) cfg.set("manifest", a.manifest);
  if (!a.teacher.empty()) cfg.set("teacher_checkpoint", a.teacher);
  const std::string manifest = cfg.get("manifest");
  if (manifest.empty()) throw UsageError("train needs --manifest (or manifest = ... in the config)");

  data::LoadOptions load;
  load.skip_bad_samples = cfg.get_bool("skip_bad_samples");
  if (!cfg.get("label_mapping").empty()) load.mapping.apply_overrides_file(cfg.get("label_mapping"));
  data::LoadReport report;
  const auto samples = data::load_dataset(manifest, load, &report);
  for (const auto& s : report.skipped) std::cerr << "skipped " << s << "\n";
  if (report.unknown_pixels > 0) {
    std::cerr << report.unknown_pixels << " pixels carry ids outside the vocabulary (ignored)\n";
  }

  const auto teacher = cfg.get("teacher_checkpoint").empty()
                           ? model::TeacherParams::initialize(cfg.get_size("teacher_seed"))
                           : model::load_teacher_checkpoint(cfg.get("teacher_checkpoint"));
  const auto tc = cfg.train_config();

  std::vector<train::LossRecord> history;
  auto write_log = [&] {
    if (!a.log.empty()) write_file_atomic(a.log, train::format_loss_report(history));
  };
  train::TrainResult result;
  try {
    result = train::train(samples, teacher, tc, [&](const train::LossRecord& r) {
      history.push_back(r);
      if (!a.quiet) std::cerr << train::format_loss_record(r) << "\n";
    });
  } catch (const train::TrainingError&) {
    write_log();
    throw;
  }
  write_log();
  model::save_checkpoint(result.params, a.out);
  std::printf("samples %zu\nsteps %zu\n", samples.size(), result.history.size());
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::printf("final_loss %.6f %.6f %.6f\n", last.total, last.motion, last.distill);
  }
  std::printf("accuracy %.6f\n", train::coarse_accuracy(result.params, samples));
  return kOk;
}

// --- infer-motion ----------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
  bool full_res = false;
};

int run_infer(const InferArgs& a) {
  const auto params = model::load_mdnet_checkpoint(a.checkpoint);
  const GrayImage image = io::read_gray_image(a.image);
  const GrayImage padded = data::reflect_pad(image, model::kStudentStride);
  const auto out = model::infer(data::image_tensor(padded), params);
  MotionLabelGrid labels = a.full_res ? metrics::predict_labels_upsampled(out.motion_probs, 0,
                                                                          model::kStudentStride)
                                      : metrics::predict_labels(out.motion_probs, 0);
  if (a.full_res) {
    MotionLabelGrid cropped(image.height, image.width);
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) cropped(y, x) = labels(y, x);
    }
    labels = std::move(cropped);
  }
  write_file_atomic(a.out, metrics::format_label_grid(labels));
  std::array<std::size_t, kNumMotionClasses> counts{};
  for (auto v : labels.data) ++counts[class_index(v)];
  std::printf("grid %zu %zu\nunstable %zu\nmoving %zu\nstatic %zu\n", labels.height, labels.width,
              counts[0], counts[1], counts[2]);
  return kOk;
}

// --- extract ---------------------------------------------------------------

struct ExtractArgs {
  ConfigArgs config;
  std::string checkpoint;
  std::string image;
  std::string out;
  bool filter_static = false;
  std::optional<std::size_t> max_points;
  std::optional<double> threshold;
  std::optional<double> min_static_prob;
};

int run_extract(const ExtractArgs& a) {
  const Config cfg = build_config(a.config);
  features::ExtractOptions opts;
  opts.detector = cfg.detector_config();
  opts.filter_static = a.filter_static || cfg.get_bool("filter_static");
  opts.min_static_prob = cfg.get_double("min_static_prob");
  if (a.max_points) opts.detector.max_points = *a.max_points;
  if (a.threshold) opts.detector.threshold = *a.threshold;
  if (a.min_static_prob) opts.min_static_prob = *a.min_static_prob;

  const auto params = model::load_mdnet_checkpoint(a.checkpoint);
  const GrayImage image = io::read_gray_image(a.image);
  const auto feats = features::extract_features(image, params, opts);
  write_file_atomic(a.out, features::format_feature_file(feats));
  std::printf("features %zu\n", feats.size());
  return kOk;
}

// --- match -----------------------------------------------------------------

struct MatchArgs {
  ConfigArgs config;
  std::string a;
  std::string b;
  std::string out;
  std::optional<double> ratio;
  bool no_mutual = false;
};

int run_match(const MatchArgs& m) {
  const Config cfg = build_config(m.config);
  auto mc = cfg.match_config();
  if (m.ratio) mc.ratio = *m.ratio;
  if (m.no_mutual) mc.mutual = false;
  const auto fa = features::read_feature_file(m.a);
  const auto fb = features::read_feature_file(m.b);
  const auto matches = features::match_features(fa, fb, mc);
  const auto corrs = features::to_correspondences(fa, fb, matches);
  write_file_atomic(m.out, geometry::format_correspondences(corrs));
  std::printf("matches %zu\n", corrs.size());
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalIouArgs {
  std::string pred;
  std::string truth;
  std::string checkpoint;
  std::string manifest;
  bool full_res = false;
};

metrics::ConfusionMatrix model_confusion(const EvalIouArgs& a) {
  const auto params = model::load_mdnet_checkpoint(a.checkpoint);
  const auto samples = data::load_dataset(a.manifest);
  metrics::ConfusionMatrix cm;
  for (const auto& s : samples) {
    const auto out = model::infer(data::image_tensor(s.image), params);
    if (!a.full_res) {
      metrics::accumulate(cm, metrics::predict_labels(out.motion_probs, 0), s.labels);
      continue;
    }
    // Full resolution: pixel labels re-derived from the semantic ids, padding excluded.
    auto truth = data::semantic_to_motion(s.semantic, data::Vocabulary::cityscapes(),
                                          data::LabelMapping::defaults());
    for (std::size_t y = 0; y < truth.height; ++y) {
      for (std::size_t x = 0; x < truth.width; ++x) {
        if (y >= s.original_height || x >= s.original_width) truth(y, x) = MotionAttribute::Ignore;
      }
    }
    metrics::accumulate(cm,
                        metrics::predict_labels_upsampled(out.motion_probs, 0,
                                                          model::kStudentStride),
                        truth);
  }
  return cm;
}

int run_eval_iou(const EvalIouArgs& a) {
  metrics::ConfusionMatrix cm;
  if (!a.checkpoint.empty() || !a.manifest.empty()) {
    if (a.checkpoint.empty() || a.manifest.empty()) {
      throw UsageError("model evaluation needs both --checkpoint and --manifest");
    }
    cm = model_confusion(a);
  } else {
    if (a.pred.empty() || a.truth.empty()) {
      throw UsageError("eval iou needs --pred and --truth, or --checkpoint and --manifest");
    }
    std::istringstream pin(slurp_or_throw(a.pred)), tin(slurp_or_throw(a.truth));
    metrics::accumulate(cm, metrics::parse_label_grid(pin, a.pred),
                        metrics::parse_label_grid(tin, a.truth));
  }
  std::fputs(metrics::format_report(cm).c_str(), stdout);
  return kOk;
}

struct EvalRansacArgs {
  ConfigArgs config;
  std::string corr;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
};

int run_eval_ransac(const EvalRansacArgs& a) {
  const Config cfg = build_config(a.config);
  auto rc = cfg.ransac_config();
  if (a.threshold) rc.threshold_px = *a.threshold;
  if (a.seed) rc.seed = *a.seed;
  const auto corrs = geometry::read_correspondences(a.corr);
  const auto r = geometry::estimate_fundamental_ransac(corrs, rc);
  std::printf("correspondences %zu\ninliers %zu\niterations %zu\ninlier_ratio %.6f\n",
              corrs.size(), r.inlier_count, r.iterations, geometry::inlier_ratio(r.inliers));
  return kOk;
}

struct EvalAlignArgs {
  ConfigArgs config;
  std::string est;
  std::string gt;
  bool no_scale = false;
};

int run_eval_align(const EvalAlignArgs& a) {
  const Config cfg = build_config(a.config);
  const auto est = geometry::read_trajectory(a.est);
  const auto gt = geometry::read_trajectory(a.gt);
  const auto r = geometry::umeyama_align(est, gt, !a.no_scale, cfg.get_double("max_time_diff"));
  std::printf("pairs %zu\ndropped %zu\nscale %.6f\nrmse %.6f\n", r.pairs, r.dropped,
              r.transform.scale, r.rmse);
  return kOk;
}

int run_eval_drift(const std::string& path) {
  const auto traj = geometry::read_trajectory(path);
  std::fputs(geometry::format_drift(geometry::final_drift(traj)).c_str(), stdout);
  return kOk;
}

// --- helpers for fixtures --------------------------------------------------

struct ToyArgs {
  std::string out;
  data::ToyOptions options;
};

int run_make_toy(const ToyArgs& a) {
  const auto toy = data::make_toy_dataset(a.options);
  const auto manifest = data::write_toy_dataset(toy, a.out);
  std::printf("manifest %s\n", manifest.string().c_str());
  return kOk;
}

int run_make_teacher(std::uint64_t seed, const std::string& out) {
  model::save_checkpoint(model::TeacherParams::initialize(seed), out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdnet: motion-aware local features"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train the network on a manifest");
  add_config_options(train, train_args.config);
  train->add_option("--manifest", train_args.manifest, "image<TAB>label manifest");
  train->add_option("--teacher", train_args.teacher, "teacher checkpoint (default: seeded)");
  train->add_option("--out", train_args.out, "output checkpoint")->required();
  train->add_option("--log", train_args.log, "loss log (epoch step lr total motion distill)");
  train->add_flag("--quiet", train_args.quiet, "no per-step progress on stderr");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer-motion", "write the predicted attribute grid");
  infer->add_option("--checkpoint", infer_args.checkpoint)->required();
  infer->add_option("--image", infer_args.image)->required();
  infer->add_option("--out", infer_args.out, "text grid of U/M/S letters")->required();
  infer->add_flag("--full-res", infer_args.full_res, "upsample probabilities to pixel resolution");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "detect corners and write an MDF1 feature file");
  add_config_options(extract, ex.config);
  extract->add_option("--checkpoint", ex.checkpoint)->required();
  extract->add_option("--image", ex.image)->required();
  extract->add_option("--out", ex.out)->required();
  extract->add_flag("--filter-static", ex.filter_static, "keep only static points");
  extract->add_option("--max-points", ex.max_points);
  extract->add_option("--threshold", ex.threshold, "segment-test threshold in [0,1] units");
  extract->add_option("--min-static-prob", ex.min_static_prob);

  MatchArgs ma;
  auto* match = app.add_subcommand("match", "match two feature files");
  add_config_options(match, ma.config);
  match->add_option("a", ma.a, "first feature file")->required();
  match->add_option("b", ma.b, "second feature file")->required();
  match->add_option("--out", ma.out, "correspondence file")->required();
  match->add_option("--ratio", ma.ratio);
  match->add_flag("--no-mutual", ma.no_mutual);

  auto* eval = app.add_subcommand("eval", "metrics");
  eval->require_subcommand(1);
  EvalIouArgs iou_args;
  auto* iou = eval->add_subcommand("iou", "per-class IoU of attribute grids or of a model");
  iou->add_option("--pred", iou_args.pred);
  iou->add_option("--truth", iou_args.truth);
  iou->add_option("--checkpoint", iou_args.checkpoint);
  iou->add_option("--manifest", iou_args.manifest);
  iou->add_flag("--full-res", iou_args.full_res);
  EvalRansacArgs ransac_args;
  auto* ransac = eval->add_subcommand("ransac", "fundamental-matrix RANSAC inlier ratio");
  add_config_options(ransac, ransac_args.config);
  ransac->add_option("corr", ransac_args.corr, "correspondence file")->required();
  ransac->add_option("--threshold", ransac_args.threshold);
  ransac->add_option("--seed", ransac_args.seed);
  EvalAlignArgs align_args;
  auto* align = eval->add_subcommand("align", "Umeyama alignment RMSE");
  add_config_options(align, align_args.config);
  align->add_option("estimate", align_args.est)->required();
  align->add_option("truth", align_args.gt)->required();
  align->add_flag("--no-scale", align_args.no_scale);
  std::string drift_path;
  auto* drift = eval->add_subcommand("drift", "final drift of a closed-loop trajectory");
  drift->add_option("trajectory", drift_path)->required();

  ToyArgs toy_args;
  auto* toy = app.add_subcommand("make-toy", "write the synthetic toy dataset");
  toy->add_option("--out", toy_args.out)->required();
  toy->add_option("--seed", toy_args.options.seed);
  toy->add_option("--count", toy_args.options.count);
  toy->add_option("--size", toy_args.options.size);

  std::uint64_t teacher_seed = 1;
  std::string teacher_out;
  auto* make_teacher = app.add_subcommand("make-teacher", "write a seeded teacher checkpoint");
  make_teacher->add_option("--seed", teacher_seed);
  make_teacher->add_option("--out", teacher_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return run_train(train_args);
    if (*infer) return run_infer(infer_args);
    if (*extract) return run_extract(ex);
    if (*match) return run_match(ma);
    if (*iou) return run_eval_iou(iou_args);
    if (*ransac) return run_eval_ransac(ransac_args);
    if (*align) return run_eval_align(align_args);
    if (*drift) return run_eval_drift(drift_path);
    if (*toy) return run_make_toy(toy_args);
    if (*make_teacher) return run_make_teacher(teacher_seed, teacher_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const model::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const train::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kNumeric;
  } catch (const geometry::GeometryError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const data::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kInput;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInput;
  } catch (const geometry::FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const features::FeatureError& e) {
    std::cerr << "feature error: " << e.what() << "\n";
    return kInput;
  } catch (const metrics::MetricsError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const nn::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
