#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdseg/checkpoint.hpp"
#include "rdseg/eed.hpp"
#include "rdseg/image_io.hpp"
#include "rdseg/manifest.hpp"
#include "rdseg/metrics.hpp"
#include "rdseg/phantom.hpp"
#include "rdseg/pipeline.hpp"
#include "rdseg/training.hpp"

namespace fs = std::filesystem;

namespace {

struct EedCliOptions {
  double sigma = 1.0;
  double rho = 2.0;
  std::optional<double> lambda;  // unset: 5% of the ROI intensity range
  double tau = 0.15;
  int steps = 30;
};

void add_eed_flags(CLI::App* cmd, EedCliOptions& opts) {
  cmd->add_option("--sigma", opts.sigma, "Gradient pre-smoothing scale in pixels");
  cmd->add_option("--rho", opts.rho, "Structure tensor integration scale in pixels");
  cmd->add_option("--lambda", opts.lambda,
                  "Edge contrast threshold; default is 5% of the image intensity range");
  cmd->add_option("--tau", opts.tau, "Diffusion time step, at most 0.2");
  cmd->add_option("--steps", opts.steps, "Diffusion iterations");
}

rdseg::EedOptions to_eed_options(const EedCliOptions& cli) {
  rdseg::EedOptions opts;
  opts.params.sigma = cli.sigma;
  opts.params.rho = cli.rho;
  opts.params.tau = cli.tau;
  opts.params.steps = cli.steps;
  if (cli.lambda) {
    opts.params.lambda = *cli.lambda;
    opts.lambda_auto = false;
  }
  return opts;
}

// "--lesions 2" or "--lesions 0..3" (inclusive range, drawn per sample).
std::pair<int, int> parse_lesion_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    const int n = std::stoi(text);
    return {n, n};
  }
  const int lo = std::stoi(text.substr(0, dots));
  const int hi = std::stoi(text.substr(dots + 2));
  if (lo > hi || lo < 0) throw CLI::ValidationError("--lesions", "bad range " + text);
  return {lo, hi};
}

int cmd_synth(const std::string& out_dir, int count, int size, const std::string& lesions,
              std::uint64_t seed, const std::string& split) {
  const auto [lo, hi] = parse_lesion_range(lesions);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> lesion_dist(lo, hi);

  std::vector<rdseg::SampleRecord> records;
  for (int i = 0; i < count; ++i) {
    rdseg::PhantomSpec spec;
    spec.size = size;
    spec.lesion_count = lesion_dist(rng);
    spec.seed = seed + static_cast<std::uint64_t>(i) + 1;
    char id[16];
    std::snprintf(id, sizeof id, "p%03d", i);
    records.push_back(rdseg::write_phantom_files(out_dir, id, rdseg::generate_phantom(spec),
                                                 split));
  }
  rdseg::write_manifest(fs::path(out_dir) / "manifest.json", records);
  std::cout << "wrote " << count << " phantoms and manifest.json to " << out_dir << "\n";
  return 0;
}

int cmd_eed(const std::string& in, const std::string& out, const EedCliOptions& cli) {
  const rdseg::Grid image = rdseg::read_raster(in);
  const rdseg::EedParams params = rdseg::resolve_eed(to_eed_options(cli), image);
  rdseg::write_raster(out, rdseg::eed_filter(image, params));
  std::cout << "filtered " << in << " -> " << out << " (lambda " << params.lambda << ", "
            << params.steps << " steps)\n";
  return 0;
}

int cmd_train(const std::string& stage_name, const std::string& manifest_path,
              const std::string& out, rdseg::ModelConfig model_cfg, rdseg::TrainConfig train_cfg,
              bool batch_set, const EedCliOptions& eed, const std::string& log_path) {
  const rdseg::Stage stage = rdseg::parse_stage(stage_name);
  if (!batch_set) train_cfg.batch_size = stage == rdseg::Stage::lung ? 32 : 16;

  const auto samples = rdseg::load_manifest(manifest_path);
  std::vector<rdseg::SampleRecord> train_samples;
  for (const auto& s : samples) {
    if (s.split == "train") train_samples.push_back(s);
  }
  if (train_samples.empty()) train_samples = samples;  // single-split manifests

  auto result = rdseg::train(stage, train_samples, model_cfg, train_cfg, to_eed_options(eed));
  rdseg::save_checkpoint(out, result.model);
  const std::string log = log_path.empty() ? out + ".loss.tsv" : log_path;
  rdseg::write_loss_log(log, result.loss_log);
  std::cout << "stage " << stage_name << ": " << result.loss_log.size() << " epochs, final loss "
            << result.loss_log.back().second << "\ncheckpoint " << out << "\nloss log " << log
            << "\n";
  return 0;
}

int cmd_infer(const std::string& stage_name, const std::string& ckpt, const std::string& in,
              const std::string& out) {
  const rdseg::Stage stage = rdseg::parse_stage(stage_name);
  const auto model = rdseg::load_checkpoint(ckpt);
  const rdseg::Grid image = rdseg::read_raster(in);

  rdseg::Grid prob(0, 0);
  if (stage == rdseg::Stage::lung) {
    prob = rdseg::tensor_to_grid(
        rdseg::unet_forward_infer(model, rdseg::grid_to_tensor(rdseg::normalize_patch(image))));
    rdseg::write_mask(out, rdseg::threshold_probabilities(prob, 0.5));
  } else {
    // the input is treated as an already prepared ROI
    const int target = model.config.input_size;
    const rdseg::Grid resized =
        rdseg::resize_bilinear(rdseg::normalize_patch(image), target, target);
    prob = rdseg::tensor_to_grid(rdseg::unet_forward_infer(model, rdseg::grid_to_tensor(resized)));
    rdseg::Mask mask = rdseg::resize_nearest(rdseg::threshold_probabilities(prob, 0.5), image.h,
                                             image.w);
    rdseg::write_mask(out, mask);
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_pipeline(const std::string& lung_ckpt, const std::string& infection_ckpt,
                 const std::string& in, const std::string& out_prefix, bool overlay,
                 const EedCliOptions& eed) {
  const auto lung_model = rdseg::load_checkpoint(lung_ckpt);
  const auto infection_model = rdseg::load_checkpoint(infection_ckpt);
  const rdseg::Grid image = rdseg::read_raster(in);

  rdseg::CascadeOptions opts;
  opts.eed = to_eed_options(eed);
  const auto result = rdseg::run_cascade(image, lung_model, infection_model, opts);

  rdseg::write_mask(out_prefix + "_lung.pgm", result.lung_mask);
  rdseg::write_mask(out_prefix + "_infection.pgm", result.infection_mask);
  if (overlay) {
    rdseg::write_raster_pgm8(out_prefix + "_overlay.pgm",
                             rdseg::overlay_boundaries(image, result.lung_mask,
                                                       result.infection_mask));
  }
  if (result.lung_empty) {
    std::cerr << "warning: no lung detected; infection mask is empty\n";
  }
  std::cout << "lung pixels " << result.lung_mask.count() << ", infection pixels "
            << result.infection_mask.count() << ", roi (" << result.roi_box.row0 << ","
            << result.roi_box.col0 << "," << result.roi_box.rows << "," << result.roi_box.cols
            << ")\n";
  return 0;
}

int cmd_eval(const std::string& pred_manifest, const std::string& gt_manifest,
             const std::string& out) {
  const auto pred = rdseg::load_manifest(pred_manifest);
  const auto gt = rdseg::load_manifest(gt_manifest);
  std::map<std::string, const rdseg::SampleRecord*> pred_by_id;
  for (const auto& p : pred) pred_by_id[p.id] = &p;

  std::vector<rdseg::CaseMetrics> lung_cases, infection_cases;
  for (const auto& g : gt) {
    const auto it = pred_by_id.find(g.id);
    if (it == pred_by_id.end()) {
      throw std::runtime_error("eval: prediction manifest has no sample \"" + g.id + "\"");
    }
    const auto& p = *it->second;
    auto add_case = [&](const std::optional<std::string>& pm, const std::optional<std::string>& gm,
                        std::vector<rdseg::CaseMetrics>& sink) {
      if (!pm || !gm) return;
      auto m = rdseg::compute_metrics(
          rdseg::confusion_counts(rdseg::read_mask(*pm), rdseg::read_mask(*gm)));
      m.id = g.id;
      sink.push_back(std::move(m));
    };
    add_case(p.lung_mask_path, g.lung_mask_path, lung_cases);
    add_case(p.infection_mask_path, g.infection_mask_path, infection_cases);
  }
  if (lung_cases.empty() && infection_cases.empty()) {
    throw std::runtime_error("eval: the manifests share no comparable masks");
  }

  std::string table = "Task\tDSC\tSensitivity\tSpecificity\n";
  std::string json = "[\n";
  bool first = true;
  auto emit = [&](const std::string& task, std::vector<rdseg::CaseMetrics> cases) {
    if (cases.empty()) return;
    const auto summary = rdseg::aggregate(std::move(cases));
    table += task + "\t" + rdseg::format_mean_std(summary.dsc) + "\t" +
             rdseg::format_mean_std(summary.sensitivity) + "\t" +
             rdseg::format_mean_std(summary.specificity) + "\n";
    if (!first) json += ",\n";
    json += rdseg::summary_json(task, summary);
    first = false;
  };
  emit("lung", std::move(lung_cases));
  emit("infection", std::move(infection_cases));
  json += "\n]\n";

  std::ofstream report(out);
  if (!report) throw std::runtime_error("eval: cannot write " + out);
  report << json;
  std::ofstream tsv(out + ".tsv");
  if (!tsv) throw std::runtime_error("eval: cannot write " + out + ".tsv");
  tsv << table;
  std::cout << table;
  std::cout << "report " << out << " and " << out << ".tsv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage lung/infection CT segmentation: EED preprocessing, "
               "ResDense U-Net, cascaded inference, overlap metrics"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset with a manifest");
  std::string synth_out;
  int synth_count = 8;
  int synth_size = 128;
  std::string synth_lesions = "0..3";
  std::uint64_t synth_seed = 0;
  std::string synth_split = "train";
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of samples");
  synth->add_option("--size", synth_size, "Slice edge length (multiple of 16)");
  synth->add_option("--lesions", synth_lesions, "Lesions per sample: N or LO..HI");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--split", synth_split, "Split label for the manifest");

  // eed
  auto* eed = app.add_subcommand("eed", "Run the edge-enhancing diffusion filter on one raster");
  std::string eed_in, eed_out;
  EedCliOptions eed_opts;
  eed->add_option("--in", eed_in, "Input raster (.pgm or .imgf32)")->required();
  eed->add_option("--out", eed_out, "Output raster")->required();
  add_eed_flags(eed, eed_opts);

  // train
  auto* train = app.add_subcommand("train", "Train one cascade stage from a manifest");
  std::string train_stage, train_manifest, train_out, train_log;
  rdseg::ModelConfig model_cfg;
  rdseg::TrainConfig train_cfg;
  EedCliOptions train_eed;
  train->add_option("--stage", train_stage, "lung or infection")->required();
  train->add_option("--manifest", train_manifest, "Dataset manifest")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--epochs", train_cfg.epochs, "Training epochs");
  auto* batch_opt = train->add_option("--batch", train_cfg.batch_size,
                                      "Batch size (default 32 lung / 16 infection)");
  train->add_option("--lr", train_cfg.learning_rate, "Adam learning rate");
  train->add_option("--seed", train_cfg.seed, "Initialization and shuffle seed");
  train->add_option("--levels", model_cfg.levels, "Encoder/decoder levels");
  train->add_option("--base-channels", model_cfg.base_channels, "Channels at the first level");
  train->add_option("--units", model_cfg.residual_units, "Residual units per block");
  train->add_option("--input-size", model_cfg.input_size, "Training patch edge length");
  train->add_option("--log", train_log, "Loss log path (default: <out>.loss.tsv)");
  add_eed_flags(train, train_eed);

  // infer
  auto* infer = app.add_subcommand("infer", "Single-stage forward pass on one raster");
  std::string infer_stage, infer_ckpt, infer_in, infer_out;
  infer->add_option("--stage", infer_stage, "lung or infection")->required();
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--in", infer_in, "Input raster")->required();
  infer->add_option("--out", infer_out, "Output mask (.pgm)")->required();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Full cascade on one raster");
  std::string pipe_lung, pipe_infection, pipe_in, pipe_prefix;
  bool pipe_overlay = false;
  EedCliOptions pipe_eed;
  pipeline->add_option("--lung-ckpt", pipe_lung, "Lung checkpoint")->required();
  pipeline->add_option("--infection-ckpt", pipe_infection, "Infection checkpoint")->required();
  pipeline->add_option("--in", pipe_in, "Input raster")->required();
  pipeline->add_option("--out-prefix", pipe_prefix, "Prefix for output masks")->required();
  pipeline->add_flag("--overlay", pipe_overlay, "Also write a boundary overlay raster");
  add_eed_flags(pipeline, pipe_eed);

  // eval
  auto* eval = app.add_subcommand("eval", "Compare prediction and ground-truth manifests");
  std::string eval_pred, eval_gt, eval_out;
  eval->add_option("--pred-manifest", eval_pred, "Predictions manifest")->required();
  eval->add_option("--gt-manifest", eval_gt, "Ground truth manifest")->required();
  eval->add_option("--out", eval_out, "Report path (JSON; a .tsv twin is written too)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_count, synth_size, synth_lesions, synth_seed, synth_split);
    }
    if (eed->parsed()) return cmd_eed(eed_in, eed_out, eed_opts);
    if (train->parsed()) {
      return cmd_train(train_stage, train_manifest, train_out, model_cfg, train_cfg,
                       batch_opt->count() > 0, train_eed, train_log);
    }
    if (infer->parsed()) return cmd_infer(infer_stage, infer_ckpt, infer_in, infer_out);
    if (pipeline->parsed()) {
      return cmd_pipeline(pipe_lung, pipe_infection, pipe_in, pipe_prefix, pipe_overlay, pipe_eed);
    }
    if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
