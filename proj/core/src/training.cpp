#include "rdseg/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "rdseg/autodiff.hpp"
#include "rdseg/image_io.hpp"

namespace rdseg {

void validate_config(const TrainConfig& c) {
  if (c.learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (c.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (c.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (c.beta1 <= 0.0 || c.beta1 >= 1.0 || c.beta2 <= 0.0 || c.beta2 >= 1.0) {
    throw std::invalid_argument("TrainConfig: betas must lie in (0, 1)");
  }
  if (c.adam_epsilon <= 0.0) throw std::invalid_argument("TrainConfig: adam_epsilon must be > 0");
  if (c.dice_smooth < 0.0) throw std::invalid_argument("TrainConfig: dice_smooth must be >= 0");
}

std::string train_config_digest(const TrainConfig& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "lr=%.17g;epochs=%d;batch=%d;seed=%llu;b1=%.17g;b2=%.17g;eps=%.17g;smooth=%.17g",
                c.learning_rate, c.epochs, c.batch_size,
                static_cast<unsigned long long>(c.seed), c.beta1, c.beta2, c.adam_epsilon,
                c.dice_smooth);
  // FNV-1a 64
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const char* p = buf; *p; ++p) {
    hash ^= static_cast<std::uint8_t>(*p);
    hash *= 0x100000001b3ull;
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016llx", static_cast<unsigned long long>(hash));
  return out;
}

Stage parse_stage(const std::string& name) {
  if (name == "lung") return Stage::lung;
  if (name == "infection") return Stage::infection;
  throw std::invalid_argument("unknown stage \"" + name + "\" (expected lung or infection)");
}

std::string stage_name(Stage stage) { return stage == Stage::lung ? "lung" : "infection"; }

namespace {

struct LoadedSample {
  Grid image;
  Mask lung;
  Mask infection;  // may be empty
  bool has_infection = false;
};

LoadedSample load_sample(const SampleRecord& r) {
  if (!r.lung_mask_path) {
    throw std::runtime_error("sample \"" + r.id + "\" has no lung mask");
  }
  LoadedSample s;
  s.image = read_raster(r.image_path);
  s.lung = read_mask(*r.lung_mask_path);
  if (s.lung.h != s.image.h || s.lung.w != s.image.w) {
    throw std::runtime_error("sample \"" + r.id + "\": lung mask extents do not match image");
  }
  if (r.infection_mask_path) {
    s.infection = read_mask(*r.infection_mask_path);
    s.has_infection = true;
    if (s.infection.h != s.image.h || s.infection.w != s.image.w) {
      throw std::runtime_error("sample \"" + r.id +
                               "\": infection mask extents do not match image");
    }
  }
  return s;
}

}  // namespace

std::vector<TrainingPair> prepare_lung_set(const std::vector<SampleRecord>& samples,
                                           int target_size) {
  std::vector<TrainingPair> out;
  for (const auto& r : samples) {
    LoadedSample s = load_sample(r);
    TrainingPair pair;
    pair.id = r.id;
    pair.image = resize_bilinear(normalize_patch(s.image), target_size, target_size);
    pair.target = resize_nearest(s.lung, target_size, target_size);
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<TrainingPair> prepare_infection_set(const std::vector<SampleRecord>& samples,
                                                int target_size, const EedOptions& eed) {
  std::vector<TrainingPair> out;
  for (const auto& r : samples) {
    LoadedSample s = load_sample(r);
    if (!s.has_infection || s.infection.empty_mask()) continue;

    const RoiBox box = mask_bounding_box(s.lung, 5);
    Grid roi = crop_grid(s.image, box);
    const Mask roi_lung = crop_mask(s.lung, box);
    const Mask roi_infection = crop_mask(s.infection, box);
    for (std::size_t i = 0; i < roi.size(); ++i) {
      if (!roi_lung.v[i]) roi.v[i] = 0.0;
    }

    const EedParams params = resolve_eed(eed, roi);
    Grid filtered = eed_filter(roi, params);
    // diffusion bleeds across the lung boundary; out-of-lung pixels are not
    // content and stay exactly zero
    for (std::size_t i = 0; i < filtered.size(); ++i) {
      if (!roi_lung.v[i]) filtered.v[i] = 0.0;
    }
    Grid prepared = normalize_patch(filtered);

    TrainingPair pair;
    pair.id = r.id;
    pair.image = resize_bilinear(prepared, target_size, target_size);
    pair.target = resize_nearest(roi_infection, target_size, target_size);
    if (pair.target.empty_mask()) continue;  // nothing left to learn from after resampling
    out.push_back(std::move(pair));
  }
  return out;
}

TrainResult train(Stage stage, const std::vector<SampleRecord>& samples,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const EedOptions& eed) {
  validate_config(model_cfg);
  validate_config(train_cfg);

  std::vector<TrainingPair> pairs = stage == Stage::lung
                                        ? prepare_lung_set(samples, model_cfg.input_size)
                                        : prepare_infection_set(samples, model_cfg.input_size, eed);
  if (pairs.empty()) {
    throw std::runtime_error("train: empty " + stage_name(stage) + " training set");
  }

  TrainResult result{build_unet<float>(model_cfg, train_cfg.seed), {}};
  UnetModel<float>& model = result.model;
  model.train_config_digest = train_config_digest(train_cfg);

  OptimizerState<float> opt = make_optimizer_state(model);
  std::mt19937_64 shuffle_rng(train_cfg.seed);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const int hw = model_cfg.input_size;
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const int b = static_cast<int>(
          std::min<std::size_t>(train_cfg.batch_size, order.size() - start));

      Tensor4<float> x({b, 1, hw, hw});
      Tensor4<float> y({b, 1, hw, hw});
      for (int k = 0; k < b; ++k) {
        const TrainingPair& p = pairs[order[start + k]];
        for (int i = 0; i < hw; ++i) {
          for (int j = 0; j < hw; ++j) {
            x.at(k, 0, i, j) = static_cast<float>(p.image.at(i, j));
            y.at(k, 0, i, j) = p.target.at(i, j) ? 1.0f : 0.0f;
          }
        }
      }

      auto fwd = unet_forward_train(model, x);
      const auto loss_node =
          fwd.tape.soft_dice(fwd.output, y, static_cast<float>(train_cfg.dice_smooth));
      fwd.tape.backward(loss_node);

      adam_step(model, fwd.tape.parameter_gradients(), opt, train_cfg);
      epoch_loss += static_cast<double>(fwd.tape.value(loss_node).data[0]) * b;
    }
    result.loss_log.emplace_back(epoch, epoch_loss / static_cast<double>(pairs.size()));
  }
  return result;
}

void write_loss_log(const std::filesystem::path& path,
                    const std::vector<std::pair<int, double>>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_loss_log: cannot write " + path.string());
  char line[64];
  for (const auto& [epoch, loss] : log) {
    std::snprintf(line, sizeof line, "%d\t%.9e\n", epoch, loss);
    out << line;
  }
}

}  // namespace rdseg
