#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rdseg/grid.hpp"
#include "rdseg/manifest.hpp"
#include "rdseg/network.hpp"
#include "rdseg/ops.hpp"
#include "rdseg/pipeline.hpp"

namespace rdseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 20;
  int batch_size = 32;  // 32 for the lung stage, 16 for the infection stage
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double dice_smooth = 1.0;
};

void validate_config(const TrainConfig& c);

/// Stable digest of the configuration, stored in checkpoints.
std::string train_config_digest(const TrainConfig& c);

/// loss = 1 - (2*sum(p*y) + smooth) / (sum(p) + sum(y) + smooth), per batch
/// item over (c,h,w), averaged across the batch. Returns the gradient with
/// respect to pred. Target values must be exactly 0 or 1.
template <std::floating_point T>
ops::DiceResult<T> soft_dice_loss(const Tensor4<T>& pred, const Tensor4<T>& target, T smooth) {
  for (T v : target.data) {
    if (v != T{0} && v != T{1}) {
      throw std::invalid_argument("soft_dice_loss: target must be binary");
    }
  }
  return ops::soft_dice(pred, target, smooth);
}

/// Adam moments, one pair per trainable parameter in registry order.
template <std::floating_point T>
struct OptimizerState {
  std::vector<Tensor4<T>> first_moment;
  std::vector<Tensor4<T>> second_moment;
  std::int64_t step = 0;
};

template <std::floating_point T>
OptimizerState<T> make_optimizer_state(const UnetModel<T>& model) {
  OptimizerState<T> s;
  for (const auto& e : model.params.entries) {
    if (!e.trainable) continue;
    s.first_moment.emplace_back(e.tensor.shape);
    s.second_moment.emplace_back(e.tensor.shape);
  }
  return s;
}

/// One Adam update with bias correction. Parameters missing from `grads`
/// receive a zero gradient; non-finite gradients abort, naming the parameter.
template <std::floating_point T>
void adam_step(UnetModel<T>& model, const std::map<std::string, Tensor4<T>>& grads,
               OptimizerState<T>& state, const TrainConfig& cfg) {
  const T beta1 = static_cast<T>(cfg.beta1);
  const T beta2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.adam_epsilon);
  const T lr = static_cast<T>(cfg.learning_rate);

  state.step += 1;
  const T bias1 = T{1} - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T bias2 = T{1} - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));

  std::size_t slot = 0;
  for (auto& e : model.params.entries) {
    if (!e.trainable) continue;
    Tensor4<T>& m = state.first_moment.at(slot);
    Tensor4<T>& v = state.second_moment.at(slot);
    ++slot;

    const auto it = grads.find(e.name);
    const Tensor4<T>* g = it == grads.end() ? nullptr : &it->second;
    if (g && !(g->shape == e.tensor.shape)) {
      throw std::invalid_argument("adam_step: gradient shape " + g->shape.str() +
                                  " does not match parameter " + e.name + " " +
                                  e.tensor.shape.str());
    }
    for (std::size_t i = 0; i < e.tensor.data.size(); ++i) {
      const T gi = g ? g->data[i] : T{0};
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adam_step: non-finite gradient for parameter " + e.name);
      }
      m.data[i] = beta1 * m.data[i] + (T{1} - beta1) * gi;
      v.data[i] = beta2 * v.data[i] + (T{1} - beta2) * gi * gi;
      const T m_hat = m.data[i] / bias1;
      const T v_hat = v.data[i] / bias2;
      e.tensor.data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

enum class Stage { lung, infection };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);

struct TrainingPair {
  std::string id;
  Grid image;   // prepared, normalized input
  Mask target;  // stage mask at the model's input size
};

/// Lung stage: normalized full slices resized to target_size, lung masks as
/// targets. Every sample must carry a lung mask.
std::vector<TrainingPair> prepare_lung_set(const std::vector<SampleRecord>& samples,
                                           int target_size);

/// Infection stage: lung-cropped (margin 5), out-of-lung pixels zeroed, EED
/// filtered, normalized, resized to target_size. Samples whose infection
/// mask is empty or missing are excluded.
std::vector<TrainingPair> prepare_infection_set(const std::vector<SampleRecord>& samples,
                                                int target_size, const EedOptions& eed);

struct TrainResult {
  UnetModel<float> model;
  std::vector<std::pair<int, double>> loss_log;  // (epoch, mean loss over samples)
};

/// Full training run: seeded shuffle per epoch, tape forward, soft dice,
/// Adam. Deterministic given (seed, manifest order, config).
TrainResult train(Stage stage, const std::vector<SampleRecord>& samples,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const EedOptions& eed);

/// Rows of "epoch<TAB>mean_loss".
void write_loss_log(const std::filesystem::path& path,
                    const std::vector<std::pair<int, double>>& log);

}  // namespace rdseg
