#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rdseg/autodiff.hpp"
#include "rdseg/ops.hpp"
#include "rdseg/tensor.hpp"

namespace rdseg {

inline constexpr double kBnMomentum = 0.9;
inline constexpr double kBnEps = 1e-5;

struct ModelConfig {
  int levels = 5;
  int base_channels = 16;
  int in_channels = 1;
  int out_channels = 1;
  int residual_units = 2;
  // Edge length of the training patches; persisted in checkpoints so the
  // cascade knows which resolution a stage expects.
  int input_size = 256;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate_config(const ModelConfig& c) {
  if (c.levels < 2) throw std::invalid_argument("ModelConfig: levels must be >= 2");
  if (c.base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  if (c.in_channels < 1 || c.out_channels < 1) {
    throw std::invalid_argument("ModelConfig: in/out channels must be >= 1");
  }
  if (c.residual_units < 1) throw std::invalid_argument("ModelConfig: residual_units must be >= 1");
  if (c.input_size < 1) throw std::invalid_argument("ModelConfig: input_size must be >= 1");
}

inline int level_width(const ModelConfig& c, int level) {
  return c.base_channels << (level - 1);
}

inline int required_divisor(const ModelConfig& c) { return 1 << (c.levels - 1); }

struct ResDenseBlockSpec {
  int in_channels = 0;
  int unit_width = 0;
  int out_channels = 0;
  int units = 2;

  [[nodiscard]] int pre_transition_width() const { return in_channels + units * unit_width; }
};

inline ResDenseBlockSpec encoder_block_spec(const ModelConfig& c, int level) {
  return {level == 1 ? c.in_channels : level_width(c, level - 1), level_width(c, level),
          level_width(c, level), c.residual_units};
}

inline ResDenseBlockSpec decoder_block_spec(const ModelConfig& c, int level) {
  return {level_width(c, level + 1) + level_width(c, level), level_width(c, level),
          level_width(c, level), c.residual_units};
}

/// Named tensors in a fixed registration order. Running BN statistics live
/// here as non-trainable entries so checkpoints capture them.
template <std::floating_point T>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Tensor4<T> tensor;
    bool trainable = true;
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> index;

  Tensor4<T>& add(std::string name, Tensor4<T> t, bool trainable) {
    if (index.contains(name)) {
      throw std::logic_error("ParamRegistry: duplicate parameter " + name);
    }
    index.emplace(name, entries.size());
    entries.push_back(Entry{std::move(name), std::move(t), trainable});
    return entries.back().tensor;
  }

  [[nodiscard]] bool has(const std::string& name) const { return index.contains(name); }

  Tensor4<T>& get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::out_of_range("ParamRegistry: no parameter " + name);
    return entries[it->second].tensor;
  }

  const Tensor4<T>& get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::out_of_range("ParamRegistry: no parameter " + name);
    return entries[it->second].tensor;
  }
};

template <std::floating_point T>
struct UnetModel {
  ModelConfig config;
  ParamRegistry<T> params;
  std::int64_t bn_updates = 0;               // batches of running stats recorded so far
  std::string train_config_digest = "none";  // set by the trainer, persisted in checkpoints

  [[nodiscard]] std::int64_t trainable_count() const {
    std::int64_t total = 0;
    for (const auto& e : params.entries) {
      if (e.trainable) total += e.tensor.size();
    }
    return total;
  }
};

namespace unet_detail {

// The three executors (init, tape, infer) walk the identical topology below,
// so parameter registration order, tape order, and inference agree by
// construction.

template <typename Ctx>
typename Ctx::Handle run_residual_unit(Ctx& ctx, typename Ctx::Handle x, int in_ch, int width,
                                       const std::string& prefix) {
  auto a = ctx.conv(x, prefix + ".conv1", in_ch, width, 3);
  a = ctx.bn(a, prefix + ".bn1", width);
  a = ctx.relu(a);
  a = ctx.conv(a, prefix + ".conv2", width, width, 3);
  a = ctx.bn(a, prefix + ".bn2", width);
  auto shortcut = in_ch == width ? x : ctx.conv(x, prefix + ".proj", in_ch, width, 1);
  return ctx.relu(ctx.add(a, shortcut));
}

// Unit k consumes concat(block input, outputs of units 1..k-1); the block
// ends in a 1x1 transition conv over concat(input, all unit outputs).
template <typename Ctx>
typename Ctx::Handle run_resdense_block(Ctx& ctx, typename Ctx::Handle x,
                                        const ResDenseBlockSpec& spec, const std::string& prefix) {
  auto cat = x;
  int cat_ch = spec.in_channels;
  for (int k = 1; k <= spec.units; ++k) {
    auto unit = run_residual_unit(ctx, cat, cat_ch, spec.unit_width,
                                  prefix + ".u" + std::to_string(k));
    cat = ctx.concat(cat, unit);
    cat_ch += spec.unit_width;
  }
  return ctx.conv(cat, prefix + ".trans", cat_ch, spec.out_channels, 1);
}

template <typename Ctx>
typename Ctx::Handle run_unet(Ctx& ctx, const ModelConfig& cfg, typename Ctx::Handle input) {
  std::vector<typename Ctx::Handle> skips;
  auto h = input;
  for (int level = 1; level <= cfg.levels; ++level) {
    h = run_resdense_block(ctx, h, encoder_block_spec(cfg, level),
                           "enc" + std::to_string(level));
    if (level < cfg.levels) {
      skips.push_back(h);
      h = ctx.pool(h);
    }
  }
  for (int level = cfg.levels - 1; level >= 1; --level) {
    h = ctx.up(h);
    h = ctx.concat(h, skips[static_cast<std::size_t>(level - 1)]);
    h = run_resdense_block(ctx, h, decoder_block_spec(cfg, level),
                           "dec" + std::to_string(level));
  }
  h = ctx.conv(h, "head", level_width(cfg, 1), cfg.out_channels, 1);
  return ctx.sigmoid(h);
}

/// Registers parameters with He-normal conv weights, zero biases, identity BN.
template <std::floating_point T>
struct InitCtx {
  using Handle = int;  // channel count

  ParamRegistry<T>& reg;
  std::mt19937_64 rng;

  InitCtx(ParamRegistry<T>& r, std::uint64_t seed) : reg(r), rng(seed) {}

  Handle conv(Handle in, const std::string& name, int in_ch, int out_ch, int k) {
    if (in != in_ch) throw std::logic_error("InitCtx: channel bookkeeping mismatch at " + name);
    Tensor4<T> weight({out_ch, in_ch, k, k});
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : weight.data) v = static_cast<T>(dist(rng));
    reg.add(name + ".w", std::move(weight), true);
    reg.add(name + ".b", Tensor4<T>({1, out_ch, 1, 1}), true);
    return out_ch;
  }

  Handle bn(Handle ch, const std::string& prefix, int width) {
    if (ch != width) throw std::logic_error("InitCtx: channel bookkeeping mismatch at " + prefix);
    reg.add(prefix + ".gamma", Tensor4<T>::full({1, width, 1, 1}, T{1}), true);
    reg.add(prefix + ".beta", Tensor4<T>({1, width, 1, 1}), true);
    reg.add(prefix + ".rmean", Tensor4<T>({1, width, 1, 1}), false);
    reg.add(prefix + ".rvar", Tensor4<T>::full({1, width, 1, 1}, T{1}), false);
    return ch;
  }

  Handle relu(Handle h) { return h; }
  Handle sigmoid(Handle h) { return h; }
  Handle pool(Handle h) { return h; }
  Handle up(Handle h) { return h; }
  Handle concat(Handle a, Handle b) { return a + b; }
  Handle add(Handle a, Handle b) {
    if (a != b) throw std::logic_error("InitCtx: residual add width mismatch");
    return a;
  }
};

/// Records the forward pass on a tape; parameters become named leaves.
template <std::floating_point T>
struct TapeCtx {
  using Handle = typename Tape<T>::NodeId;

  Tape<T>& tape;
  ParamRegistry<T>& reg;
  std::vector<std::pair<std::string, Handle>> param_nodes;

  TapeCtx(Tape<T>& t, ParamRegistry<T>& r) : tape(t), reg(r) {}

  Handle leaf_for(const std::string& name) {
    Handle id = tape.leaf(reg.get(name), name);
    param_nodes.emplace_back(name, id);
    return id;
  }

  Handle conv(Handle x, const std::string& name, int, int, int) {
    Handle w = leaf_for(name + ".w");
    Handle b = leaf_for(name + ".b");
    return tape.conv2d(x, w, b);
  }

  Handle bn(Handle x, const std::string& prefix, int) {
    Handle gamma = leaf_for(prefix + ".gamma");
    Handle beta = leaf_for(prefix + ".beta");
    return tape.batch_norm_train(x, gamma, beta, reg.get(prefix + ".rmean"),
                                 reg.get(prefix + ".rvar"), static_cast<T>(kBnMomentum),
                                 static_cast<T>(kBnEps));
  }

  Handle relu(Handle h) { return tape.relu(h); }
  Handle sigmoid(Handle h) { return tape.sigmoid(h); }
  Handle pool(Handle h) { return tape.maxpool2x2(h); }
  Handle up(Handle h) { return tape.upsample2x(h); }
  Handle concat(Handle a, Handle b) { return tape.concat_channels(a, b); }
  Handle add(Handle a, Handle b) { return tape.add(a, b); }
};

/// Plain evaluation with running statistics; records nothing.
template <std::floating_point T>
struct InferCtx {
  using Handle = Tensor4<T>;

  const ParamRegistry<T>& reg;

  explicit InferCtx(const ParamRegistry<T>& r) : reg(r) {}

  Handle conv(const Handle& x, const std::string& name, int, int, int) {
    return ops::conv2d(x, reg.get(name + ".w"), reg.get(name + ".b"));
  }

  Handle bn(const Handle& x, const std::string& prefix, int) {
    return ops::batch_norm_infer(x, reg.get(prefix + ".gamma"), reg.get(prefix + ".beta"),
                                 reg.get(prefix + ".rmean"), reg.get(prefix + ".rvar"),
                                 static_cast<T>(kBnEps));
  }

  Handle relu(const Handle& h) { return ops::relu(h); }
  Handle sigmoid(const Handle& h) { return ops::sigmoid(h); }
  Handle pool(const Handle& h) { return ops::maxpool2x2(h).out; }
  Handle up(const Handle& h) { return ops::upsample2x(h); }
  Handle concat(const Handle& a, const Handle& b) { return ops::concat_channels(a, b); }
  Handle add(const Handle& a, const Handle& b) { return ops::add(a, b); }
};

}  // namespace unet_detail

template <std::floating_point T>
UnetModel<T> build_unet(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  UnetModel<T> model{cfg, {}, 0, "none"};
  unet_detail::InitCtx<T> ctx(model.params, seed);
  unet_detail::run_unet(ctx, cfg, cfg.in_channels);
  return model;
}

/// A ResDense block as a standalone unit with its own parameters.
template <std::floating_point T>
struct ResDenseBlock {
  ResDenseBlockSpec spec;
  ParamRegistry<T> params;
};

template <std::floating_point T>
ResDenseBlock<T> build_resdense_block(const ResDenseBlockSpec& spec, std::uint64_t seed) {
  ResDenseBlock<T> block{spec, {}};
  unet_detail::InitCtx<T> ctx(block.params, seed);
  unet_detail::run_resdense_block(ctx, spec.in_channels, spec, "block");
  return block;
}

template <std::floating_point T>
struct BlockForward {
  Tape<T> tape;
  typename Tape<T>::NodeId input = 0;
  typename Tape<T>::NodeId output = 0;
  std::vector<std::pair<std::string, typename Tape<T>::NodeId>> param_nodes;
};

/// Train-mode block forward (batch statistics) with the tape retained.
template <std::floating_point T>
BlockForward<T> resdense_block_forward_train(ResDenseBlock<T>& block, const Tensor4<T>& x) {
  if (x.shape.c != block.spec.in_channels) {
    throw std::invalid_argument("resdense_block_forward: input channels " + x.shape.str() +
                                " do not match spec in_channels " +
                                std::to_string(block.spec.in_channels));
  }
  BlockForward<T> fwd;
  fwd.input = fwd.tape.leaf(x);
  unet_detail::TapeCtx<T> ctx(fwd.tape, block.params);
  fwd.output = unet_detail::run_resdense_block(ctx, fwd.input, block.spec, "block");
  fwd.param_nodes = std::move(ctx.param_nodes);
  return fwd;
}

template <std::floating_point T>
Tensor4<T> resdense_block_forward(ResDenseBlock<T>& block, const Tensor4<T>& x) {
  auto fwd = resdense_block_forward_train(block, x);
  return fwd.tape.value(fwd.output);
}

template <std::floating_point T>
void check_forward_input(const ModelConfig& cfg, const Tensor4<T>& x) {
  if (x.shape.c != cfg.in_channels) {
    throw std::invalid_argument("unet_forward: input channels " + x.shape.str() +
                                " do not match model in_channels " +
                                std::to_string(cfg.in_channels));
  }
  const int d = required_divisor(cfg);
  if (x.shape.h % d != 0 || x.shape.w % d != 0) {
    throw std::invalid_argument("unet_forward: input h/w " + x.shape.str() +
                                " must be divisible by " + std::to_string(d));
  }
}

template <std::floating_point T>
struct TrainForward {
  Tape<T> tape;
  typename Tape<T>::NodeId input = 0;
  typename Tape<T>::NodeId output = 0;
  // Trainable leaves in registration order, for gradient collection.
  std::vector<std::pair<std::string, typename Tape<T>::NodeId>> param_nodes;
};

/// Train-mode forward: batch statistics, gradients recorded, running stats
/// updated. The model owner is the single logical writer.
template <std::floating_point T>
TrainForward<T> unet_forward_train(UnetModel<T>& model, const Tensor4<T>& x) {
  check_forward_input(model.config, x);
  TrainForward<T> fwd;
  fwd.input = fwd.tape.leaf(x);
  unet_detail::TapeCtx<T> ctx(fwd.tape, model.params);
  fwd.output = unet_detail::run_unet(ctx, model.config, fwd.input);
  fwd.param_nodes = std::move(ctx.param_nodes);
  model.bn_updates += 1;
  return fwd;
}

/// Infer-mode forward: running statistics, no recording, repeatable.
template <std::floating_point T>
Tensor4<T> unet_forward_infer(const UnetModel<T>& model, const Tensor4<T>& x) {
  check_forward_input(model.config, x);
  if (model.bn_updates == 0) {
    throw std::logic_error(
        "unet_forward: inference requested before any batch statistics were recorded");
  }
  unet_detail::InferCtx<T> ctx(model.params);
  return unet_detail::run_unet(ctx, model.config, Tensor4<T>(x));
}

enum class ForwardMode { train, infer };

template <std::floating_point T>
Tensor4<T> unet_forward(UnetModel<T>& model, const Tensor4<T>& x, ForwardMode mode) {
  if (mode == ForwardMode::infer) return unet_forward_infer(model, x);
  auto fwd = unet_forward_train(model, x);
  return fwd.tape.value(fwd.output);
}

}  // namespace rdseg
