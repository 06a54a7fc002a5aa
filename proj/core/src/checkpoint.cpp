#include "rdseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace rdseg {

namespace {

constexpr char kMagic[8] = {'R', 'D', 'S', 'N', '0', '0', '0', '1'};
constexpr int kFormatVersion = 1;
constexpr const char* kBnCounterName = "bn.update_count";

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + what);
}

nlohmann::ordered_json config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["levels"] = c.levels;
  j["base_channels"] = c.base_channels;
  j["in_channels"] = c.in_channels;
  j["out_channels"] = c.out_channels;
  j["residual_units"] = c.residual_units;
  j["input_size"] = c.input_size;
  return j;
}

ModelConfig config_from_json(const std::filesystem::path& path, const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.levels = j.at("levels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.residual_units = j.at("residual_units").get<int>();
    c.input_size = j.at("input_size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("bad model_config: ") + e.what());
  }
  return c;
}

void push_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct TensorView {
  std::string name;
  Shape4 shape;
  std::uint64_t offset = 0;
  std::uint64_t byte_len = 0;
};

// Every persisted tensor in a fixed order: registry entries, then the BN
// update counter as a (1,1,1,1) scalar.
std::vector<std::pair<std::string, Tensor4<float>>> persisted_tensors(
    const UnetModel<float>& model) {
  std::vector<std::pair<std::string, Tensor4<float>>> out;
  out.reserve(model.params.entries.size() + 1);
  for (const auto& e : model.params.entries) out.emplace_back(e.name, e.tensor);
  out.emplace_back(kBnCounterName,
                   Tensor4<float>::full({1, 1, 1, 1}, static_cast<float>(model.bn_updates)));
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const UnetModel<float>& model) {
  const auto tensors = persisted_tensors(model);

  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["model_config"] = config_json(model.config);
  header["train_config_digest"] = model.train_config_digest;
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = {tensor.shape.n, tensor.shape.c, tensor.shape.h, tensor.shape.w};
    t["offset"] = offset;
    const std::uint64_t byte_len = static_cast<std::uint64_t>(tensor.size()) * 4;
    t["byte_len"] = byte_len;
    header["tensors"].push_back(std::move(t));
    offset += byte_len;
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> bytes(kMagic, kMagic + 8);
  push_u64le(bytes, header_text.size());
  bytes.insert(bytes.end(), header_text.begin(), header_text.end());
  for (const auto& [name, tensor] : tensors) {
    for (float v : tensor.data) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      bytes.push_back(static_cast<std::uint8_t>(bits & 0xff));
      bytes.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xff));
      bytes.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xff));
      bytes.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xff));
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(path, "write failed");
}

namespace {

struct ParsedCheckpoint {
  ModelConfig config;
  std::string digest;
  std::vector<TensorView> tensors;
  std::vector<std::uint8_t> payload;
};

ParsedCheckpoint parse_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(path, "bad magic");
  }
  const std::uint64_t header_len = read_u64le(bytes.data() + 8);
  if (bytes.size() < 16 + header_len) fail(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 +
                                                           static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.contains("format_version") || header["format_version"].get<int>() != kFormatVersion) {
    fail(path, "unsupported format_version");
  }

  ParsedCheckpoint p;
  p.config = config_from_json(path, header.at("model_config"));
  p.digest = header.value("train_config_digest", "none");

  std::uint64_t expected_offset = 0;
  for (const auto& t : header.at("tensors")) {
    TensorView v;
    v.name = t.at("name").get<std::string>();
    const auto& s = t.at("shape");
    if (!s.is_array() || s.size() != 4) fail(path, "tensor " + v.name + " has a malformed shape");
    v.shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>(), s[3].get<int>()};
    v.offset = t.at("offset").get<std::uint64_t>();
    v.byte_len = t.at("byte_len").get<std::uint64_t>();
    if (v.byte_len != static_cast<std::uint64_t>(v.shape.count()) * 4) {
      fail(path, "tensor " + v.name + " byte_len disagrees with its shape");
    }
    if (v.offset != expected_offset) {
      fail(path, "tensor " + v.name + " offset is not contiguous with the previous tensor");
    }
    expected_offset += v.byte_len;
    p.tensors.push_back(std::move(v));
  }

  const std::size_t payload_start = 16 + static_cast<std::size_t>(header_len);
  if (bytes.size() < payload_start + expected_offset) {
    fail(path, "truncated payload (tensor " +
                   (p.tensors.empty() ? std::string("<none>") : p.tensors.back().name) +
                   " extends past end of file)");
  }
  p.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload_start), bytes.end());
  return p;
}

void fill_model(const std::filesystem::path& path, const ParsedCheckpoint& p,
                UnetModel<float>& model) {
  std::size_t filled = 0;
  bool counter_seen = false;
  for (const auto& v : p.tensors) {
    Tensor4<float>* dst = nullptr;
    if (v.name == kBnCounterName) {
      counter_seen = true;
      if (!(v.shape == Shape4{1, 1, 1, 1})) fail(path, "tensor " + v.name + " must be scalar");
      const float raw = std::bit_cast<float>(read_u32le(p.payload.data() + v.offset));
      model.bn_updates = static_cast<std::int64_t>(raw);
      continue;
    }
    if (!model.params.has(v.name)) fail(path, "unknown tensor " + v.name);
    dst = &model.params.get(v.name);
    if (!(dst->shape == v.shape)) {
      fail(path, "tensor " + v.name + " shape " + v.shape.str() + " does not match model " +
                     dst->shape.str());
    }
    const std::uint8_t* src = p.payload.data() + v.offset;
    for (std::int64_t i = 0; i < dst->size(); ++i) {
      dst->data[static_cast<std::size_t>(i)] =
          std::bit_cast<float>(read_u32le(src + 4 * i));
    }
    ++filled;
  }
  if (filled != model.params.entries.size()) {
    for (const auto& e : model.params.entries) {
      bool found = false;
      for (const auto& v : p.tensors) found = found || v.name == e.name;
      if (!found) fail(path, "missing tensor " + e.name);
    }
  }
  if (!counter_seen) fail(path, std::string("missing tensor ") + kBnCounterName);
  model.train_config_digest = p.digest;
}

}  // namespace

UnetModel<float> load_checkpoint(const std::filesystem::path& path) {
  const ParsedCheckpoint p = parse_checkpoint(path);
  UnetModel<float> model = build_unet<float>(p.config, 0);
  fill_model(path, p, model);
  return model;
}

void load_checkpoint_into(const std::filesystem::path& path, UnetModel<float>& model) {
  const ParsedCheckpoint p = parse_checkpoint(path);
  if (!(p.config == model.config)) {
    fail(path, "header model_config does not match the loading context");
  }
  fill_model(path, p, model);
}

}  // namespace rdseg
