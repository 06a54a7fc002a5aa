#include "rdseg/manifest.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace rdseg {

namespace {

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path.string();
  return (base / path).string();
}

}  // namespace

std::vector<SampleRecord> load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("manifest: cannot open " + file.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest: " + file.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("samples") || !doc["samples"].is_array()) {
    throw std::runtime_error("manifest: " + file.string() + " must be {\"samples\": [...]}");
  }

  const std::filesystem::path base = file.has_parent_path() ? file.parent_path() : ".";
  std::vector<SampleRecord> out;
  std::set<std::string> seen;
  for (const auto& item : doc["samples"]) {
    SampleRecord r;
    r.id = item.at("id").get<std::string>();
    if (!seen.insert(r.id).second) {
      throw std::runtime_error("manifest: duplicate sample id \"" + r.id + "\"");
    }
    r.image_path = resolve(base, item.at("image_path").get<std::string>());
    if (item.contains("lung_mask_path") && !item["lung_mask_path"].is_null()) {
      r.lung_mask_path = resolve(base, item["lung_mask_path"].get<std::string>());
    }
    if (item.contains("infection_mask_path") && !item["infection_mask_path"].is_null()) {
      r.infection_mask_path = resolve(base, item["infection_mask_path"].get<std::string>());
    }
    if (item.contains("split")) r.split = item["split"].get<std::string>();
    if (r.split != "train" && r.split != "test") {
      throw std::runtime_error("manifest: sample \"" + r.id + "\" has unknown split \"" + r.split +
                               "\"");
    }

    for (const std::string& p :
         {r.image_path, r.lung_mask_path.value_or(r.image_path),
          r.infection_mask_path.value_or(r.image_path)}) {
      if (!std::filesystem::exists(p)) {
        throw std::runtime_error("manifest: sample \"" + r.id + "\" references missing file " + p);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& file, const std::vector<SampleRecord>& samples) {
  nlohmann::ordered_json doc;
  doc["samples"] = nlohmann::ordered_json::array();
  for (const auto& r : samples) {
    nlohmann::ordered_json item;
    item["id"] = r.id;
    item["image_path"] = r.image_path;
    if (r.lung_mask_path) item["lung_mask_path"] = *r.lung_mask_path;
    if (r.infection_mask_path) item["infection_mask_path"] = *r.infection_mask_path;
    item["split"] = r.split;
    doc["samples"].push_back(std::move(item));
  }
  std::ofstream out(file);
  if (!out) throw std::runtime_error("manifest: cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

}  // namespace rdseg
