// SPDX-License-Identifier: Apache-2.0
#include "tokentm/dataset.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "tokentm/error.hpp"
#include "tokentm/image_io.hpp"

namespace tokentm {

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestRecord> records;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.image_path = base / j.at("image_path").get<std::string>();
      const auto label = j.at("label").get<long long>();
      if (label < 0) throw InputError(where + ": negative label");
      r.label = static_cast<std::size_t>(label);
      if (j.contains("mask_path") && !j["mask_path"].is_null()) {
        r.mask_path = base / j["mask_path"].get<std::string>();
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError(where + ": " + ex.what());
    }
  }
  if (records.empty()) throw InputError("manifest " + path.string() + " has no records");
  return records;
}

std::vector<EvalSample> load_samples(const std::vector<ManifestRecord>& records) {
  std::vector<EvalSample> samples;
  samples.reserve(records.size());
  for (const auto& r : records) {
    EvalSample s;
    s.id = r.image_path.string();
    s.image = load_image(r.image_path);
    s.label = r.label;
    if (r.mask_path) {
      s.mask = load_mask(*r.mask_path);
      if (s.mask.rows() != s.image.dim(0) || s.mask.cols() != s.image.dim(1)) {
        throw InputError("mask " + r.mask_path->string() + " does not match image size");
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace tokentm
