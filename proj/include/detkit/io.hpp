#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/data.hpp"
#include "detkit/errors.hpp"
#include "detkit/geometry.hpp"

namespace detkit {

// ---- annotation files (COCO-style subset) --------------------------------
//
// {"images":[{"id","height","width"}],
//  "annotations":[{"image_id","bbox":[x,y,w,h],"category_id"}],
//  "categories":[{"id"}]}
//
// Category ids are remapped to dense [0, K) by ascending id. Boxes with
// non-positive width or height are skipped and counted.

struct Dataset {
  struct Image {
    std::int64_t id = 0;
    int height = 0;
    int width = 0;
    GroundTruth gt;
  };
  std::vector<Image> images;                  // sorted by id
  std::vector<std::int64_t> category_ids;     // ascending original ids; index = dense class
  std::size_t skipped_degenerate = 0;

  int num_classes() const { return static_cast<int>(category_ids.size()); }
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j, const char* key,
                                         const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw SchemaError("annotations: missing key '" + std::string(key) + "' in " + where);
  return j[key];
}

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = require_key(j, key, where);
  if (!v.is_number()) throw SchemaError("annotations: '" + std::string(key) + "' must be numeric in " + where);
  return v.get<double>();
}

}  // namespace detail

inline Dataset dataset_from_json(const nlohmann::json& root) {
  for (const char* key : {"images", "annotations", "categories"})
    if (!root.is_object() || !root.contains(key) || !root[key].is_array())
      throw SchemaError("annotations: missing or non-array '" + std::string(key) + "'");

  Dataset ds;
  for (const auto& cj : root["categories"])
    ds.category_ids.push_back(static_cast<std::int64_t>(detail::require_number(cj, "id", "categories")));
  std::sort(ds.category_ids.begin(), ds.category_ids.end());
  ds.category_ids.erase(std::unique(ds.category_ids.begin(), ds.category_ids.end()), ds.category_ids.end());
  std::map<std::int64_t, int> dense;
  for (std::size_t i = 0; i < ds.category_ids.size(); ++i)
    dense[ds.category_ids[i]] = static_cast<int>(i);

  std::map<std::int64_t, std::size_t> image_index;
  for (const auto& ij : root["images"]) {
    Dataset::Image img;
    img.id = static_cast<std::int64_t>(detail::require_number(ij, "id", "images"));
    img.height = static_cast<int>(detail::require_number(ij, "height", "images"));
    img.width = static_cast<int>(detail::require_number(ij, "width", "images"));
    if (img.height <= 0 || img.width <= 0) throw SchemaError("annotations: non-positive image size");
    if (image_index.count(img.id)) throw SchemaError("annotations: duplicate image id");
    image_index[img.id] = ds.images.size();
    ds.images.push_back(std::move(img));
  }

  for (const auto& aj : root["annotations"]) {
    const std::int64_t image_id =
        static_cast<std::int64_t>(detail::require_number(aj, "image_id", "annotations"));
    auto it = image_index.find(image_id);
    if (it == image_index.end()) throw SchemaError("annotations: annotation references unknown image id");
    const auto& bbox = detail::require_key(aj, "bbox", "annotations");
    if (!bbox.is_array() || bbox.size() != 4) throw SchemaError("annotations: bbox must have 4 entries");
    for (const auto& v : bbox)
      if (!v.is_number()) throw SchemaError("annotations: bbox entries must be numeric");
    const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
    const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
    if (w <= 0 || h <= 0) {
      ++ds.skipped_degenerate;
      continue;
    }
    const std::int64_t cat =
        static_cast<std::int64_t>(detail::require_number(aj, "category_id", "annotations"));
    auto cit = dense.find(cat);
    if (cit == dense.end()) throw SchemaError("annotations: unknown category id");
    ds.images[it->second].gt.push_back(GtInstance{Box(x, y, x + w, y + h), cit->second});
  }

  std::sort(ds.images.begin(), ds.images.end(),
            [](const Dataset::Image& a, const Dataset::Image& b) { return a.id < b.id; });
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("annotations parse error in " + path + ": " + e.what());
  }
  return dataset_from_json(j);
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json root;
  root["images"] = nlohmann::json::array();
  root["annotations"] = nlohmann::json::array();
  root["categories"] = nlohmann::json::array();
  for (std::int64_t cid : ds.category_ids) root["categories"].push_back({{"id", cid}});
  for (const auto& img : ds.images) {
    root["images"].push_back({{"id", img.id}, {"height", img.height}, {"width", img.width}});
    for (const auto& inst : img.gt) {
      root["annotations"].push_back(
          {{"image_id", img.id},
           {"bbox", {inst.box.x1, inst.box.y1, inst.box.width(), inst.box.height()}},
           {"category_id", ds.category_ids.at(static_cast<std::size_t>(inst.class_id))}});
    }
  }
  return root;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open annotations file for writing: " + path);
  out << dataset_to_json(ds).dump() << "\n";
  if (!out) throw IoError("failed writing annotations: " + path);
}

// ---- proposal dumps (JSONL, one image per line) ---------------------------

inline constexpr const char* kProposalSchema = "proposals/v1";
inline constexpr const char* kDetectionSchema = "detections/v1";

struct ImageProposals {
  std::int64_t image_id = 0;
  ProposalSet proposals;
};

namespace detail {

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kRefined: return "refined";
    case Provenance::kPositiveOriginal: return "positive_original";
  }
  throw SchemaError("proposals: unknown provenance value");
}

inline Provenance provenance_from_name(const std::string& s) {
  if (s == "original") return Provenance::kOriginal;
  if (s == "refined") return Provenance::kRefined;
  if (s == "positive_original") return Provenance::kPositiveOriginal;
  throw SchemaError("proposals: unknown provenance '" + s + "'");
}

}  // namespace detail

inline nlohmann::json image_proposals_to_json(const ImageProposals& ip) {
  ip.proposals.validate();
  nlohmann::json j;
  j["schema"] = kProposalSchema;
  j["image_id"] = ip.image_id;
  nlohmann::json boxes = nlohmann::json::array();
  for (const Box& b : ip.proposals.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  j["boxes"] = std::move(boxes);
  if (ip.proposals.scores) j["scores"] = *ip.proposals.scores;
  if (ip.proposals.provenance) {
    nlohmann::json prov = nlohmann::json::array();
    for (Provenance p : *ip.proposals.provenance) prov.push_back(detail::provenance_name(p));
    j["provenance"] = std::move(prov);
  }
  return j;
}

inline ImageProposals image_proposals_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != kProposalSchema)
    throw SchemaError("proposals: missing or unsupported schema " + where);
  if (!j.contains("image_id") || !j["image_id"].is_number_integer())
    throw SchemaError("proposals: missing integer image_id " + where);
  if (!j.contains("boxes") || !j["boxes"].is_array())
    throw SchemaError("proposals: missing boxes array " + where);

  ImageProposals ip;
  ip.image_id = j["image_id"].get<std::int64_t>();
  for (const auto& bj : j["boxes"]) {
    if (!bj.is_array() || bj.size() != 4) throw SchemaError("proposals: box must have 4 entries " + where);
    for (const auto& v : bj)
      if (!v.is_number()) throw SchemaError("proposals: box entries must be numeric " + where);
    try {
      ip.proposals.boxes.emplace_back(bj[0].get<double>(), bj[1].get<double>(), bj[2].get<double>(),
                                      bj[3].get<double>());
    } catch (const std::invalid_argument& e) {
      throw SchemaError("proposals: invalid box " + where + ": " + e.what());
    }
  }
  if (j.contains("scores")) {
    if (!j["scores"].is_array()) throw SchemaError("proposals: scores must be an array " + where);
    ip.proposals.scores.emplace();
    for (const auto& v : j["scores"]) {
      if (!v.is_number()) throw SchemaError("proposals: scores must be numeric " + where);
      ip.proposals.scores->push_back(v.get<double>());
    }
  }
  if (j.contains("provenance")) {
    if (!j["provenance"].is_array()) throw SchemaError("proposals: provenance must be an array " + where);
    ip.proposals.provenance.emplace();
    for (const auto& v : j["provenance"]) {
      if (!v.is_string()) throw SchemaError("proposals: provenance entries must be strings " + where);
      ip.proposals.provenance->push_back(detail::provenance_from_name(v.get<std::string>()));
    }
  }
  try {
    ip.proposals.validate();
  } catch (const SchemaError& e) {
    throw SchemaError(std::string(e.what()) + " " + where);
  }
  return ip;
}

inline void save_proposals(const std::vector<ImageProposals>& all, std::ostream& out) {
  std::vector<const ImageProposals*> ordered;
  ordered.reserve(all.size());
  for (const auto& ip : all) ordered.push_back(&ip);
  std::sort(ordered.begin(), ordered.end(),
            [](const ImageProposals* a, const ImageProposals* b) { return a->image_id < b->image_id; });
  for (const ImageProposals* ip : ordered) out << image_proposals_to_json(*ip).dump() << "\n";
  if (!out) throw IoError("failed writing proposal dump");
}

inline void save_proposals(const std::vector<ImageProposals>& all, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open proposal dump for writing: " + path);
  save_proposals(all, out);
}

inline std::vector<ImageProposals> load_proposals(std::istream& in, const std::string& source = "<stream>") {
  std::vector<ImageProposals> all;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("proposals parse error at " + source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    all.push_back(image_proposals_from_json(j, "at " + source + ":" + std::to_string(line_no)));
  }
  return all;
}

inline std::vector<ImageProposals> load_proposals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proposal dump: " + path);
  return load_proposals(in, path);
}

}  // namespace detkit
