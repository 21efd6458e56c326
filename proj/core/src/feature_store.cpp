// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "adafusion/error.hpp"

namespace adafusion {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoFailure, "read error on " + path.string());
  return bytes;
}

void write_file_bytes(const std::string& bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorKind::IoFailure, "write error on " + path.string());
}

void truncated(const fs::path& path, std::size_t offset, std::size_t needed) {
  fail(ErrorKind::TruncatedFile, path.string() + ": need " + std::to_string(needed) +
                                     " bytes at offset " + std::to_string(offset));
}

}  // namespace

bool canonical_less(const TileRef& a, const TileRef& b) noexcept {
  return std::tie(a.grid_y, a.grid_x, a.tile_id) < std::tie(b.grid_y, b.grid_x, b.tile_id);
}

bool operator==(const FeatureTable& a, const FeatureTable& b) {
  if (a.tile_ids != b.tile_ids || a.values.rows() != b.values.rows() ||
      a.values.cols() != b.values.cols())
    return false;
  // Bitwise comparison, so -0.0 and 0.0 are different values here.
  return std::memcmp(a.values.data(), b.values.data(),
                     static_cast<std::size_t>(a.values.size()) * sizeof(float)) == 0;
}

FeatureTable read_feature_table(const fs::path& path) {
  const std::string bytes = read_file_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kFeatureTableMagic, 4) != 0)
    fail(ErrorKind::BadMagic, path.string() + ": expected \"PFT1\" at offset 0");
  if (bytes.size() < kFeatureTableHeaderBytes) truncated(path, 4, kFeatureTableHeaderBytes - 4);
  const std::uint32_t version = get_u32(p + 4);
  if (version != kFeatureTableVersion)
    fail(ErrorKind::UnsupportedVersion,
         path.string() + ": version " + std::to_string(version) + " at offset 4");
  const std::size_t count = get_u32(p + 8);
  const std::size_t dim = get_u32(p + 12);

  std::size_t offset = kFeatureTableHeaderBytes;
  if (bytes.size() < offset + 8 * count) truncated(path, offset, 8 * count);
  FeatureTable table;
  table.source.native_dim = static_cast<Index>(dim);
  table.tile_ids.resize(count);
  for (std::size_t i = 0; i < count; ++i, offset += 8) table.tile_ids[i] = get_u64(p + offset);

  const std::size_t payload = 4 * count * dim;
  if (bytes.size() < offset + payload) truncated(path, offset, payload);
  table.values.resize(static_cast<Index>(count), static_cast<Index>(dim));
  float* out = table.values.data();
  for (std::size_t i = 0; i < count * dim; ++i, offset += 4) {
    const float v = std::bit_cast<float>(get_u32(p + offset));
    if (!std::isfinite(v))
      fail(ErrorKind::NonFiniteValue, path.string() + ": non-finite value at offset " +
                                          std::to_string(offset));
    out[i] = v;
  }
  return table;
}

void write_feature_table(const FeatureTable& table, const fs::path& path) {
  require(table.values.rows() == table.tile_count(), ErrorKind::ShapeMismatch,
          "feature table row count differs from tile count");
  const auto count = static_cast<std::uint64_t>(table.tile_ids.size());
  const auto dim = static_cast<std::uint64_t>(table.values.cols());
  require(count <= 0xffffffffu && dim <= 0xffffffffu, ErrorKind::ShapeMismatch,
          "feature table too large for PFT1");
  std::string bytes;
  bytes.reserve(kFeatureTableHeaderBytes + 8 * count + 4 * count * dim);
  bytes.append(kFeatureTableMagic, 4);
  put_u32(bytes, kFeatureTableVersion);
  put_u32(bytes, static_cast<std::uint32_t>(count));
  put_u32(bytes, static_cast<std::uint32_t>(dim));
  for (std::uint64_t id : table.tile_ids) put_u64(bytes, id);
  const float* v = table.values.data();
  for (Index i = 0; i < table.values.size(); ++i) {
    require(std::isfinite(v[i]), ErrorKind::NonFiniteValue,
            "refusing to write non-finite value at element " + std::to_string(i));
    put_u32(bytes, std::bit_cast<std::uint32_t>(v[i]));
  }
  write_file_bytes(bytes, path);
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "regression";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "classification") return TaskKind::Classification;
  if (text == "regression") return TaskKind::Regression;
  fail(ErrorKind::InvalidManifest, "unknown task_kind '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  fail(ErrorKind::InvalidArgument, "unknown split '" + text + "'");
}

const ManifestSource& DatasetManifest::source(const std::string& source_id) const {
  for (const auto& s : sources)
    if (s.descriptor.source_id == source_id) return s;
  fail(ErrorKind::MissingSource, "no source '" + source_id + "' in manifest");
}

std::vector<std::string> DatasetManifest::source_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : sources) ids.push_back(s.descriptor.source_id);
  return ids;
}

void validate_manifest(const DatasetManifest& m) {
  require(!m.sources.empty(), ErrorKind::InvalidManifest, "manifest declares no sources");
  std::set<std::string> ids;
  for (const auto& s : m.sources) {
    require(!s.descriptor.source_id.empty(), ErrorKind::InvalidManifest, "empty source_id");
    require(ids.insert(s.descriptor.source_id).second, ErrorKind::InvalidManifest,
            "duplicate source_id '" + s.descriptor.source_id + "'");
    require(s.descriptor.native_dim >= 1, ErrorKind::InvalidManifest,
            "source '" + s.descriptor.source_id + "' has native_dim < 1");
  }
  if (m.task_kind == TaskKind::Classification)
    require(m.num_classes >= 2, ErrorKind::InvalidManifest, "classification needs num_classes >= 2");
  else
    require(m.num_targets >= 1, ErrorKind::InvalidManifest, "regression needs num_targets >= 1");

  std::set<std::uint64_t> tile_ids;
  std::set<std::tuple<std::string, std::int64_t, std::int64_t>> cells;
  for (const auto& t : m.tiles) {
    require(tile_ids.insert(t.tile_id).second, ErrorKind::InvalidManifest,
            "duplicate tile_id " + std::to_string(t.tile_id));
    require(cells.emplace(t.slide_id, t.grid_x, t.grid_y).second, ErrorKind::InvalidManifest,
            "duplicate grid cell in slide '" + t.slide_id + "'");
    require(m.slides.contains(t.slide_id), ErrorKind::InvalidManifest,
            "tile " + std::to_string(t.tile_id) + " refers to unknown slide '" + t.slide_id + "'");
  }
  for (const auto& [slide, label] : m.slides) {
    if (m.task_kind == TaskKind::Classification) {
      require(label.class_index >= 0 && label.class_index < m.num_classes,
              ErrorKind::InvalidManifest, "slide '" + slide + "' has no valid class label");
    } else {
      require(label.class_index < 0, ErrorKind::InvalidManifest,
              "regression slide '" + slide + "' carries a class label");
      for (const auto& [tile, targets] : label.tile_targets)
        require(static_cast<int>(targets.size()) == m.num_targets, ErrorKind::InvalidManifest,
                "tile " + std::to_string(tile) + " has wrong target count");
    }
  }
  if (m.task_kind == TaskKind::Regression) {
    for (const auto& t : m.tiles)
      require(m.slides.at(t.slide_id).tile_targets.contains(t.tile_id), ErrorKind::InvalidManifest,
              "tile " + std::to_string(t.tile_id) + " has no regression targets");
  }
  for (const auto& [slide, split] : m.splits)
    require(m.slides.contains(slide), ErrorKind::InvalidManifest,
            "split assigned to unknown slide '" + slide + "'");
}

DatasetManifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
  DatasetManifest m;
  try {
    const json doc = json::parse(json_text);
    m.task_kind = parse_task_kind(doc.at("task_kind").get<std::string>());
    m.num_classes = doc.value("num_classes", 0);
    m.num_targets = doc.value("num_targets", 0);
    for (const auto& s : doc.at("sources")) {
      ManifestSource src;
      src.descriptor.source_id = s.at("source_id").get<std::string>();
      src.descriptor.native_dim = s.at("native_dim").get<Index>();
      src.descriptor.display_name = s.value("display_name", src.descriptor.source_id);
      fs::path p = s.at("path").get<std::string>();
      src.path = p.is_absolute() ? p : base_dir / p;
      m.sources.push_back(std::move(src));
    }
    for (const auto& t : doc.at("tiles")) {
      m.tiles.push_back({t.at("tile_id").get<std::uint64_t>(), t.at("slide_id").get<std::string>(),
                         t.at("grid_x").get<std::int64_t>(), t.at("grid_y").get<std::int64_t>()});
    }
    for (const auto& [slide, rec] : doc.at("slides").items()) {
      SlideLabel label;
      if (rec.contains("label")) label.class_index = rec.at("label").get<int>();
      if (rec.contains("targets")) {
        for (const auto& [tile, values] : rec.at("targets").items())
          label.tile_targets[std::stoull(tile)] = values.get<std::vector<float>>();
      }
      m.slides.emplace(slide, std::move(label));
    }
    if (doc.contains("splits")) {
      for (const auto& [slide, split] : doc.at("splits").items())
        m.splits.emplace(slide, parse_split(split.get<std::string>()));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidManifest, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidArgument) fail(ErrorKind::InvalidManifest, e.what());
    throw;
  } catch (const std::logic_error& e) {  // stoull
    fail(ErrorKind::InvalidManifest, e.what());
  }
  validate_manifest(m);
  return m;
}

DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m = parse_manifest(read_file_bytes(path), path.parent_path());
  for (const auto& s : m.sources)
    require(fs::exists(s.path), ErrorKind::IoFailure,
            "source '" + s.descriptor.source_id + "' file missing: " + s.path.string());
  return m;
}

std::string manifest_to_json(const DatasetManifest& m, const fs::path& base_dir) {
  json doc;
  doc["task_kind"] = to_string(m.task_kind);
  if (m.task_kind == TaskKind::Classification) doc["num_classes"] = m.num_classes;
  else doc["num_targets"] = m.num_targets;
  doc["sources"] = json::array();
  for (const auto& s : m.sources) {
    fs::path p = s.path;
    if (!base_dir.empty()) {
      const fs::path rel = p.lexically_relative(base_dir);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    doc["sources"].push_back({{"source_id", s.descriptor.source_id},
                              {"native_dim", s.descriptor.native_dim},
                              {"display_name", s.descriptor.display_name},
                              {"path", p.generic_string()}});
  }
  doc["tiles"] = json::array();
  for (const auto& t : m.tiles)
    doc["tiles"].push_back({{"tile_id", t.tile_id},
                            {"slide_id", t.slide_id},
                            {"grid_x", t.grid_x},
                            {"grid_y", t.grid_y}});
  doc["slides"] = json::object();
  for (const auto& [slide, label] : m.slides) {
    json rec = json::object();
    if (m.task_kind == TaskKind::Classification) {
      rec["label"] = label.class_index;
    } else {
      json targets = json::object();
      for (const auto& [tile, values] : label.tile_targets) targets[std::to_string(tile)] = values;
      rec["targets"] = std::move(targets);
    }
    doc["slides"][slide] = std::move(rec);
  }
  doc["splits"] = json::object();
  for (const auto& [slide, split] : m.splits) doc["splits"][slide] = to_string(split);
  return doc.dump(1);
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  write_file_bytes(manifest_to_json(m, path.parent_path()) + "\n", path);
}

std::vector<FeatureTable> load_tables(const DatasetManifest& manifest) {
  std::vector<FeatureTable> tables;
  tables.reserve(manifest.sources.size());
  for (const auto& s : manifest.sources) {
    FeatureTable t = read_feature_table(s.path);
    require(t.dim() == s.descriptor.native_dim, ErrorKind::InvalidManifest,
            "source '" + s.descriptor.source_id + "' declares dim " +
                std::to_string(s.descriptor.native_dim) + " but file has " +
                std::to_string(t.dim()));
    t.source = s.descriptor;
    tables.push_back(std::move(t));
  }
  return tables;
}

std::vector<AlignedBag> align_bags(const std::vector<FeatureTable>& tables,
                                   const DatasetManifest& manifest) {
  require(!tables.empty(), ErrorKind::MissingSource, "no feature tables to align");
  require(tables.size() == manifest.sources.size(), ErrorKind::MissingSource,
          "expected one table per declared source");

  // Per-source tile id -> row.
  std::vector<std::unordered_map<std::uint64_t, Index>> rows(tables.size());
  for (std::size_t s = 0; s < tables.size(); ++s) {
    const auto& t = tables[s];
    require(t.values.rows() == t.tile_count(), ErrorKind::ShapeMismatch,
            "table row count differs from tile count");
    rows[s].reserve(t.tile_ids.size());
    for (Index r = 0; r < t.tile_count(); ++r) {
      require(rows[s].emplace(t.tile_ids[static_cast<std::size_t>(r)], r).second,
              ErrorKind::DuplicateTile,
              "tile " + std::to_string(t.tile_ids[static_cast<std::size_t>(r)]) +
                  " appears twice in source '" + t.source.source_id + "'");
    }
  }

  std::unordered_map<std::uint64_t, const TileRef*> known;
  known.reserve(manifest.tiles.size());
  for (const auto& t : manifest.tiles) known.emplace(t.tile_id, &t);
  for (std::size_t s = 0; s < tables.size(); ++s)
    for (std::uint64_t id : tables[s].tile_ids)
      require(known.contains(id), ErrorKind::UnknownTile,
              "tile " + std::to_string(id) + " in source '" + tables[s].source.source_id +
                  "' is not listed in the manifest");

  std::map<std::string, std::vector<TileRef>> by_slide;
  for (const auto& [slide, label] : manifest.slides) by_slide[slide];
  for (const auto& t : manifest.tiles) {
    bool in_all = true;
    for (const auto& r : rows) in_all = in_all && r.contains(t.tile_id);
    if (in_all) by_slide[t.slide_id].push_back(t);
  }

  std::vector<AlignedBag> bags;
  bags.reserve(by_slide.size());
  for (auto& [slide, tiles] : by_slide) {
    require(!tiles.empty(), ErrorKind::EmptyIntersection, slide);
    std::sort(tiles.begin(), tiles.end(), canonical_less);
    AlignedBag ab;
    ab.bag.slide_id = slide;
    const SlideLabel& label = manifest.slides.at(slide);
    if (manifest.task_kind == TaskKind::Classification) {
      ab.bag.class_index = label.class_index;
    } else {
      for (const auto& t : tiles) ab.bag.tile_targets.push_back(label.tile_targets.at(t.tile_id));
    }
    ab.row_index.resize(tables.size());
    for (std::size_t s = 0; s < tables.size(); ++s) {
      ab.row_index[s].reserve(tiles.size());
      for (const auto& t : tiles) ab.row_index[s].push_back(rows[s].at(t.tile_id));
    }
    ab.bag.tiles = std::move(tiles);
    bags.push_back(std::move(ab));
  }
  return bags;
}

}  // namespace adafusion
