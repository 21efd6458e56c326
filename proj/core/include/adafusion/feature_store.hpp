// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adafusion/tensor.hpp"

namespace adafusion {

struct SourceDescriptor {
  std::string source_id;
  Index native_dim = 0;
  std::string display_name;
};

struct TileRef {
  std::uint64_t tile_id = 0;
  std::string slide_id;
  std::int64_t grid_x = 0;
  std::int64_t grid_y = 0;

  friend bool operator==(const TileRef&, const TileRef&) = default;
};

/// Canonical tile order inside a bag: (grid_y, grid_x, tile_id).
bool canonical_less(const TileRef& a, const TileRef& b) noexcept;

/// Raw (or pooled) embeddings of one source, one row per tile.
struct FeatureTable {
  SourceDescriptor source;
  std::vector<std::uint64_t> tile_ids;
  MatrixF values;  // tiles x dim

  Index tile_count() const { return static_cast<Index>(tile_ids.size()); }
  Index dim() const { return values.cols(); }

  friend bool operator==(const FeatureTable& a, const FeatureTable& b);
};

// "PFT1" container, all little-endian:
//   magic "PFT1" | u32 version = 1 | u32 tile_count | u32 dim
//   tile_count x u64 tile id
//   tile_count x dim x f32, row-major
inline constexpr char kFeatureTableMagic[4] = {'P', 'F', 'T', '1'};
inline constexpr std::uint32_t kFeatureTableVersion = 1;
inline constexpr std::size_t kFeatureTableHeaderBytes = 16;

/// Reads a PFT1 file. The returned table's source descriptor only carries
/// native_dim; identity comes from the manifest.
FeatureTable read_feature_table(const std::filesystem::path& path);
void write_feature_table(const FeatureTable& table, const std::filesystem::path& path);

enum class TaskKind { Classification, Regression };
enum class Split { Train, Val, Test };

std::string to_string(TaskKind kind);
std::string to_string(Split split);
TaskKind parse_task_kind(const std::string& text);
Split parse_split(const std::string& text);

struct ManifestSource {
  SourceDescriptor descriptor;
  std::filesystem::path path;  // resolved against the manifest directory
};

struct SlideLabel {
  int class_index = -1;                                        // classification
  std::map<std::uint64_t, std::vector<float>> tile_targets;    // regression
};

struct DatasetManifest {
  TaskKind task_kind = TaskKind::Classification;
  int num_classes = 0;   // classification
  int num_targets = 0;   // regression
  std::vector<ManifestSource> sources;
  std::vector<TileRef> tiles;
  std::map<std::string, SlideLabel> slides;
  std::map<std::string, Split> splits;  // slide id -> split

  const ManifestSource& source(const std::string& source_id) const;
  std::vector<std::string> source_ids() const;
};

/// Checks the schema invariants: unique source ids, positive dims, labels
/// consistent with the task kind, unique tile ids and grid cells, splits
/// referring to known slides.
void validate_manifest(const DatasetManifest& manifest);

/// Parses manifest JSON. Relative source paths are resolved against
/// `base_dir`. Validates but does not touch the source files.
DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
/// Reads and validates a manifest; also checks that every source file exists.
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Writes the manifest with source paths relative to the manifest directory
/// when they live below it.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

/// Loads every source table declared by the manifest, in manifest order,
/// and stamps the manifest's descriptors onto them.
std::vector<FeatureTable> load_tables(const DatasetManifest& manifest);

struct Bag {
  std::string slide_id;
  std::vector<TileRef> tiles;  // canonical order
  std::optional<int> class_index;
  std::vector<std::vector<float>> tile_targets;  // regression, parallel to tiles

  Index tile_count() const { return static_cast<Index>(tiles.size()); }
};

struct AlignedBag {
  Bag bag;
  /// row_index[s][k] is the row of tile k in source table s.
  std::vector<std::vector<Index>> row_index;
};

/// Groups tiles into per-slide bags, keeping only tiles present in every
/// source table. Bags come out sorted by slide id.
std::vector<AlignedBag> align_bags(const std::vector<FeatureTable>& tables,
                                   const DatasetManifest& manifest);

}  // namespace adafusion
