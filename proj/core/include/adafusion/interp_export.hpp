// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adafusion/training.hpp"

namespace adafusion {

struct ContributionRecord {
  std::uint64_t tile_id = 0;
  std::int64_t grid_x = 0;
  std::int64_t grid_y = 0;
  std::vector<double> scores;  // S_1..S_N
  int argmax_source = 0;
};

struct ContributionMap {
  std::string slide_id;
  std::vector<std::string> source_ids;
  std::vector<ContributionRecord> records;
};

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed palette indexed by source order; wraps after six sources.
inline constexpr std::array<Rgb, 6> kSourcePalette{{{230, 25, 75},
                                                    {60, 180, 75},
                                                    {0, 130, 200},
                                                    {245, 130, 48},
                                                    {145, 30, 180},
                                                    {70, 240, 240}}};
inline constexpr Rgb kBackground{255, 255, 255};

Rgb source_color(int source);

/// Inference-mode gates per tile, averaged per source. Throws
/// VariantHasNoTuner for variants without a prompt tuner.
ContributionMap compute_contribution_map(const FusionModel& model, const SampleBag& bag);

enum class HeatmapMode { Argmax, PerSource };

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Rgb at(int x, int y) const;
};

/// One block of `block` x `block` pixels per tile at (grid_x, grid_y); cells
/// without a tile keep the background. PerSource paints gray round(255 S_i)
/// for `source`.
Image render_heatmap(const ContributionMap& map, HeatmapMode mode, int source = 0, int block = 4);

/// Binary P6 pixmap, max value 255.
std::vector<std::uint8_t> encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::filesystem::path& path);

/// Columns: slide_id, grid_x, grid_y, s_<source_id>..., argmax_source.
/// Scores use 17 significant digits so a re-read is exact.
std::string contribution_csv(const std::vector<ContributionMap>& maps);
void write_contribution_csv(const std::vector<ContributionMap>& maps,
                            const std::filesystem::path& path);
std::vector<ContributionMap> parse_contribution_csv(const std::string& text);
std::vector<ContributionMap> read_contribution_csv(const std::filesystem::path& path);

}  // namespace adafusion
