// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/interp_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adafusion/checkpoint.hpp"
#include "adafusion/error.hpp"

namespace adafusion {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Rgb source_color(int source) {
  return kSourcePalette[static_cast<std::size_t>(source) % kSourcePalette.size()];
}

ContributionMap compute_contribution_map(const FusionModel& model, const SampleBag& bag) {
  require(has_tuner(model.spec.variant.kind) && model.tuner.has_value(),
          ErrorKind::VariantHasNoTuner,
          "variant '" + model.spec.variant.to_string() + "' has no prompt tuner");
  require(bag.compound.rows() == static_cast<Index>(bag.tiles.size()) && !bag.tiles.empty(),
          ErrorKind::EmptyBag, "bag '" + bag.slide_id + "' has no tiles");
  const MatrixD gates = tuner_forward_rows(*model.tuner, bag.compound);
  const MatrixD scores = contribution_scores_rows(gates, model.spec.sources(), model.spec.dim);
  ContributionMap map;
  map.slide_id = bag.slide_id;
  map.source_ids = model.spec.source_ids;
  for (Index k = 0; k < scores.rows(); ++k) {
    const TileRef& t = bag.tiles[static_cast<std::size_t>(k)];
    ContributionRecord rec;
    rec.tile_id = t.tile_id;
    rec.grid_x = t.grid_x;
    rec.grid_y = t.grid_y;
    rec.scores.assign(scores.row(k).data(), scores.row(k).data() + scores.cols());
    rec.argmax_source = static_cast<int>(argmax_lowest(scores.row(k)));
    map.records.push_back(std::move(rec));
  }
  return map;
}

Rgb Image::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                         static_cast<std::size_t>(x)) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

Image render_heatmap(const ContributionMap& map, HeatmapMode mode, int source, int block) {
  require(!map.records.empty(), ErrorKind::EmptyMap, "contribution map for '" + map.slide_id +
                                                         "' has no tiles");
  require(block >= 1, ErrorKind::InvalidArgument, "block size must be >= 1");
  std::int64_t max_x = 0, max_y = 0;
  for (const auto& r : map.records) {
    require(r.grid_x >= 0 && r.grid_y >= 0, ErrorKind::InvalidArgument,
            "negative grid coordinate for tile " + std::to_string(r.tile_id));
    max_x = std::max(max_x, r.grid_x);
    max_y = std::max(max_y, r.grid_y);
  }
  if (mode == HeatmapMode::PerSource)
    require(source >= 0 && static_cast<std::size_t>(source) < map.records.front().scores.size(),
            ErrorKind::InvalidArgument, "source index out of range");

  Image img;
  img.width = static_cast<int>(max_x + 1) * block;
  img.height = static_cast<int>(max_y + 1) * block;
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  for (std::size_t p = 0; p < img.rgb.size(); p += 3)
    std::copy(kBackground.begin(), kBackground.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(p));

  for (const auto& r : map.records) {
    Rgb color;
    if (mode == HeatmapMode::Argmax) {
      color = source_color(r.argmax_source);
    } else {
      const double s = std::clamp(r.scores[static_cast<std::size_t>(source)], 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(s * 255.0));
      color = {g, g, g};
    }
    for (int dy = 0; dy < block; ++dy)
      for (int dx = 0; dx < block; ++dx) {
        const std::size_t x = static_cast<std::size_t>(r.grid_x) * static_cast<std::size_t>(block) +
                              static_cast<std::size_t>(dx);
        const std::size_t y = static_cast<std::size_t>(r.grid_y) * static_cast<std::size_t>(block) +
                              static_cast<std::size_t>(dy);
        const std::size_t i = (y * static_cast<std::size_t>(img.width) + x) * 3;
        std::copy(color.begin(), color.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(i));
      }
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ppm(image));
}

std::string contribution_csv(const std::vector<ContributionMap>& maps) {
  require(!maps.empty(), ErrorKind::EmptyMap, "no contribution maps to export");
  std::string out = "slide_id,grid_x,grid_y";
  for (const auto& id : maps.front().source_ids) out += ",s_" + id;
  out += ",argmax_source\n";
  char buf[64];
  for (const auto& m : maps) {
    require(m.source_ids == maps.front().source_ids, ErrorKind::ShapeMismatch,
            "contribution maps disagree on sources");
    for (const auto& r : m.records) {
      out += m.slide_id + "," + std::to_string(r.grid_x) + "," + std::to_string(r.grid_y);
      for (double s : r.scores) {
        std::snprintf(buf, sizeof buf, ",%.17g", s);
        out += buf;
      }
      out += "," + m.source_ids[static_cast<std::size_t>(r.argmax_source)] + "\n";
    }
  }
  return out;
}

void write_contribution_csv(const std::vector<ContributionMap>& maps,
                            const std::filesystem::path& path) {
  const std::string text = contribution_csv(maps);
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<ContributionMap> parse_contribution_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::EmptyMap, "empty CSV");
  const auto header = split_csv(line);
  require(header.size() >= 5 && header[0] == "slide_id" && header.back() == "argmax_source",
          ErrorKind::InvalidManifest, "unexpected contribution CSV header");
  std::vector<std::string> sources;
  for (std::size_t i = 3; i + 1 < header.size(); ++i) {
    require(header[i].rfind("s_", 0) == 0, ErrorKind::InvalidManifest,
            "bad score column '" + header[i] + "'");
    sources.push_back(header[i].substr(2));
  }
  std::vector<ContributionMap> maps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == header.size(), ErrorKind::InvalidManifest, "ragged CSV row: " + line);
    if (maps.empty() || maps.back().slide_id != f[0]) {
      maps.push_back({f[0], sources, {}});
    }
    ContributionRecord r;
    r.grid_x = std::stoll(f[1]);
    r.grid_y = std::stoll(f[2]);
    for (std::size_t i = 0; i < sources.size(); ++i) r.scores.push_back(std::stod(f[3 + i]));
    const auto it = std::find(sources.begin(), sources.end(), f.back());
    require(it != sources.end(), ErrorKind::InvalidManifest, "unknown argmax source " + f.back());
    r.argmax_source = static_cast<int>(it - sources.begin());
    maps.back().records.push_back(std::move(r));
  }
  return maps;
}

std::vector<ContributionMap> read_contribution_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_contribution_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace adafusion
