// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adafusion/training.hpp"

namespace adafusion {

/// Container layout (little-endian):
///   "ADFC" u32 version u32 section_count
///   per section: u32 name_len, name bytes, u32 dtype, u32 rank, u64 dims[rank], payload
/// dtype 0 = utf8 bytes, 1 = f32, 2 = f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class SectionType : std::uint32_t { Utf8 = 0, F32 = 1, F64 = 2 };

struct Section {
  std::string name;
  SectionType type = SectionType::F64;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_sections(const std::vector<Section>& sections);
std::vector<Section> decode_sections(const std::vector<std::uint8_t>& bytes);

struct ModelCheckpoint {
  FusionModel model;
  AdamState adam;
  TrainConfig config;
  int epoch = 0;
};

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Whole-file helpers shared with the CLI.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace adafusion
