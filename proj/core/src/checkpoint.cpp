// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "adafusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "adafusion/error.hpp"

namespace adafusion {
namespace {

using json = nlohmann::json;
constexpr char kMagic[4] = {'A', 'D', 'F', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      fail(ErrorKind::TruncatedFile, "checkpoint truncated at offset " + std::to_string(pos_) +
                                         " (need " + std::to_string(n) + " bytes)");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(SectionType t) {
  switch (t) {
    case SectionType::Utf8: return 1;
    case SectionType::F32: return 4;
    case SectionType::F64: return 8;
  }
  fail(ErrorKind::InvalidManifest, "unknown section dtype");
}

Section matrix_section(const std::string& name, const MatrixD& m) {
  Section s;
  s.name = name;
  s.type = SectionType::F64;
  s.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  s.payload.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Index i = 0; i < m.size(); ++i) put_u64(s.payload, std::bit_cast<std::uint64_t>(m.data()[i]));
  return s;
}

void read_matrix(const Section& s, MatrixD& into) {
  require(s.type == SectionType::F64 && s.dims.size() == 2 &&
              s.dims[0] == static_cast<std::uint64_t>(into.rows()) &&
              s.dims[1] == static_cast<std::uint64_t>(into.cols()),
          ErrorKind::ShapeMismatch,
          "checkpoint section '" + s.name + "' does not match the model shape");
  for (Index i = 0; i < into.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(s.payload[static_cast<std::size_t>(i) * 8 + b]) << (8 * b);
    into.data()[i] = std::bit_cast<double>(bits);
  }
}

Section text_section(const std::string& name, const std::string& text) {
  Section s;
  s.name = name;
  s.type = SectionType::Utf8;
  s.dims = {text.size()};
  s.payload.assign(text.begin(), text.end());
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_sections(const std::vector<Section>& sections) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    std::uint64_t count = 1;
    for (auto d : s.dims) count *= d;
    require(count * element_size(s.type) == s.payload.size(), ErrorKind::ShapeMismatch,
            "section '" + s.name + "' payload does not match its dims");
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    put_u32(out, static_cast<std::uint32_t>(s.type));
    put_u32(out, static_cast<std::uint32_t>(s.dims.size()));
    for (auto d : s.dims) put_u64(out, d);
    out.insert(out.end(), s.payload.begin(), s.payload.end());
  }
  return out;
}

std::vector<Section> decode_sections(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::BadMagic, "expected ADFC magic at offset 0");
  r.take(4);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::UnsupportedVersion,
          "checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<Section> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    const std::uint32_t name_len = r.u32();
    const auto name = r.take(name_len);
    s.name.assign(name.begin(), name.end());
    const std::uint32_t type = r.u32();
    require(type <= 2, ErrorKind::InvalidManifest,
            "section '" + s.name + "' has unknown dtype " + std::to_string(type));
    s.type = static_cast<SectionType>(type);
    const std::uint32_t rank = r.u32();
    std::uint64_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      s.dims.push_back(r.u64());
      elements *= s.dims.back();
    }
    s.payload = r.take(static_cast<std::size_t>(elements * element_size(s.type)));
    out.push_back(std::move(s));
  }
  require(r.done(), ErrorKind::InvalidManifest,
          "trailing bytes after checkpoint sections at offset " + std::to_string(r.pos()));
  return out;
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json j;
  j["variant"] = spec.variant.to_string();
  j["task_kind"] = to_string(spec.task);
  j["source_ids"] = spec.source_ids;
  j["d"] = spec.dim;
  j["tuner_hidden"] = spec.tuner_hidden;
  j["attention_width"] = spec.attention_width;
  j["outputs"] = spec.outputs;
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  ModelSpec spec;
  try {
    const json j = json::parse(text);
    spec.variant = VariantSpec::parse(j.at("variant").get<std::string>());
    spec.task = parse_task_kind(j.at("task_kind").get<std::string>());
    spec.source_ids = j.at("source_ids").get<std::vector<std::string>>();
    spec.dim = j.at("d").get<Index>();
    spec.tuner_hidden = j.at("tuner_hidden").get<Index>();
    spec.attention_width = j.at("attention_width").get<Index>();
    spec.outputs = j.at("outputs").get<Index>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigInvalid, std::string("bad model spec: ") + e.what());
  }
  return spec;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt) {
  json meta;
  meta["spec"] = json::parse(model_spec_to_json(ckpt.model.spec));
  meta["config"] = json::parse(ckpt.config.to_json());
  meta["fingerprint"] = ckpt.config.fingerprint();
  meta["epoch"] = ckpt.epoch;
  meta["adam_step"] = ckpt.adam.step;
  meta["adam"] = {ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps};

  std::vector<Section> sections{text_section("meta", meta.dump())};
  FusionModel model = ckpt.model;
  const auto params = tensors(model);
  const bool has_moments = ckpt.adam.first_moment.size() == params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    sections.push_back(matrix_section("param/" + params[i].name, *params[i].value));
    if (has_moments) {
      sections.push_back(matrix_section("adam.m/" + params[i].name, ckpt.adam.first_moment[i]));
      sections.push_back(matrix_section("adam.v/" + params[i].name, ckpt.adam.second_moment[i]));
    }
  }
  return encode_sections(sections);
}

ModelCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const auto sections = decode_sections(bytes);
  std::map<std::string, const Section*> by_name;
  for (const auto& s : sections) by_name[s.name] = &s;
  const auto meta_it = by_name.find("meta");
  require(meta_it != by_name.end() && meta_it->second->type == SectionType::Utf8,
          ErrorKind::InvalidManifest, "checkpoint has no meta section");
  const auto& payload = meta_it->second->payload;

  ModelCheckpoint ckpt;
  json meta;
  try {
    meta = json::parse(std::string(payload.begin(), payload.end()));
    ckpt.config = TrainConfig::from_json(meta.at("config").dump());
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.adam.step = meta.at("adam_step").get<std::int64_t>();
    ckpt.adam.beta1 = meta.at("adam").at(0).get<double>();
    ckpt.adam.beta2 = meta.at("adam").at(1).get<double>();
    ckpt.adam.eps = meta.at("adam").at(2).get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidManifest, std::string("bad checkpoint meta: ") + e.what());
  }
  ckpt.model = init_model(model_spec_from_json(meta.at("spec").dump()), 0);
  const auto params = tensors(ckpt.model);
  bool have_m = true;
  for (const auto& p : params) {
    const auto it = by_name.find("param/" + p.name);
    require(it != by_name.end(), ErrorKind::InvalidManifest,
            "checkpoint is missing tensor '" + p.name + "'");
    read_matrix(*it->second, *p.value);
    have_m = have_m && by_name.count("adam.m/" + p.name) && by_name.count("adam.v/" + p.name);
  }
  if (have_m) {
    for (const auto& p : params) {
      MatrixD m(p.value->rows(), p.value->cols()), v(p.value->rows(), p.value->cols());
      read_matrix(*by_name.at("adam.m/" + p.name), m);
      read_matrix(*by_name.at("adam.v/" + p.name), v);
      ckpt.adam.first_moment.push_back(std::move(m));
      ckpt.adam.second_moment.push_back(std::move(v));
    }
  }
  return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoFailure, "read failed for " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoFailure, "write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace adafusion
