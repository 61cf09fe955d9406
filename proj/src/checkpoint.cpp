// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "riformer/config.hpp"

namespace riformer {
namespace {

constexpr char kMagic[8] = {'R', 'I', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const CheckpointMeta& meta) {
  nlohmann::ordered_json header;
  header["spec"] = spec_to_json(model.spec);
  header["deployed"] = model.deployed;
  header["metadata"] = {{"seed", meta.seed}, {"recipe", meta.recipe}, {"epoch", meta.epoch}};
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  const auto tensors = model.named_tensors();
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape().dims()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload = out.size();
  out.resize(payload + offset);
  std::size_t at = payload;
  for (const auto& [name, t] : tensors) {
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
    std::memcpy(out.data() + at, t.ptr(), bytes);
    at += bytes;
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                       [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes.data() + 12);
  if (16ull + header_len > bytes.size()) throw CheckpointError("header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt header: ") + e.what());
  }
  const std::size_t payload = 16ull + header_len;
  const std::size_t payload_size = bytes.size() - payload;

  Checkpoint ck;
  try {
    ck.model = build_model(spec_from_json(header.at("spec")), 0);
    const auto& m = header.at("metadata");
    ck.meta.seed = m.at("seed").get<std::uint64_t>();
    ck.meta.recipe = m.at("recipe").get<std::string>();
    ck.meta.epoch = m.at("epoch").get<int>();
    if (header.at("deployed").get<bool>()) {
      if (ck.model.spec.mixer != MixerKind::affine) throw CheckpointError("deployed flag on a non-affine model");
      ck.model.deployed = true;
      for (auto& b : ck.model.blocks) {
        b.s = Tensor();
        b.t = Tensor();
      }
    }
    const auto expected = ck.model.named_tensors();
    const auto& entries = header.at("tensors");
    if (!entries.is_array() || entries.size() != expected.size()) {
      throw CheckpointError("manifest lists " + std::to_string(entries.size()) + " tensors, spec needs " +
                            std::to_string(expected.size()));
    }
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& e = entries[i];
      const std::string name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
      const auto& [want_name, tensor] = expected[i];
      if (name != want_name) throw CheckpointError("manifest entry " + std::to_string(i) + " is '" + name + "', expected '" + want_name + "'");
      if (shape != tensor.shape().dims()) {
        throw CheckpointError("shape of " + name + " does not match the spec: " + Shape(shape).str() + " vs " +
                              tensor.shape().str());
      }
      const std::uint64_t len = static_cast<std::uint64_t>(tensor.numel()) * sizeof(float);
      if (offset % sizeof(float) != 0 || offset > payload_size || len > payload_size - offset) {
        throw CheckpointError("tensor " + name + " lies outside the payload");
      }
      ranges.emplace_back(offset, offset + len);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
      if (ranges[i].first < ranges[i - 1].second) throw CheckpointError("overlapping tensor offsets in manifest");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      Tensor t = expected[i].second;
      const std::uint64_t offset = entries[i].at("offset").get<std::uint64_t>();
      std::memcpy(t.ptr(), bytes.data() + payload + offset, static_cast<std::size_t>(t.numel()) * sizeof(float));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid spec echo: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path) {
  const auto bytes = encode_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace riformer
