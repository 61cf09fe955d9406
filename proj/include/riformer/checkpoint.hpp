// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "riformer/model.hpp"

namespace riformer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string recipe;
  int epoch = 0;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

// Layout: "RIFCKPT\0", u32 version, u32 header length, JSON header
// {spec, deployed, metadata, tensors: [{name, shape, offset}]}, then the
// little-endian float32 payload. Offsets are relative to the payload start.
std::vector<std::uint8_t> encode_checkpoint(const Model& model, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace riformer
