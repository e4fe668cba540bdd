// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "aukit/num/tensor.hpp"

namespace aukit::num {

/// Binary tensor file: magic "AUKT", u32 version, u32 ndim, u64 dims,
/// then the elements as little-endian f64 in row-major order. The
/// encoding is explicit byte-by-byte, so files travel across hosts.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Text twin for golden files and diff-friendly fixtures: first line is
/// the shape, then one element per line printed with %.17g (round-trips
/// doubles exactly).
void save_tensor_text(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor_text(const std::filesystem::path& path);

/// Named-parameter checkpoint: one binary tensor file per entry plus a
/// manifest.json listing names and shapes. Loading verifies the manifest
/// against the files it points at.
void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir);

}  // namespace aukit::num
