// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter blobs: little-endian float64, row-major, concatenated in
// registration order, with a JSON manifest giving name, shape and byte offset.
#pragma once

#include "simeq/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace simeq {

using ParameterList = std::vector<ad::Parameter*>;
using ConstParameterList = std::vector<const ad::Parameter*>;

struct ParameterBlob {
  std::string bytes;
  nlohmann::json manifest;
};

ParameterBlob pack_parameters(const ConstParameterList& params);
/// Names and shapes must match the manifest exactly. Throws UsageError otherwise.
void unpack_parameters(const ParameterBlob& blob, const ParameterList& params);

/// Writes <stem>.bin and <stem>.json into dir.
void save_parameters(const std::filesystem::path& dir, const std::string& stem,
                     const ConstParameterList& params);
void load_parameters(const std::filesystem::path& dir, const std::string& stem,
                     const ParameterList& params);

std::size_t parameter_count(const ConstParameterList& params);

inline ConstParameterList as_const(const ParameterList& params) {
  return ConstParameterList(params.begin(), params.end());
}
inline std::size_t parameter_count(const ParameterList& params) { return parameter_count(as_const(params)); }

}  // namespace simeq
