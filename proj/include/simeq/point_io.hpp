// SPDX-License-Identifier: Apache-2.0
//
// ASCII point-cloud formats (XYZ, vertex-only PLY) and the JSON record for
// similarity transforms.
#pragma once

#include "simeq/geometry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace simeq {

/// One "x y z" triple per line, '.' decimal separator, LF endings, 17 significant digits.
std::string format_xyz(const PointCloud& pc);
/// Blank lines and lines starting with '#' are skipped. Throws UsageError on malformed input.
PointCloud parse_xyz(std::string_view text);

std::string format_ply(const PointCloud& pc);
/// ASCII PLY with a vertex element carrying at least x, y, z properties.
PointCloud parse_ply(std::string_view text);

/// Dispatch on extension (.xyz / .ply); frame_label is set to the file stem.
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& pc);

/// {"scale": s, "rotation": [9 row-major], "translation": [3]}
nlohmann::json transform_to_json(const Sim3Transform& g);
Sim3Transform transform_from_json(const nlohmann::json& j);

/// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace simeq
