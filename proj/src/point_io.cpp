// SPDX-License-Identifier: Apache-2.0
#include "simeq/point_io.hpp"

#include "simeq/errors.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>
#include <vector>

namespace simeq {

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double parse_double(std::string_view token, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size() || !std::isfinite(v)) {
    throw UsageError("line " + std::to_string(line_no) + ": invalid number '" +
                     std::string(token) + "'");
  }
  return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::string format_xyz(const PointCloud& pc) {
  std::string out;
  out.reserve(pc.size() * 72);
  for (const Vec3& p : pc.points) {
    append_double(out, p.x());
    out.push_back(' ');
    append_double(out, p.y());
    out.push_back(' ');
    append_double(out, p.z());
    out.push_back('\n');
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  PointCloud pc;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto tokens = split_ws(lines[n]);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (tokens.size() != 3) {
      throw UsageError("xyz line " + std::to_string(n + 1) + ": expected 3 values, got " +
                       std::to_string(tokens.size()));
    }
    pc.points.emplace_back(parse_double(tokens[0], n + 1), parse_double(tokens[1], n + 1),
                           parse_double(tokens[2], n + 1));
  }
  if (pc.points.empty()) throw UsageError("xyz: no points");
  return pc;
}

std::string format_ply(const PointCloud& pc) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(pc.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out += format_xyz(pc);
  return out;
}

PointCloud parse_ply(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || split_ws(lines[0]).empty() || split_ws(lines[0])[0] != "ply") {
    throw UsageError("ply: missing magic");
  }
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<std::string> vertex_props;
  std::size_t i = 1;
  for (; i < lines.size(); ++i) {
    const auto tokens = split_ws(lines[i]);
    if (tokens.empty()) continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "format") {
      if (tokens.size() < 2 || tokens[1] != "ascii") throw UsageError("ply: only ascii format is supported");
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) throw UsageError("ply: malformed element line");
      in_vertex = tokens[1] == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw UsageError("ply: duplicate vertex element");
        seen_vertex = true;
        vertex_count = static_cast<std::size_t>(parse_double(tokens[2], i + 1));
      } else {
        // Vertex-only files: any non-empty additional element is rejected.
        if (parse_double(tokens[2], i + 1) != 0.0) throw UsageError("ply: only vertex elements are supported");
      }
    } else if (tokens[0] == "property") {
      if (in_vertex) {
        if (tokens.size() < 3 || tokens[1] == "list") throw UsageError("ply: unsupported vertex property");
        vertex_props.emplace_back(tokens.back());
      }
    }
  }
  if (i >= lines.size()) throw UsageError("ply: missing end_header");
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t k = 0; k < vertex_props.size(); ++k) {
    if (vertex_props[k] == "x") ix = static_cast<int>(k);
    if (vertex_props[k] == "y") iy = static_cast<int>(k);
    if (vertex_props[k] == "z") iz = static_cast<int>(k);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw UsageError("ply: vertex element lacks x/y/z");

  PointCloud pc;
  pc.points.reserve(vertex_count);
  for (++i; i < lines.size() && pc.points.size() < vertex_count; ++i) {
    const auto tokens = split_ws(lines[i]);
    if (tokens.empty()) continue;
    if (tokens.size() != vertex_props.size()) {
      throw UsageError("ply line " + std::to_string(i + 1) + ": wrong number of vertex values");
    }
    pc.points.emplace_back(parse_double(tokens[ix], i + 1), parse_double(tokens[iy], i + 1),
                           parse_double(tokens[iz], i + 1));
  }
  if (pc.points.size() != vertex_count) throw UsageError("ply: fewer vertices than declared");
  if (pc.points.empty()) throw UsageError("ply: no points");
  return pc;
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::string ext = path.extension().string();
  PointCloud pc;
  if (ext == ".ply") {
    pc = parse_ply(text);
  } else if (ext == ".xyz" || ext == ".txt") {
    pc = parse_xyz(text);
  } else {
    throw UsageError("unsupported point cloud extension '" + ext + "' (use .xyz or .ply)");
  }
  pc.frame_label = path.stem().string();
  return pc;
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& pc) {
  const std::string ext = path.extension().string();
  if (ext == ".ply") {
    write_file_atomic(path, format_ply(pc));
  } else {
    write_file_atomic(path, format_xyz(pc));
  }
}

nlohmann::json transform_to_json(const Sim3Transform& g) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(g.rotation()(r, c));
  const Vec3& t = g.translation();
  return {{"scale", g.scale()}, {"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}};
}

Sim3Transform transform_from_json(const nlohmann::json& j) {
  try {
    const auto& rot = j.at("rotation");
    const auto& tr = j.at("translation");
    if (rot.size() != 9 || tr.size() != 3) throw UsageError("transform json: wrong array sizes");
    Mat3 r;
    for (int k = 0; k < 9; ++k) r(k / 3, k % 3) = rot.at(k).get<double>();
    Vec3 t(tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>());
    return Sim3Transform(j.at("scale").get<double>(), r, t);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("transform json: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("transform json: ") + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw UsageError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw UsageError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

}  // namespace simeq
