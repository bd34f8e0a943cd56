// SPDX-License-Identifier: Apache-2.0
#include "simeq/parameters.hpp"

#include "simeq/errors.hpp"
#include "simeq/point_io.hpp"

#include <bit>
#include <cstdint>
#include <unordered_set>

namespace simeq {

namespace {

void put_le64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_le64(const std::string& in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

ParameterBlob pack_parameters(const ConstParameterList& params) {
  ParameterBlob blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::unordered_set<std::string> names;
  for (const ad::Parameter* p : params) {
    if (!names.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
    const Shape& s = p->value.shape();
    tensors.push_back({{"name", p->name},
                       {"shape", {s[0], s[1], s[2]}},
                       {"offset", blob.bytes.size()},
                       {"count", p->value.size()}});
    for (double v : p->value.values()) put_le64(blob.bytes, v);
  }
  blob.manifest = {{"format", "simeq-parameters"},
                   {"version", 1},
                   {"dtype", "float64"},
                   {"byte_order", "little"},
                   {"layout", "row-major"},
                   {"total_bytes", blob.bytes.size()},
                   {"tensors", tensors}};
  return blob;
}

void unpack_parameters(const ParameterBlob& blob, const ParameterList& params) {
  try {
    const auto& tensors = blob.manifest.at("tensors");
    if (tensors.size() != params.size()) {
      throw UsageError("parameter manifest lists " + std::to_string(tensors.size()) +
                       " tensors, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors.at(i);
      ad::Parameter& p = *params[i];
      if (t.at("name").get<std::string>() != p.name) {
        throw UsageError("parameter " + std::to_string(i) + ": manifest name '" +
                         t.at("name").get<std::string>() + "' != '" + p.name + "'");
      }
      const Shape s{t.at("shape").at(0).get<std::size_t>(), t.at("shape").at(1).get<std::size_t>(),
                    t.at("shape").at(2).get<std::size_t>()};
      if (s != p.value.shape()) {
        throw UsageError("parameter " + p.name + ": shape " + to_string(s) + " != expected " +
                         to_string(p.value.shape()));
      }
      const std::size_t offset = t.at("offset").get<std::size_t>();
      if (offset + 8 * p.value.size() > blob.bytes.size()) {
        throw UsageError("parameter " + p.name + ": blob too short");
      }
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = get_le64(blob.bytes, offset + 8 * k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("parameter manifest: ") + e.what());
  }
}

void save_parameters(const std::filesystem::path& dir, const std::string& stem,
                     const ConstParameterList& params) {
  const ParameterBlob blob = pack_parameters(params);
  write_file_atomic(dir / (stem + ".bin"), blob.bytes);
  write_file_atomic(dir / (stem + ".json"), blob.manifest.dump(2) + "\n");
}

void load_parameters(const std::filesystem::path& dir, const std::string& stem,
                     const ParameterList& params) {
  ParameterBlob blob;
  blob.bytes = read_file(dir / (stem + ".bin"));
  try {
    blob.manifest = nlohmann::json::parse(read_file(dir / (stem + ".json")));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("parameter manifest: ") + e.what());
  }
  unpack_parameters(blob, params);
}

std::size_t parameter_count(const ConstParameterList& params) {
  std::size_t n = 0;
  for (const ad::Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace simeq
