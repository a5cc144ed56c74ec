#pragma once

#include "tmxl/fields.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace tmxl {

using Json = nlohmann::json;

// Serializes with every floating value printed as %.17g; indent < 0 gives one line.
std::string dump_json(const Json& j, int indent = -1);
void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);

Json target_to_json(const Target& t);
Target target_from_json(const Json& j);

Json complex_to_json(Complex z);
Complex complex_from_json(const Json& j);

enum class NodeEncoding { Sidecar, Base64 };

// Header JSON at `path`; the node block goes to `path` with extension .f64 (little-endian
// float64, row-major) or inline as base64.
void save_map(const TorusMap& u, const std::filesystem::path& path, NodeEncoding enc = NodeEncoding::Sidecar);

// Re-projects every node; fails with NotOnManifold if any correction exceeds 1e-6. Nodes
// already on M to 1e-12 keep their exact bits.
TorusMap load_map(const std::filesystem::path& path);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace tmxl
