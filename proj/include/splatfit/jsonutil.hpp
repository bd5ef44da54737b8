#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include <json.hpp>

namespace splatfit {

// Throws IoError naming the path on missing files or parse errors.
nlohmann::json parse_json_file(const std::filesystem::path& path);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

// Applies "dotted.key=value" onto a config tree, creating intermediate
// objects as needed. The value is parsed as JSON when possible and kept as a
// string otherwise. Throws InvalidSpecError on a malformed spec string.
void apply_dotted_override(nlohmann::json& root, std::string_view spec);

// Stable content hash of the canonical (sorted-key) serialization.
uint64_t json_hash(const nlohmann::json& j);

}  // namespace splatfit
