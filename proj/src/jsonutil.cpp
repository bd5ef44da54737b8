#include "splatfit/jsonutil.hpp"

#include "splatfit/errors.hpp"
#include "splatfit/io.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError(path.string() + ": invalid JSON");
  return j;
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

void apply_dotted_override(nlohmann::json& root, std::string_view spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw InvalidSpecError("override must look like key.path=value: " +
                           std::string(spec));
  std::string_view key = spec.substr(0, eq);
  const std::string value(spec.substr(eq + 1));

  nlohmann::json* node = &root;
  while (true) {
    const size_t dot = key.find('.');
    const std::string part(key.substr(0, dot));
    if (part.empty()) throw InvalidSpecError("empty key segment in override");
    if (dot == std::string_view::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null())
      throw InvalidSpecError("override path crosses a non-object: " + part);
    key.remove_prefix(dot + 1);
  }
}

uint64_t json_hash(const nlohmann::json& j) {
  const std::string canonical = j.dump();
  return fnv1a64(canonical);
}

}  // namespace splatfit
