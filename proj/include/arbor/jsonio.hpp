#pragma once

// Canonical JSON serialization shared by every artifact writer. Floats are
// emitted with 17 significant digits (lossless double round-trip) and keys
// in a fixed order, so identical inputs produce identical bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace arbor::jsonio {

/// %.17g, with a guard against non-finite values (artifacts never carry them).
std::string format_double(double v);

/// Serialize preserving the document's own key order (use nlohmann::ordered_json
/// when field order matters). No whitespace; floats via format_double.
std::string canonical_dump(const nlohmann::ordered_json& j);

/// Serialize with keys sorted (nlohmann::json sorts by construction); this is
/// the hashing form, stable under key reordering at the call site.
std::string canonical_dump(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view s);

/// 16-hex-digit content hash of the canonical (sorted-key) serialization.
std::string config_hash(const nlohmann::json& j);

void write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Parse with the file path prefixed to any error message.
nlohmann::json parse_file(const std::filesystem::path& path);

}  // namespace arbor::jsonio
