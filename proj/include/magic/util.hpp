#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace magic {

// Error taxonomy used across the library. The CLI maps these to exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// FNV-1a 64-bit hash, used for parameter/file checksums in manifests.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

/// Writes rows as CSV; each row must have the same arity as the header.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Deterministic shortest-roundtrip formatting for doubles (manifest fields).
std::string format_double(double v);

}  // namespace magic
