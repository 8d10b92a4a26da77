#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace medlasa::io {

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Throws std::runtime_error if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Deterministic child seed for a named pipeline stage.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);

}  // namespace medlasa::io
