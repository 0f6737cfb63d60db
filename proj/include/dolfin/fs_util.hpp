#pragma once

#include <string>

namespace dolfin {

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a partial file.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace dolfin
