#pragma once

#include <string>

namespace dynhd::io {

/// Whole-file read. Gzip input is detected by its magic bytes and inflated.
std::string read_file(const std::string& path);

/// Whole-file write; gzip-compressed when the path ends in ".gz".
void write_file(const std::string& path, const std::string& contents);

bool file_exists(const std::string& path);

}  // namespace dynhd::io
