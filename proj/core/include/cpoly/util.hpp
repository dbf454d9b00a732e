// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cpoly {

// SHA-256 of the given bytes, lowercase hex. Used for content-addressing
// run inputs; not a security boundary.
std::string sha256_hex(std::string_view data);

// Shortest decimal string that round-trips the exact f64 value. All numeric
// text emitted into CSVs goes through this so reruns are byte-identical.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// Raw little-endian f64 buffers (checkpoint payload format).
void write_f64_file(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f64_file(const std::filesystem::path& path);

}  // namespace cpoly
