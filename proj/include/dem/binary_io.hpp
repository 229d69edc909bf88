#pragma once

#include "dem/common.hpp"

#include "json.hpp"

#include <iosfwd>
#include <string>

namespace dem {

void write_f64_le(std::ostream& out, const double* data, std::size_t count);
void read_f64_le(std::istream& in, double* data, std::size_t count);

/// Row-major array of f64 samples with its JSON header.
struct ArrayFile {
  Mat rows;  // stored transposed in memory: one column per row of the file
  nlohmann::json metadata = nlohmann::json::object();
};

/// Writes one JSON header line {"shape":[n,d],"dtype":"f64","byte_order":"LE","metadata":{...}}
/// followed by n*d raw little-endian doubles, row-major. `points` holds one point per column.
void save_array(const std::string& path, const Mat& points, const nlohmann::json& metadata);
ArrayFile load_array(const std::string& path);

}  // namespace dem
