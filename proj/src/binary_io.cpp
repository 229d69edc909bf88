#include "dem/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace dem {

using nlohmann::json;

namespace {

std::uint64_t byteswap64(std::uint64_t v) {
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
  return r;
}

}  // namespace

void write_f64_le(std::ostream& out, const double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t v = byteswap64(std::bit_cast<std::uint64_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

void read_f64_le(std::istream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw Error(Errc::Io, "binary payload is truncated");
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<double>(byteswap64(std::bit_cast<std::uint64_t>(data[i])));
  }
}

void save_array(const std::string& path, const Mat& points, const json& metadata) {
  json header = {{"shape", {points.cols(), points.rows()}},
                 {"dtype", "f64"},
                 {"byte_order", "LE"},
                 {"metadata", metadata}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write array file " + path);
  out << header.dump() << '\n';
  // column-major points == row-major file rows
  write_f64_le(out, points.data(), static_cast<std::size_t>(points.size()));
  if (!out) throw Error(Errc::Io, "failed writing array file " + path);
}

ArrayFile load_array(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open array file " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::Io, "array file has no header: " + path);
  ArrayFile af;
  try {
    const json header = json::parse(line);
    if (header.at("dtype") != "f64" || header.at("byte_order") != "LE")
      throw Error(Errc::Io, "array file must be f64 little-endian: " + path);
    const auto& shape = header.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw Error(Errc::Io, "array shape must be [rows, cols]");
    const auto n = shape[0].get<Eigen::Index>(), d = shape[1].get<Eigen::Index>();
    if (n < 0 || d < 0) throw Error(Errc::Io, "negative array shape");
    af.rows.resize(d, n);
    read_f64_le(in, af.rows.data(), static_cast<std::size_t>(n * d));
    af.metadata = header.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw Error(Errc::Io, "malformed array header in " + path + ": " + e.what());
  }
  return af;
}

}  // namespace dem
