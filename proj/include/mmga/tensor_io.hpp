#pragma once

#include "mmga/tensor.hpp"

#include <filesystem>
#include <iosfwd>

namespace mmga {

/// Binary tensor format: magic "MMGA-TNS", four little-endian u32 extents
/// (n, c, h, w), then n·c·h·w little-endian f32 values in row-major order.
void write_tensor(std::ostream& out, const Tensorf& tensor);
Tensorf read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensorf& tensor);
Tensorf load_tensor(const std::filesystem::path& path);

namespace le {
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);
}  // namespace le

}  // namespace mmga
