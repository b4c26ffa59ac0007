#pragma once

#include <filesystem>

#include "mani/types.hpp"

namespace mani::io {

/// 8/16-bit colour or grey raster scaled to [0,1], returned as RGB.
Image read_rgb(const std::filesystem::path& path);
/// Raw 8-bit grey values (no binarisation).
Grid<std::uint8_t> read_gray8(const std::filesystem::path& path);
/// 16-bit integer raster read verbatim.
InstanceMap read_instances16(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const Image& image);
/// Writes 0/255 for a binary mask.
void write_mask(const std::filesystem::path& path, const Mask& mask);
void write_instances16(const std::filesystem::path& path, const InstanceMap& instances);

}  // namespace mani::io
