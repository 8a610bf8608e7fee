#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

/// Binary P6 with maxval 255 -> (3, h, w) with values v / 255.
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
/// (3, h, w) or (1, 3, h, w); values are scaled by 255, rounded and clamped.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

Tensor load_ppm(const std::filesystem::path& path);
void save_ppm(const Tensor& image, const std::filesystem::path& path);

/// Sorted *.ppm files of a directory.
std::vector<std::filesystem::path> list_ppm(const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace llic
