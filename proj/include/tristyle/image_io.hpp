#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tristyle/tensor.hpp"

namespace tristyle {

// RGB images as [3, H, W] floats in [0, 1].
Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& image);
std::string encode_png(const Tensor& image);
Tensor decode_png(const std::string& bytes);

// Sorted *.png files of a directory.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);
// Stacks [3, H, W] images into [N, 3, H, W].
Tensor stack_images(const std::vector<Tensor>& images);
Tensor image_at(const Tensor& batch, int index);

// Tiles a batch [N, 3, H, W] into a grid image with `columns` columns.
Tensor tile_images(const Tensor& batch, int columns);

}  // namespace tristyle
