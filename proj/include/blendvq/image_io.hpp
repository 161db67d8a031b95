#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace blendvq {

// Reads an 8-bit PNG into a (C,H,W) float64 tensor in [0,1]. C is 1 or 3.
torch::Tensor read_png(const std::string& path);

// Writes a (1,H,W) or (3,H,W) tensor as an 8-bit PNG; values are clipped to
// [0,1] and rounded to the nearest of 256 levels.
void write_png(const std::string& path, const torch::Tensor& image);

// Tiles images of equal shape horizontally with a white gap between them.
torch::Tensor hstack_images(const std::vector<torch::Tensor>& images, int64_t gap = 2);

}  // namespace blendvq
