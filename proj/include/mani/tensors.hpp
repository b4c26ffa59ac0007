#pragma once

#include <vector>

#include <torch/torch.h>

#include "mani/data.hpp"

namespace mani {

/// Stacks H x W x 3 images into a float32 [B, 3, H, W] tensor.
torch::Tensor images_to_tensor(const std::vector<const Sample*>& samples);
/// Stacks masks into a float32 [B, 1, H, W] tensor of 0/1. Every sample must carry a mask.
torch::Tensor masks_to_tensor(const std::vector<const Sample*>& samples);

torch::Tensor to_tensor(const Mask& mask);
/// [H, W] (or [1, H, W]) tensor -> binary Mask, nonzero -> 1.
Mask mask_from_tensor(const torch::Tensor& t);

}  // namespace mani
