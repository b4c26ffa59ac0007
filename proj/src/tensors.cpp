#include "mani/tensors.hpp"

namespace mani {

torch::Tensor images_to_tensor(const std::vector<const Sample*>& samples) {
    if (samples.empty()) {
        throw ShapeError("images_to_tensor: empty batch");
    }
    const int h = samples.front()->image.height;
    const int w = samples.front()->image.width;
    auto out = torch::empty({static_cast<std::int64_t>(samples.size()), h, w, 3}, torch::kFloat32);
    auto* dst = out.data_ptr<float>();
    for (const auto* s : samples) {
        if (s->image.height != h || s->image.width != w || s->image.channels != 3) {
            throw ShapeError("images_to_tensor: sample '" + s->id + "' does not match the batch shape");
        }
        dst = std::copy(s->image.data.begin(), s->image.data.end(), dst);
    }
    return out.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor masks_to_tensor(const std::vector<const Sample*>& samples) {
    if (samples.empty()) {
        throw ShapeError("masks_to_tensor: empty batch");
    }
    std::vector<torch::Tensor> parts;
    parts.reserve(samples.size());
    for (const auto* s : samples) {
        if (!s->mask) {
            throw DataError("sample '" + s->id + "' has no mask");
        }
        parts.push_back(to_tensor(*s->mask).unsqueeze(0));
    }
    return torch::stack(parts);
}

torch::Tensor to_tensor(const Mask& mask) {
    auto out = torch::empty({mask.height, mask.width}, torch::kFloat32);
    auto* dst = out.data_ptr<float>();
    for (std::size_t i = 0; i < mask.pixels(); ++i) {
        dst[i] = mask.data[i * static_cast<std::size_t>(mask.channels)] ? 1.0F : 0.0F;
    }
    return out;
}

Mask mask_from_tensor(const torch::Tensor& t) {
    auto m = t.detach().squeeze().to(torch::kCPU).to(torch::kFloat32).contiguous();
    if (m.dim() != 2) {
        throw ShapeError("mask_from_tensor expects a 2-d tensor");
    }
    Mask out(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), 1, 0);
    const auto* src = m.data_ptr<float>();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = src[i] != 0.0F ? 1 : 0;
    }
    return out;
}

}  // namespace mani
