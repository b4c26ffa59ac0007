#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mani/losses.hpp"
#include "mani/types.hpp"

namespace mani {

struct PoolingStrategy {
    enum class Kind { mean, max, random_pixels };
    Kind kind = Kind::mean;
    int n_pixels = 4;  // random_pixels only

    void validate() const;
    bool operator==(const PoolingStrategy&) const = default;
};

const char* to_string(PoolingStrategy::Kind k);
PoolingStrategy::Kind parse_pooling_kind(const std::string& s);

/// Hard mask logit > 0 (sigmoid > 0.5, ties to 0). Same shape as logits, float, detached.
torch::Tensor pseudo_label(const torch::Tensor& logits);

/// Channel-wise mean of P [D,H,W] over mask [H,W] == 1; nullopt when the mask is empty.
std::optional<torch::Tensor> masked_mean_pool(const torch::Tensor& projections, const torch::Tensor& mask);

/// Channel-wise max of P [D,H,W] over mask [H,W] == 1; nullopt when the mask is empty.
std::optional<torch::Tensor> masked_max_pool(const torch::Tensor& projections, const torch::Tensor& mask);

/// min(n, |mask|) distinct masked pixels, uniformly without replacement; their D-vectors.
std::vector<torch::Tensor> random_pixel_sample(const torch::Tensor& projections, const torch::Tensor& mask, int n,
                                               Rng& rng);

/// Triples for one (source, target) image pair. Empty when any component is
/// degenerate. For random_pixels the source side stays mean-pooled.
std::vector<PooledPairTriple> build_triples(const torch::Tensor& source_projections, const torch::Tensor& source_mask,
                                            const torch::Tensor& target_projections,
                                            const torch::Tensor& target_pseudo_mask, const PoolingStrategy& strategy,
                                            Rng& rng);

}  // namespace mani
