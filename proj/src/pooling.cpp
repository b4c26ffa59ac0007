#include "mani/pooling.hpp"

#include <numeric>

namespace mani {

void PoolingStrategy::validate() const {
    if (n_pixels < 1) {
        throw ConfigError("pooling_n must be >= 1");
    }
}

const char* to_string(PoolingStrategy::Kind k) {
    switch (k) {
        case PoolingStrategy::Kind::mean: return "mean";
        case PoolingStrategy::Kind::max: return "max";
        case PoolingStrategy::Kind::random_pixels: return "random_pixels";
    }
    return "mean";
}

PoolingStrategy::Kind parse_pooling_kind(const std::string& s) {
    if (s == "mean") return PoolingStrategy::Kind::mean;
    if (s == "max") return PoolingStrategy::Kind::max;
    if (s == "random_pixels" || s == "random") return PoolingStrategy::Kind::random_pixels;
    throw ConfigError("unknown pooling '" + s + "' (expected mean|max|random_pixels)");
}

torch::Tensor pseudo_label(const torch::Tensor& logits) { return (logits.detach() > 0).to(logits.scalar_type()); }

namespace {

void check_shapes(const torch::Tensor& p, const torch::Tensor& mask) {
    if (p.dim() != 3 || mask.dim() != 2 || p.size(1) != mask.size(0) || p.size(2) != mask.size(1)) {
        throw ShapeError("pooling expects projections [D,H,W] and mask [H,W]");
    }
}

// Flat row-major indices of masked pixels.
torch::Tensor masked_indices(const torch::Tensor& mask) { return torch::nonzero(mask.detach().reshape({-1}) > 0).reshape({-1}); }

}  // namespace

std::optional<torch::Tensor> masked_mean_pool(const torch::Tensor& projections, const torch::Tensor& mask) {
    check_shapes(projections, mask);
    const auto m = (mask.detach() > 0).to(projections.scalar_type());
    const auto count = m.sum().item<double>();
    if (count == 0.0) {
        return std::nullopt;
    }
    return (projections * m.unsqueeze(0)).sum({1, 2}) / count;
}

std::optional<torch::Tensor> masked_max_pool(const torch::Tensor& projections, const torch::Tensor& mask) {
    check_shapes(projections, mask);
    const auto idx = masked_indices(mask);
    if (idx.numel() == 0) {
        return std::nullopt;
    }
    return projections.reshape({projections.size(0), -1}).index_select(1, idx).amax(1);
}

std::vector<torch::Tensor> random_pixel_sample(const torch::Tensor& projections, const torch::Tensor& mask, int n,
                                               Rng& rng) {
    check_shapes(projections, mask);
    if (n < 1) {
        throw ConfigError("random_pixel_sample requires n >= 1");
    }
    const auto idx = masked_indices(mask);
    std::vector<std::int64_t> candidates(idx.data_ptr<std::int64_t>(), idx.data_ptr<std::int64_t>() + idx.numel());
    const std::size_t take = std::min(static_cast<std::size_t>(n), candidates.size());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
    }
    const auto flat = projections.reshape({projections.size(0), -1});
    std::vector<torch::Tensor> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        out.push_back(flat.select(1, candidates[i]));
    }
    return out;
}

std::vector<PooledPairTriple> build_triples(const torch::Tensor& source_projections, const torch::Tensor& source_mask,
                                            const torch::Tensor& target_projections,
                                            const torch::Tensor& target_pseudo_mask, const PoolingStrategy& strategy,
                                            Rng& rng) {
    strategy.validate();
    const auto fg = (source_mask.detach() > 0).to(source_projections.scalar_type());
    const auto bg = 1.0 - fg;
    const auto tgt = target_pseudo_mask.detach();

    const bool use_max = strategy.kind == PoolingStrategy::Kind::max;
    auto pool = [&](const torch::Tensor& p, const torch::Tensor& m) {
        return use_max ? masked_max_pool(p, m) : masked_mean_pool(p, m);
    };

    auto z_s = pool(source_projections, fg);
    auto z_s_neg = pool(source_projections, bg);
    if (!z_s || !z_s_neg) {
        return {};
    }

    std::vector<PooledPairTriple> out;
    if (strategy.kind == PoolingStrategy::Kind::random_pixels) {
        for (auto& z_t : random_pixel_sample(target_projections, tgt, strategy.n_pixels, rng)) {
            out.push_back({*z_s, std::move(z_t), *z_s_neg});
        }
        return out;
    }
    auto z_t = pool(target_projections, tgt);
    if (!z_t) {
        return {};
    }
    out.push_back({std::move(*z_s), std::move(*z_t), std::move(*z_s_neg)});
    return out;
}

}  // namespace mani
