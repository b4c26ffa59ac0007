#include "mani/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mani/types.hpp"

namespace mani {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

torch::Tensor softplus(const torch::Tensor& x) { return torch::clamp_min(x, 0) + torch::log1p(torch::exp(-torch::abs(x))); }

namespace {

// Flattens to [B, pixels].
torch::Tensor per_image(const torch::Tensor& t) {
    if (t.dim() == 2) {
        return t.reshape({1, -1});
    }
    if (t.dim() == 3 || t.dim() == 4) {
        return t.reshape({t.size(0), -1});
    }
    throw ShapeError("expected [H,W], [B,H,W] or [B,1,H,W]");
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError(std::string(what) + ": prediction and target shapes differ");
    }
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps) {
    require_same_shape(probs, target, "dice_loss");
    const auto p = per_image(probs);
    const auto t = per_image(target).to(p.scalar_type());
    const auto inter = (p * t).sum(1);
    const auto denom = p.sum(1) + t.sum(1);
    return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean();
}

torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& target) {
    require_same_shape(logits, target, "bce_loss");
    return (mani::softplus(logits) - target.to(logits.scalar_type()) * logits).mean();
}

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& target) {
    return dice_loss(torch::sigmoid(logits), target) + bce_loss(logits, target);
}

torch::Tensor jsd_from_scores(const torch::Tensor& positive, const torch::Tensor& negative) {
    if (positive.numel() == 0 || negative.numel() == 0) {
        throw std::invalid_argument("jsd estimate needs at least one positive and one negative score");
    }
    return (-mani::softplus(-positive)).mean() - mani::softplus(negative).mean();
}

torch::Tensor jsd_mi_estimate(std::span<const PooledPairTriple> triples, const Critic& critic) {
    if (triples.empty()) {
        throw std::invalid_argument("jsd_mi_estimate called with an empty triple list");
    }
    std::vector<torch::Tensor> zs;
    std::vector<torch::Tensor> zt;
    std::vector<torch::Tensor> zn;
    zs.reserve(triples.size());
    zt.reserve(triples.size());
    zn.reserve(triples.size());
    for (const auto& t : triples) {
        if (t.z_s.dim() != 1 || t.z_s.sizes() != t.z_t.sizes() || t.z_s.sizes() != t.z_s_neg.sizes()) {
            throw ShapeError("triple components must be D-vectors of equal length");
        }
        zs.push_back(t.z_s);
        zt.push_back(t.z_t);
        zn.push_back(t.z_s_neg);
    }
    const auto s = torch::stack(zs);
    const auto t = torch::stack(zt);
    const auto n = torch::stack(zn);
    return jsd_from_scores(critic(s, t), critic(n, t));
}

torch::Tensor jsd_mi_estimate(std::span<const PooledPairTriple> triples, Discriminator& discriminator) {
    return jsd_mi_estimate(triples, [&](const torch::Tensor& a, const torch::Tensor& b) { return discriminator->forward(a, b); });
}

}  // namespace mani
