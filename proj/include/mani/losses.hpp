#pragma once

#include <functional>
#include <span>

#include <torch/torch.h>

#include "mani/model.hpp"

namespace mani {

/// log(1 + e^x) via max(x, 0) + log(1 + e^-|x|).
double softplus(double x);
torch::Tensor softplus(const torch::Tensor& x);

/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps), evaluated per image and
/// averaged over the batch. Accepts [H,W], [B,H,W] or [B,1,H,W].
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps = 1.0);

/// Mean over pixels of sp(logit) - target * logit.
torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& target);

/// dice_loss(sigmoid(logits)) + bce_loss(logits), equal weights.
torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& target);

/// One MI training unit: pooled source nuclei, target nuclei and source background vectors.
struct PooledPairTriple {
    torch::Tensor z_s;
    torch::Tensor z_t;
    torch::Tensor z_s_neg;
};

/// Scores a batch of vector pairs: ([N,D], [N,D]) -> [N].
using Critic = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

/// mean(-sp(-T(z_s, z_t))) - mean(sp(T(z_s_neg, z_t))), one negative per positive.
/// Throws std::invalid_argument on an empty list.
torch::Tensor jsd_mi_estimate(std::span<const PooledPairTriple> triples, const Critic& critic);
torch::Tensor jsd_mi_estimate(std::span<const PooledPairTriple> triples, Discriminator& discriminator);

/// The same bound from precomputed positive and negative scores.
torch::Tensor jsd_from_scores(const torch::Tensor& positive, const torch::Tensor& negative);

}  // namespace mani
