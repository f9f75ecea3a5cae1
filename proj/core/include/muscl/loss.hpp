#pragma once

#include "muscl/tape.hpp"
#include "muscl/tensor.hpp"

namespace muscl::loss {

inline constexpr double kNormEps = 1e-12;

/// z_i . z_j / (max(||z_i||, eps) * max(||z_j||, eps)). Zero vectors give 0.
double cosine_sim(const Tensor& zi, const Tensor& zj);
Var cosine_sim(Var zi, Var zj);

/// Per-pair terms L_p = l(2p, 2p+1) + l(2p+1, 2p) over a 2N x d feature
/// matrix (rows 2p, 2p+1 are pair p). The softmax denominator of l(i, .)
/// ranges over every sample except i itself — the partner IS among the
/// negatives' terms — and is computed with max-subtraction stabilization.
Var pairwise_losses(Var Z, double tau);

struct LossBreakdown {
    Var total;     // scalar, (1/2N) sum_i w_i * L_i
    Var per_pair;  // [N]
    Var weights;   // [N]
    double tau;
};

/// Weighted batch loss; gradients flow to Z through the per-pair terms and to
/// the weights through the linear combination.
LossBreakdown weighted_infonce(Var Z, Var weights, double tau);

/// Unweighted loss (weights identically 1).
Var validation_loss(Var Z, double tau);

}  // namespace muscl::loss
