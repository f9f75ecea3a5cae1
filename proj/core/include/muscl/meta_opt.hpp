#pragma once

#include <vector>

#include "muscl/loss.hpp"
#include "muscl/nets.hpp"
#include "muscl/pairgen.hpp"

namespace muscl::meta {

using nets::Grads;
using nets::ModelParams;
using nets::ParamSet;
using nets::WeightNetParams;
using pairs::PairBatch;

struct OptimConfig {
    enum class Mode { Meta, Plain };
    Mode mode = Mode::Meta;
    double alpha1 = 0.1;        // main lr (plain SGD, meta mode)
    double plain_lr = 1e-3;     // Adam lr, plain mode
    double alpha2 = 6e-5;       // weight-net lr (plain SGD)
    double weight_decay = 1e-4; // decoupled, plain-mode Adam only
    double tau = 0.5;
    std::size_t batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    static OptimConfig meta() { return {}; }
    static OptimConfig plain() {
        OptimConfig c;
        c.mode = Mode::Plain;
        return c;
    }
    void validate() const;
};

struct AdamState {
    Grads m, v;
    bool initialized = false;
};

struct TrainState {
    ModelParams theta_m;
    WeightNetParams theta_c;
    std::size_t step = 0;  // t; incremented exactly once per train step
    AdamState adam;        // plain mode only
};

/// One forward pass over the batch plus N backward passes, one per pair, on
/// the scalars (1/2N) L_i. Each L_i keeps its full dependence on all 2N
/// feature rows, so each g_i is a full-batch gradient.
struct PerPairGrads {
    Tensor H;              // 2N x D representations at theta_m
    Tensor per_pair;       // [N] loss terms L_i
    std::vector<Grads> g;  // N gradients over all of theta_m
};
PerPairGrads per_pair_gradients(const ModelParams& m, const PairBatch& batch, double tau);

/// theta_hat = theta_m - alpha1 * sum_i w_i g_i, with w_i evaluated at
/// theta_m (H is constant w.r.t. the weighting net here).
struct Lookahead {
    ParamSet theta_hat;
    std::vector<double> weights;
    PerPairGrads ppg;
};
Lookahead lookahead_step(const ModelParams& m, const WeightNetParams& c, const PairBatch& batch,
                         double alpha1, double tau);

/// Closed-form gradient of the validation loss at theta_hat w.r.t. the
/// weighting-net parameters: with g_v = grad of the unweighted validation
/// loss at theta_hat and c_i = -alpha1 * <g_v, g_i>, the result is
/// sum_i c_i * d w_i / d theta_c (first-order only).
Grads meta_gradient(const ModelParams& m, const ParamSet& theta_hat, const WeightNetParams& c,
                    const Tensor& H, const std::vector<Grads>& g, const PairBatch& valid_batch,
                    double alpha1, double tau);

struct StepInfo {
    double train_loss = 0.0;           // weighted total actually stepped on
    double valid_loss = 0.0;           // meta mode: unweighted loss at theta_hat
    std::vector<double> weights;       // meta mode: weights used for the final update
};

/// The three-step procedure: (1) lookahead with the current weighting net;
/// (2) one SGD step on the weighting net along the closed-form meta gradient;
/// (3) final model update on the SAME batch with the refreshed weights,
/// reusing the cached per-pair gradients.
StepInfo meta_train_step(TrainState& state, const PairBatch& train_batch,
                         const PairBatch& valid_batch, const OptimConfig& cfg);

/// One Adam step (decoupled weight decay) on the unweighted loss.
StepInfo plain_train_step(TrainState& state, const PairBatch& train_batch, const OptimConfig& cfg);

std::vector<Tensor> batch_images(const PairBatch& batch);

}  // namespace muscl::meta
