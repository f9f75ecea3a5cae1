#pragma once

#include <string>
#include <vector>

#include "muscl/rng.hpp"
#include "muscl/synth.hpp"
#include "muscl/tape.hpp"
#include "muscl/tensor.hpp"

namespace muscl::nets {

/// Ordered, named parameter tensors. Gradient vectors (Grads) align with the
/// value order, which is also the tape leaf registration order after attach().
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t add(std::string name, Tensor t);
    std::size_t count() const { return values.size(); }
    std::size_t total_size() const;
    const Tensor& get(const std::string& name) const;
};

using Grads = std::vector<Tensor>;

double dot(const Grads& a, const Grads& b);
void axpy(ParamSet& p, double a, const Grads& g);  // p.values += a * g
void axpy(Grads& acc, double a, const Grads& g);
Grads zeros_like(const ParamSet& p);

struct ArchConfig {
    std::vector<std::size_t> conv_channels{8, 16, 32};  // 3x3 kernels, relu, 2x2 mean-pool each
    std::size_t repr_dim = 64;   // D
    std::size_t proj_dim = 32;   // d
    std::size_t weightnet_hidden = 100;

    std::size_t min_image_dim() const { return std::size_t{1} << (conv_channels.size() + 1); }
    std::string serialize() const;
    static ArchConfig deserialize(const std::string& text);
};

/// Encoder f + projection head g parameters.
struct ModelParams {
    ArchConfig arch;
    ParamSet params;
};

/// Pair-weighting net over the symmetric featurization [h1+h2 ; |h1-h2|]:
/// linear(2D -> hidden), relu, linear(hidden -> 1), sigmoid.
struct WeightNetParams {
    std::size_t repr_dim = 64;
    std::size_t hidden = 100;
    ParamSet params;
};

/// He-initialized model, zero-initialized weight-net output layer (so the
/// initial weight is exactly 0.5 for every pair). Biases zero.
std::pair<ModelParams, WeightNetParams> init_params(const ArchConfig& arch, Rng& rng);

/// Register every parameter as a gradient leaf (training) or constant (frozen).
std::vector<Var> attach(Tape& tape, const ParamSet& p);
std::vector<Var> attach_const(Tape& tape, const ParamSet& p);

Tensor image_to_tensor(const synth::Image& img);  // [1,H,W]

/// h = f(x): conv stack (pad-1, 3x3 conv, relu, 2x2 mean-pool per layer),
/// global mean-pool, linear to D. Throws if the image is below the stack's
/// minimum size.
Var encode_image(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp, const Tensor& img);

/// Rows of H are the encodings of `images`, in order.
Var encode_batch(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp,
                 const std::vector<Tensor>& images);

/// Z = g(H): two-layer MLP D -> D -> d, relu between.
Var project(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp, Var H);

/// w = sigmoid(MLP([h1+h2 ; |h1-h2|])) in (0,1); exactly symmetric in its
/// two inputs.
Var weigh(Tape& tape, const WeightNetParams& arch_ref, const std::vector<Var>& wp, Var h1, Var h2);

/// Conv stack only (pad, conv, relu, pool per layer) then global mean-pool;
/// the encoder minus its final linear layer.
Var conv_pooled(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp, const Tensor& img);

/// Convenience value-only forwards (fresh internal tape).
Tensor encode_images_value(const ModelParams& m, const std::vector<Tensor>& images);  // [n,D]
Tensor pooled_features_value(const ModelParams& m, const std::vector<Tensor>& images);  // [n,C_last]
double weigh_value(const WeightNetParams& w, const Tensor& h1, const Tensor& h2);

}  // namespace muscl::nets
