#pragma once

#include <string>
#include <vector>

#include "muscl/rng.hpp"
#include "muscl/synth.hpp"

namespace muscl::pairs {

using synth::FrameSet;
using synth::Image;

struct AugmentConfig {
    double crop_min_ratio = 0.85;  // minimum area ratio of the random crop
    double flip_prob = 0.5;
    double jitter_strength = 0.6;  // max brightness shift / contrast deviation
    bool blur_enabled = false;     // 3x3 Gaussian, sigma 0.5

    static AugmentConfig disabled() { return {1.0, 0.0, 0.0, false}; }
};

enum class Strategy { SimCLRStyle, S1, S2, S3 };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct PairGenConfig {
    Strategy strategy = Strategy::S3;
    double beta_alpha = 2.0;
    double beta_beta = 2.0;
    AugmentConfig augment;
};

struct PositivePair {
    Image x1, x2;
    std::string video_id;
    std::vector<std::size_t> frame_indices;  // source indices of the frames used
    double xi1 = 1.0, xi2 = 1.0;             // mixing coefficients (1.0 when not interpolated)
    Strategy strategy_used = Strategy::S1;
};

struct PairBatch {
    std::vector<PositivePair> pairs;
    std::size_t size() const { return pairs.size(); }
};

/// Random crop (area ratio ~ U[crop_min_ratio, 1], aspect preserved, bilinear
/// resize back), horizontal flip, brightness/contrast jitter, optional blur.
/// Output pixels stay in [0, 1] and dimensions equal the input's.
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

/// Deterministic interpolation core: x1 = xi1*anchor + (1-xi1)*first,
/// x2 = xi2*anchor + (1-xi2)*third, where (i1 < i2 < i3) index fs.frames and
/// i2 is the anchor. No augmentation.
PositivePair ppi_mix(const FrameSet& fs, std::size_t i1, std::size_t i2, std::size_t i3,
                     double xi1, double xi2);

/// Three distinct frame positions, sorted chronologically; Beta-distributed
/// coefficients; both outputs independently augmented. Requires K >= 3; the
/// error tells the caller to fall back to S2/S1 explicitly.
PositivePair ppi_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng);

/// One frame, augmented twice.
PositivePair s1_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng);

/// Two distinct frames, each augmented once. Requires K >= 2.
PositivePair s2_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng);

/// Pool entry for the SimCLR-style strategy (all frames flattened).
struct PoolImage {
    const Image* image;
    std::string video_id;
    std::size_t source_index;
};
std::vector<PoolImage> flatten_pool(const std::vector<FrameSet>& sets);

/// One pool image augmented twice. Batches built this way may repeat videos;
/// the distinct-video invariant deliberately does not apply.
PositivePair simclr_generate(const std::vector<PoolImage>& pool, const PairGenConfig& cfg, Rng& rng);

enum class FallbackPolicy {
    None,     // K < 3 under S3 (or K < 2 under S2) throws
    Degrade,  // S3 -> S2 -> S1 per frame set; the used strategy is recorded on the pair
};

/// N pairs from N distinct videos (S1/S2/S3) or N pool draws (SimCLR-style).
PairBatch make_batch(const std::vector<FrameSet>& sets, std::size_t n, const PairGenConfig& cfg,
                     Rng& rng, FallbackPolicy fallback = FallbackPolicy::None);

}  // namespace muscl::pairs
