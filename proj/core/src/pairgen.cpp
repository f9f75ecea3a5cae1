#include "muscl/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace muscl::pairs {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::SimCLRStyle: return "simclr";
        case Strategy::S1: return "s1";
        case Strategy::S2: return "s2";
        case Strategy::S3: return "s3";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "simclr") return Strategy::SimCLRStyle;
    if (name == "s1") return Strategy::S1;
    if (name == "s2") return Strategy::S2;
    if (name == "s3") return Strategy::S3;
    throw std::invalid_argument("unknown pair strategy '" + name + "'");
}

namespace {

Image bilinear_resize(const Image& src, std::size_t out_h, std::size_t out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    Image out(out_h, out_w);
    double sy = static_cast<double>(src.height) / out_h;
    double sx = static_cast<double>(src.width) / out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        double cy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
        std::size_t y0 = static_cast<std::size_t>(cy);
        std::size_t y1 = std::min(y0 + 1, src.height - 1);
        double ay = cy - y0;
        for (std::size_t x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            double cx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
            std::size_t x0 = static_cast<std::size_t>(cx);
            std::size_t x1 = std::min(x0 + 1, src.width - 1);
            double ax = cx - x0;
            out.at(y, x) = (1 - ay) * ((1 - ax) * src.at(y0, x0) + ax * src.at(y0, x1)) +
                           ay * ((1 - ax) * src.at(y1, x0) + ax * src.at(y1, x1));
        }
    }
    return out;
}

}  // namespace

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
    std::size_t h = img.height, w = img.width;

    // 1) random crop, aspect preserved, resized back
    double ratio = rng.uniform(cfg.crop_min_ratio, 1.0);
    double scale = std::sqrt(ratio);
    std::size_t ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h * scale)));
    std::size_t cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * scale)));
    ch = std::min(ch, h);
    cw = std::min(cw, w);
    std::size_t top = rng.uniform_index(h - ch + 1);
    std::size_t left = rng.uniform_index(w - cw + 1);
    Image out;
    if (ch == h && cw == w) {
        out = img;
    } else {
        Image crop(ch, cw);
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x) crop.at(y, x) = img.at(top + y, left + x);
        out = bilinear_resize(crop, h, w);
    }

    // 2) horizontal flip
    if (rng.uniform() < cfg.flip_prob) {
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) std::swap(out.at(y, x), out.at(y, w - 1 - x));
    }

    // 3) brightness/contrast jitter around the image mean
    double s = cfg.jitter_strength;
    double b = rng.uniform(-s, s);
    double c = rng.uniform(1.0 - s, 1.0 + s);
    if (b != 0.0 || c != 1.0) {
        double mean = 0.0;
        for (double p : out.pixels) mean += p;
        mean /= static_cast<double>(out.size());
        for (double& p : out.pixels) p = std::clamp(c * (p - mean) + mean + b, 0.0, 1.0);
    }

    // 4) optional 3x3 Gaussian blur, sigma 0.5
    if (cfg.blur_enabled) {
        static const double k[3] = {0.10650697891920076, 0.7869860421615985, 0.10650697891920076};
        Image tmp(h, w);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int d = -1; d <= 1; ++d) {
                    std::size_t xx = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(x) + d, 0, static_cast<long>(w) - 1));
                    acc += k[d + 1] * out.at(y, xx);
                }
                tmp.at(y, x) = acc;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int d = -1; d <= 1; ++d) {
                    std::size_t yy = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(y) + d, 0, static_cast<long>(h) - 1));
                    acc += k[d + 1] * tmp.at(yy, x);
                }
                out.at(y, x) = std::clamp(acc, 0.0, 1.0);
            }
    }
    return out;
}

PositivePair ppi_mix(const FrameSet& fs, std::size_t i1, std::size_t i2, std::size_t i3,
                     double xi1, double xi2) {
    if (!(i1 < i2 && i2 < i3) || i3 >= fs.K())
        throw std::invalid_argument("ppi_mix: positions must satisfy i1 < i2 < i3 < K");
    const Image& first = fs.frames[i1];
    const Image& anchor = fs.frames[i2];
    const Image& third = fs.frames[i3];
    PositivePair pair;
    pair.video_id = fs.video_id;
    pair.frame_indices = {fs.source_indices[i1], fs.source_indices[i2], fs.source_indices[i3]};
    pair.xi1 = xi1;
    pair.xi2 = xi2;
    pair.strategy_used = Strategy::S3;
    pair.x1 = Image(anchor.height, anchor.width);
    pair.x2 = Image(anchor.height, anchor.width);
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        pair.x1.pixels[i] = xi1 * anchor.pixels[i] + (1.0 - xi1) * first.pixels[i];
        pair.x2.pixels[i] = xi2 * anchor.pixels[i] + (1.0 - xi2) * third.pixels[i];
    }
    return pair;
}

PositivePair ppi_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng) {
    if (fs.K() < 3)
        throw std::invalid_argument(
            "ppi_generate: frame set '" + fs.video_id + "' has K=" + std::to_string(fs.K()) +
            " < 3; fall back to s2 (K=2) or s1 (K=1) explicitly");
    auto picked = rng.sample_without_replacement(fs.K(), 3);
    std::sort(picked.begin(), picked.end());
    double xi1 = beta_sample(cfg.beta_alpha, cfg.beta_beta, rng);
    double xi2 = beta_sample(cfg.beta_alpha, cfg.beta_beta, rng);
    PositivePair pair = ppi_mix(fs, picked[0], picked[1], picked[2], xi1, xi2);
    pair.x1 = augment(pair.x1, cfg.augment, rng);
    pair.x2 = augment(pair.x2, cfg.augment, rng);
    return pair;
}

PositivePair s1_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng) {
    if (fs.K() == 0) throw std::invalid_argument("s1_generate: empty frame set '" + fs.video_id + "'");
    std::size_t i = rng.uniform_index(fs.K());
    PositivePair pair;
    pair.video_id = fs.video_id;
    pair.frame_indices = {fs.source_indices[i]};
    pair.strategy_used = Strategy::S1;
    pair.x1 = augment(fs.frames[i], cfg.augment, rng);
    pair.x2 = augment(fs.frames[i], cfg.augment, rng);
    return pair;
}

PositivePair s2_generate(const FrameSet& fs, const PairGenConfig& cfg, Rng& rng) {
    if (fs.K() < 2)
        throw std::invalid_argument("s2_generate: frame set '" + fs.video_id + "' has K=" +
                                    std::to_string(fs.K()) + " < 2");
    auto picked = rng.sample_without_replacement(fs.K(), 2);
    PositivePair pair;
    pair.video_id = fs.video_id;
    pair.frame_indices = {fs.source_indices[picked[0]], fs.source_indices[picked[1]]};
    pair.strategy_used = Strategy::S2;
    pair.x1 = augment(fs.frames[picked[0]], cfg.augment, rng);
    pair.x2 = augment(fs.frames[picked[1]], cfg.augment, rng);
    return pair;
}

std::vector<PoolImage> flatten_pool(const std::vector<FrameSet>& sets) {
    std::vector<PoolImage> pool;
    for (const FrameSet& fs : sets)
        for (std::size_t i = 0; i < fs.K(); ++i)
            pool.push_back({&fs.frames[i], fs.video_id, fs.source_indices[i]});
    return pool;
}

PositivePair simclr_generate(const std::vector<PoolImage>& pool, const PairGenConfig& cfg,
                             Rng& rng) {
    if (pool.empty()) throw std::invalid_argument("simclr_generate: empty image pool");
    const PoolImage& pick = pool[rng.uniform_index(pool.size())];
    PositivePair pair;
    pair.video_id = pick.video_id;
    pair.frame_indices = {pick.source_index};
    pair.strategy_used = Strategy::SimCLRStyle;
    pair.x1 = augment(*pick.image, cfg.augment, rng);
    pair.x2 = augment(*pick.image, cfg.augment, rng);
    return pair;
}

PairBatch make_batch(const std::vector<FrameSet>& sets, std::size_t n, const PairGenConfig& cfg,
                     Rng& rng, FallbackPolicy fallback) {
    PairBatch batch;
    if (cfg.strategy == Strategy::SimCLRStyle) {
        auto pool = flatten_pool(sets);
        for (std::size_t i = 0; i < n; ++i) batch.pairs.push_back(simclr_generate(pool, cfg, rng));
        return batch;
    }
    if (sets.size() < n)
        throw std::invalid_argument("make_batch: " + std::to_string(sets.size()) +
                                    " frame sets available, batch needs " + std::to_string(n));
    auto picked = rng.sample_without_replacement(sets.size(), n);
    for (std::size_t idx : picked) {
        const FrameSet& fs = sets[idx];
        Strategy s = cfg.strategy;
        if (fallback == FallbackPolicy::Degrade) {
            if (s == Strategy::S3 && fs.K() < 3) s = fs.K() >= 2 ? Strategy::S2 : Strategy::S1;
            if (s == Strategy::S2 && fs.K() < 2) s = Strategy::S1;
        }
        switch (s) {
            case Strategy::S3: batch.pairs.push_back(ppi_generate(fs, cfg, rng)); break;
            case Strategy::S2: batch.pairs.push_back(s2_generate(fs, cfg, rng)); break;
            case Strategy::S1: batch.pairs.push_back(s1_generate(fs, cfg, rng)); break;
            case Strategy::SimCLRStyle: break;  // unreachable
        }
    }
    std::set<std::string> ids;
    for (const auto& p : batch.pairs) ids.insert(p.video_id);
    if (ids.size() != batch.pairs.size())
        throw std::logic_error("make_batch: duplicate video_id in a distinct-video batch");
    return batch;
}

}  // namespace muscl::pairs
