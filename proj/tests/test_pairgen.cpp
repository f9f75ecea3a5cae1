#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "muscl/pairgen.hpp"
#include "muscl/rng.hpp"
#include "muscl/synth.hpp"

using namespace muscl;
using namespace muscl::pairs;

namespace {

FrameSet make_frame_set(std::size_t k, std::size_t h = 8, std::size_t w = 8,
                        std::uint64_t seed = 1) {
    FrameSet fs;
    fs.video_id = "v";
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        Image img(h, w);
        for (double& p : img.pixels) p = rng.uniform(0.0, 1.0);
        fs.frames.push_back(img);
        fs.source_indices.push_back(i * 7);
    }
    return fs;
}

PairGenConfig no_aug_cfg(Strategy s) {
    PairGenConfig cfg;
    cfg.strategy = s;
    cfg.augment = AugmentConfig::disabled();
    return cfg;
}

// chi-square upper bound for p > 0.01; df = bins - 1
double chi2_stat(const std::vector<std::size_t>& counts, double expected) {
    double stat = 0.0;
    for (std::size_t c : counts) {
        double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

}  // namespace

TEST_CASE("ppi mix at xi = 1 reproduces the anchor exactly") {
    FrameSet fs = make_frame_set(5);
    PositivePair p = ppi_mix(fs, 0, 2, 4, 1.0, 1.0);
    CHECK(p.x1.pixels == fs.frames[2].pixels);
    CHECK(p.x2.pixels == fs.frames[2].pixels);
    CHECK(p.xi1 == 1.0);
    CHECK(p.xi2 == 1.0);
    CHECK(p.frame_indices == std::vector<std::size_t>{0, 14, 28});
}

TEST_CASE("ppi mix at xi1 = 0 reproduces the earliest selected frame") {
    FrameSet fs = make_frame_set(5);
    PositivePair p = ppi_mix(fs, 1, 2, 3, 0.0, 0.5);
    CHECK(p.x1.pixels == fs.frames[1].pixels);
}

TEST_CASE("ppi mix matches the per-pixel interpolation oracle to f64") {
    FrameSet fs = make_frame_set(6, 10, 9, 33);
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        double xi1 = rng.uniform(0.0, 1.0), xi2 = rng.uniform(0.0, 1.0);
        PositivePair p = ppi_mix(fs, 1, 3, 5, xi1, xi2);
        for (std::size_t i = 0; i < p.x1.size(); ++i) {
            CHECK(p.x1.pixels[i] == xi1 * fs.frames[3].pixels[i] + (1 - xi1) * fs.frames[1].pixels[i]);
            CHECK(p.x2.pixels[i] == xi2 * fs.frames[3].pixels[i] + (1 - xi2) * fs.frames[5].pixels[i]);
            CHECK(p.x1.pixels[i] >= 0.0);
            CHECK(p.x1.pixels[i] <= 1.0);
        }
    }
}

TEST_CASE("ppi generation keeps the anchor strictly between its flanks") {
    FrameSet fs = make_frame_set(7);
    PairGenConfig cfg = no_aug_cfg(Strategy::S3);
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        PositivePair p = ppi_generate(fs, cfg, rng);
        REQUIRE(p.frame_indices.size() == 3);
        CHECK(p.frame_indices[0] < p.frame_indices[1]);
        CHECK(p.frame_indices[1] < p.frame_indices[2]);
        CHECK(p.xi1 >= 0.0);
        CHECK(p.xi1 <= 1.0);
        CHECK(p.strategy_used == Strategy::S3);
    }
}

TEST_CASE("ppi requires at least three frames") {
    FrameSet fs = make_frame_set(2);
    PairGenConfig cfg = no_aug_cfg(Strategy::S3);
    Rng rng(1);
    CHECK_THROWS(ppi_generate(fs, cfg, rng));
}

TEST_CASE("s1 with augmentation disabled duplicates the chosen frame") {
    FrameSet fs = make_frame_set(4);
    PairGenConfig cfg = no_aug_cfg(Strategy::S1);
    Rng rng(2);
    PositivePair p = s1_generate(fs, cfg, rng);
    CHECK(p.x1.pixels == p.x2.pixels);
    CHECK(p.xi1 == 1.0);
    CHECK(p.xi2 == 1.0);
    REQUIRE(p.frame_indices.size() == 1);
    bool found = false;
    for (std::size_t k = 0; k < fs.frames.size(); ++k)
        if (fs.source_indices[k] == p.frame_indices[0] && fs.frames[k].pixels == p.x1.pixels)
            found = true;
    CHECK(found);
}

TEST_CASE("s1 is deterministic given the rng state") {
    FrameSet fs = make_frame_set(4);
    PairGenConfig cfg;
    cfg.strategy = Strategy::S1;
    Rng a(5), b(5);
    PositivePair pa = s1_generate(fs, cfg, a);
    PositivePair pb = s1_generate(fs, cfg, b);
    CHECK(pa.x1.pixels == pb.x1.pixels);
    CHECK(pa.x2.pixels == pb.x2.pixels);
    CHECK(pa.frame_indices == pb.frame_indices);
}

TEST_CASE("s1 frame choice is uniform over K = 4") {
    FrameSet fs = make_frame_set(4);
    PairGenConfig cfg = no_aug_cfg(Strategy::S1);
    Rng rng(6);
    std::vector<std::size_t> counts(4, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        PositivePair p = s1_generate(fs, cfg, rng);
        ++counts[p.frame_indices[0] / 7];
    }
    // chi-square df=3 critical value at p=0.01 is 11.345
    CHECK(chi2_stat(counts, n / 4.0) < 11.345);
}

TEST_CASE("s2 with two frames and no augmentation returns them exactly") {
    FrameSet fs = make_frame_set(2);
    PairGenConfig cfg = no_aug_cfg(Strategy::S2);
    Rng rng(3);
    PositivePair p = s2_generate(fs, cfg, rng);
    bool fwd = p.x1.pixels == fs.frames[0].pixels && p.x2.pixels == fs.frames[1].pixels;
    bool rev = p.x1.pixels == fs.frames[1].pixels && p.x2.pixels == fs.frames[0].pixels;
    CHECK((fwd || rev));
}

TEST_CASE("s2 frames are distinct over many draws") {
    FrameSet fs = make_frame_set(5);
    PairGenConfig cfg = no_aug_cfg(Strategy::S2);
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        PositivePair p = s2_generate(fs, cfg, rng);
        REQUIRE(p.frame_indices.size() == 2);
        CHECK(p.frame_indices[0] != p.frame_indices[1]);
    }
    FrameSet one = make_frame_set(1);
    CHECK_THROWS(s2_generate(one, cfg, rng));
}

TEST_CASE("simclr pool draw with augmentation disabled duplicates one image") {
    std::vector<FrameSet> sets = {make_frame_set(3, 8, 8, 1), make_frame_set(2, 8, 8, 2)};
    auto pool = flatten_pool(sets);
    REQUIRE(pool.size() == 5);
    PairGenConfig cfg = no_aug_cfg(Strategy::SimCLRStyle);
    Rng rng(8);
    PositivePair p = simclr_generate(pool, cfg, rng);
    CHECK(p.x1.pixels == p.x2.pixels);

    std::vector<PoolImage> empty;
    CHECK_THROWS(simclr_generate(empty, cfg, rng));
}

TEST_CASE("simclr pool sampling is uniform over images") {
    std::vector<FrameSet> sets = {make_frame_set(3, 4, 4, 1), make_frame_set(2, 4, 4, 2)};
    sets[0].video_id = "a";
    sets[1].video_id = "b";
    auto pool = flatten_pool(sets);
    PairGenConfig cfg = no_aug_cfg(Strategy::SimCLRStyle);
    Rng rng(10);
    std::vector<std::size_t> counts(pool.size(), 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        PositivePair p = simclr_generate(pool, cfg, rng);
        for (std::size_t j = 0; j < pool.size(); ++j)
            if (pool[j].video_id == p.video_id && pool[j].source_index == p.frame_indices[0]) {
                ++counts[j];
                break;
            }
    }
    // chi-square df=4 critical value at p=0.01 is 13.277
    CHECK(chi2_stat(counts, static_cast<double>(n) / pool.size()) < 13.277);
}

TEST_CASE("simclr batches from few videos repeat video ids") {
    std::vector<FrameSet> sets;
    for (int v = 0; v < 5; ++v) {
        FrameSet fs = make_frame_set(6, 8, 8, 100 + v);
        fs.video_id = "v" + std::to_string(v);
        sets.push_back(fs);
    }
    PairGenConfig cfg = no_aug_cfg(Strategy::SimCLRStyle);
    Rng rng(11);
    PairBatch batch = make_batch(sets, 32, cfg, rng);
    REQUIRE(batch.size() == 32);
    std::set<std::string> ids;
    for (const auto& p : batch.pairs) ids.insert(p.video_id);
    CHECK(ids.size() < 32);  // pigeonhole: only 5 videos available
}

TEST_CASE("augment with neutral settings is the identity") {
    FrameSet fs = make_frame_set(1, 9, 11, 12);
    Rng rng(13);
    Image out = augment(fs.frames[0], AugmentConfig::disabled(), rng);
    CHECK(out.pixels == fs.frames[0].pixels);
}

TEST_CASE("augment preserves dimensions and pixel range") {
    Rng rng(14);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t h = 2 + rng.uniform_index(10);
        std::size_t w = 2 + rng.uniform_index(10);
        Image img(h, w);
        for (double& p : img.pixels) p = rng.uniform(0.0, 1.0);
        AugmentConfig cfg;
        cfg.crop_min_ratio = rng.uniform(0.3, 1.0);
        cfg.flip_prob = rng.uniform(0.0, 1.0);
        cfg.jitter_strength = rng.uniform(0.0, 1.0);
        cfg.blur_enabled = rng.uniform(0.0, 1.0) < 0.5;
        Image out = augment(img, cfg, rng);
        CHECK(out.height == h);
        CHECK(out.width == w);
        for (double p : out.pixels) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
}

TEST_CASE("augment on a 1x1 image passes the crop through") {
    Image img(1, 1);
    img.pixels[0] = 0.75;
    AugmentConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.jitter_strength = 0.0;
    Rng rng(15);
    Image out = augment(img, cfg, rng);
    CHECK(out.pixels[0] == 0.75);
}

TEST_CASE("batch of 32 from 40 videos has 32 distinct video ids") {
    std::vector<FrameSet> sets;
    for (int v = 0; v < 40; ++v) {
        FrameSet fs = make_frame_set(5, 8, 8, 200 + v);
        fs.video_id = "v" + std::to_string(v);
        sets.push_back(fs);
    }
    PairGenConfig cfg = no_aug_cfg(Strategy::S3);
    Rng rng(16);
    PairBatch batch = make_batch(sets, 32, cfg, rng);
    REQUIRE(batch.size() == 32);
    std::set<std::string> ids;
    for (const auto& p : batch.pairs) ids.insert(p.video_id);
    CHECK(ids.size() == 32);

    PairBatch single = make_batch(sets, 1, cfg, rng);
    CHECK(single.size() == 1);

    CHECK_THROWS(make_batch(sets, 41, cfg, rng));
}

TEST_CASE("batches never repeat a video id across 1000 draws") {
    std::vector<FrameSet> sets;
    for (int v = 0; v < 12; ++v) {
        FrameSet fs = make_frame_set(4, 6, 6, 300 + v);
        fs.video_id = "v" + std::to_string(v);
        sets.push_back(fs);
    }
    PairGenConfig cfg = no_aug_cfg(Strategy::S2);
    Rng rng(17);
    for (int b = 0; b < 1000; ++b) {
        PairBatch batch = make_batch(sets, 8, cfg, rng);
        std::set<std::string> ids;
        for (const auto& p : batch.pairs) ids.insert(p.video_id);
        CHECK(ids.size() == 8);
    }
}

TEST_CASE("short videos degrade explicitly when the caller opts in") {
    std::vector<FrameSet> sets = {make_frame_set(1, 8, 8, 20), make_frame_set(2, 8, 8, 21),
                                  make_frame_set(5, 8, 8, 22)};
    for (std::size_t v = 0; v < sets.size(); ++v) sets[v].video_id = "v" + std::to_string(v);
    PairGenConfig cfg = no_aug_cfg(Strategy::S3);
    Rng rng(18);
    CHECK_THROWS(make_batch(sets, 3, cfg, rng, FallbackPolicy::None));

    PairBatch batch = make_batch(sets, 3, cfg, rng, FallbackPolicy::Degrade);
    REQUIRE(batch.size() == 3);
    for (const auto& p : batch.pairs) {
        if (p.video_id == "v0") CHECK(p.strategy_used == Strategy::S1);
        if (p.video_id == "v1") CHECK(p.strategy_used == Strategy::S2);
        if (p.video_id == "v2") CHECK(p.strategy_used == Strategy::S3);
    }
}

TEST_CASE("strategy names round-trip") {
    for (Strategy s : {Strategy::SimCLRStyle, Strategy::S1, Strategy::S2, Strategy::S3})
        CHECK(strategy_from_name(strategy_name(s)) == s);
    CHECK_THROWS(strategy_from_name("bogus"));
}
