#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "muscl/rng.hpp"

namespace muscl::synth {

/// Single-channel image, pixels in [0, 1], row-major.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    std::size_t size() const { return pixels.size(); }
};

struct VideoClip {
    std::string video_id;
    double fps = 0.0;
    std::vector<Image> frames;  // temporal order, uniform size
    std::optional<int> latent_class;  // evaluation only; never visible to pre-training
    std::string tag;                  // sub-corpus tag for weight exports ("clean", "corrupted", ...)
};

/// Subsampled frames of one clip. Carries no label on purpose: pre-training
/// consumes FrameSets only.
struct FrameSet {
    std::string video_id;
    std::vector<Image> frames;
    std::vector<std::size_t> source_indices;  // strictly increasing, gaps >= 6
    std::size_t K() const { return frames.size(); }
};

struct SynthConfig {
    std::size_t n_videos = 40;
    std::size_t frames_per_video = 60;
    double fps = 15.0;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t n_classes = 2;
    double speckle = 0.08;       // background speckle noise std
    double drift_speed = 1.0;    // lesion drift, pixels per frame
    std::size_t n_junk_videos = 0;   // long lesion-free sweeps appended after the labeled clips
    std::size_t junk_frames = 400;   // frames per junk sweep
    std::uint64_t seed = 0;
};

/// Frame subsampling at ~samples_per_second with hard interval floor 6
/// (I > 5). step = max(6, floor(fps / samples_per_second)); indices are
/// 0, step, 2*step, ... up to the last frame.
FrameSet extract_frame_set(const VideoClip& clip, double samples_per_second = 3.0);

/// Deterministic synthetic corpus: per clip, a bright elliptical lesion whose
/// edge sharpness encodes the latent class; lesion size, position, interior
/// texture, and photometric gain/offset are per-clip nuisances, and the
/// lesion drifts and pulsates frame to frame. Classes are assigned
/// round-robin. n_junk_videos lesion-free unlabeled sweeps (tag "junk") are
/// appended after the labeled clips; they are much longer than the labeled
/// clips and nearly static, like probe time spent off any finding. Pure
/// function of cfg (each clip uses the sub-stream (seed, clip index)).
std::vector<VideoClip> generate_synthetic_corpus(const SynthConfig& cfg);

/// On-disk layout: root/video_<id>/frame_<%05d>.pgm (binary P5, maxval 255)
/// plus root/video_<id>/meta with "fps=<f64>" and optional "class=<int>",
/// "tag=<string>" lines.
std::vector<VideoClip> load_corpus_from_disk(const std::string& root_path);
void save_corpus_to_disk(const std::vector<VideoClip>& corpus, const std::string& root_path);

Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

/// Replaces `fraction` of the videos (rounded down, at least 1 if fraction>0)
/// with spliced clips whose first half comes from one clip and second half
/// from a clip of a different class. Spliced clips get tag "corrupted", the
/// rest "clean".
std::vector<VideoClip> splice_corrupt_corpus(const std::vector<VideoClip>& corpus,
                                             double fraction, Rng& rng);

}  // namespace muscl::synth
