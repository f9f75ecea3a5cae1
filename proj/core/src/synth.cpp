#include "muscl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace muscl::synth {

FrameSet extract_frame_set(const VideoClip& clip, double samples_per_second) {
    if (clip.frames.empty())
        throw std::invalid_argument("extract_frame_set: clip '" + clip.video_id + "' has no frames");
    if (!(clip.fps > 0.0))
        throw std::invalid_argument("extract_frame_set: clip '" + clip.video_id + "' has fps " +
                                    std::to_string(clip.fps));
    std::size_t step = static_cast<std::size_t>(std::floor(clip.fps / samples_per_second));
    if (step < 6) step = 6;  // interval must stay > 5 even at low frame rates
    FrameSet fs;
    fs.video_id = clip.video_id;
    for (std::size_t i = 0; i < clip.frames.size(); i += step) {
        fs.source_indices.push_back(i);
        fs.frames.push_back(clip.frames[i]);
    }
    return fs;
}

namespace {

/// Torus texture sampled bilinearly at real coordinates; textures are static
/// per clip so consecutive frames stay correlated.
struct TorusTexture {
    std::size_t h, w;
    std::vector<double> v;  // ~N(0,1) entries

    TorusTexture(std::size_t h_, std::size_t w_, Rng& rng) : h(h_), w(w_), v(h_ * w_) {
        for (auto& x : v) x = rng.normal();
    }
    double sample(double y, double x) const {
        double fy = y - std::floor(y / h) * h;
        double fx = x - std::floor(x / w) * w;
        std::size_t y0 = static_cast<std::size_t>(fy) % h;
        std::size_t x0 = static_cast<std::size_t>(fx) % w;
        std::size_t y1 = (y0 + 1) % h;
        std::size_t x1 = (x0 + 1) % w;
        double ay = fy - std::floor(fy);
        double ax = fx - std::floor(fx);
        return (1 - ay) * ((1 - ax) * v[y0 * w + x0] + ax * v[y0 * w + x1]) +
               ay * ((1 - ax) * v[y1 * w + x0] + ax * v[y1 * w + x1]);
    }
    void smooth() {
        std::vector<double> out(v.size());
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        s += v[((y + h + dy) % h) * w + (x + w + dx) % w];
                out[y * w + x] = s / 9.0;
            }
        v = std::move(out);
    }
};

VideoClip render_clip(const SynthConfig& cfg, std::size_t index, bool junk) {
    Rng rng = Rng::substream(cfg.seed, {index});
    int cls = static_cast<int>(index % cfg.n_classes);
    double cls_frac = cfg.n_classes > 1
                          ? static_cast<double>(cls) / static_cast<double>(cfg.n_classes - 1)
                          : 0.0;

    double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);

    // The class is coded in the lesion's edge sharpness (lower classes have a
    // crisp rim, higher classes a diffuse one); size, position, and interior
    // texture amplitude are per-video nuisances.
    struct Lesion {
        double rx, ry, cx, cy, vx, vy;
    };
    std::vector<Lesion> lesions(1);
    double ang = rng.uniform(0.0, 6.283185307179586);
    for (auto& l : lesions) {
        l.rx = rng.uniform(0.18, 0.28) * W;
        l.ry = rng.uniform(0.18, 0.28) * H;
        l.cx = rng.uniform(l.rx + 1.0, W - l.rx - 1.0);
        l.cy = rng.uniform(l.ry + 1.0, H - l.ry - 1.0);
        double a = rng.uniform(0.0, 6.283185307179586);
        l.vx = cfg.drift_speed * std::cos(a);
        l.vy = cfg.drift_speed * std::sin(a);
    }
    double interior_amp = rng.uniform(0.10, 0.18);
    double edge_width = 0.05 + 0.28 * cls_frac;

    // Per-video photometric nuisance (gain/offset). It dwarfs the class
    // signal in raw statistics; the training-time jitter augmentation spans
    // the same family, so contrastive features learn to discard it.
    double vid_contrast = rng.uniform(0.55, 1.45);
    double vid_bright = rng.uniform(-0.26, 0.26);

    // Within-video temporal nuisances (lesion size pulsation, interior
    // amplitude flicker): global pooling keeps them and augmentation does not
    // span them, so only cross-frame positives can teach invariance.
    // Frequencies are low on purpose: nearby frames share the nuisance state,
    // so positives must span a wide temporal window to cover its range.
    double pulse_freq = rng.uniform(0.006, 0.016);  // cycles per frame
    double pulse_phase = rng.uniform(0.0, 6.283185307179586);
    double flicker_freq = rng.uniform(0.005, 0.014);
    double flicker_phase = rng.uniform(0.0, 6.283185307179586);


    TorusTexture bg(2 * cfg.height, 2 * cfg.width, rng);
    bg.smooth();
    bg.smooth();
    TorusTexture interior(2 * cfg.height, 2 * cfg.width, rng);
    double bgx = 0.0, bgy = 0.0;
    double bvx = 0.3 * cfg.drift_speed * std::cos(ang + 1.3);
    double bvy = 0.3 * cfg.drift_speed * std::sin(ang + 1.3);

    VideoClip clip;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%05zu", index);
        clip.video_id = std::string("video_") + buf;
    }
    clip.fps = cfg.fps;
    if (junk) {
        clip.tag = "junk";  // no lesion, no label: long idle sweep
    } else {
        clip.latent_class = cls;
        clip.tag = "clean";
    }
    std::size_t n_frames = junk ? cfg.junk_frames : cfg.frames_per_video;
    clip.frames.reserve(n_frames);

    for (std::size_t f = 0; f < n_frames; ++f) {
        double pulse =
            1.0 + 0.35 * std::sin(6.283185307179586 * pulse_freq * static_cast<double>(f) +
                                  pulse_phase);
        double amp_f = interior_amp *
                       (1.0 + 0.4 * std::sin(6.283185307179586 * flicker_freq *
                                                 static_cast<double>(f) +
                                             flicker_phase));
        Image img(cfg.height, cfg.width);
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                double bgv = 0.28 + cfg.speckle * bg.sample(y + bgy, x + bgx);
                double m = 0.0;
                for (const auto& l : lesions) {
                    double dx = (x - l.cx) / (l.rx * pulse), dy = (y - l.cy) / (l.ry * pulse);
                    double d = dx * dx + dy * dy;
                    m += 1.0 / (1.0 + std::exp((d - 1.0) / edge_width));
                }
                m = junk ? 0.0 : std::min(m, 1.0);
                double tex = interior.sample(y - lesions[0].cy + H, x - lesions[0].cx + W);
                double lesion = 0.72 + amp_f * tex;
                double p = bgv + m * (lesion - bgv) + 0.01 * rng.normal();
                p = vid_contrast * (p - 0.5) + 0.5 + vid_bright;
                img.at(y, x) = std::clamp(p, 0.0, 1.0);
            }
        clip.frames.push_back(std::move(img));
        bgx += bvx;
        bgy += bvy;

        for (auto& l : lesions) {
            l.cx += l.vx;
            l.cy += l.vy;
            if (l.cx < l.rx + 1.0 || l.cx > W - l.rx - 1.0) { l.vx = -l.vx; l.cx += 2 * l.vx; }
            if (l.cy < l.ry + 1.0 || l.cy > H - l.ry - 1.0) { l.vy = -l.vy; l.cy += 2 * l.vy; }
        }
    }
    return clip;
}

}  // namespace

std::vector<VideoClip> generate_synthetic_corpus(const SynthConfig& cfg) {
    if (cfg.n_videos == 0 || cfg.frames_per_video == 0 || !(cfg.fps > 0.0))
        throw std::invalid_argument("generate_synthetic_corpus: counts and fps must be positive");
    if (cfg.n_classes < 2)
        throw std::invalid_argument("generate_synthetic_corpus: n_classes must be >= 2");
    if (cfg.height < 12 || cfg.width < 12)
        throw std::invalid_argument("generate_synthetic_corpus: image " +
                                    std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                    " too small to contain the minimum lesion (needs >= 12x12)");
    std::vector<VideoClip> corpus;
    corpus.reserve(cfg.n_videos + cfg.n_junk_videos);
    for (std::size_t i = 0; i < cfg.n_videos; ++i) corpus.push_back(render_clip(cfg, i, false));
    for (std::size_t j = 0; j < cfg.n_junk_videos; ++j)
        corpus.push_back(render_clip(cfg, cfg.n_videos + j, true));
    return corpus;
}

Image load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_pgm: cannot open '" + path + "'");
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("load_pgm: '" + path + "' is not binary P5");
    auto next_token = [&is, &path]() {
        // skip whitespace and '#' comment lines
        for (;;) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v;
        if (!(is >> v)) throw std::runtime_error("load_pgm: malformed header in '" + path + "'");
        return v;
    };
    long w = next_token(), h = next_token(), maxval = next_token();
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("load_pgm: unsupported header in '" + path + "'");
    is.get();  // single whitespace after maxval
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    std::vector<unsigned char> buf(img.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw std::runtime_error("load_pgm: truncated pixel data in '" + path + "'");
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0;
    return img;
}

void save_pgm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_pgm: cannot open '" + path + "'");
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        double v = std::clamp(img.pixels[i], 0.0, 1.0);
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void save_corpus_to_disk(const std::vector<VideoClip>& corpus, const std::string& root_path) {
    fs::create_directories(root_path);
    for (const VideoClip& clip : corpus) {
        fs::path dir = fs::path(root_path) / clip.video_id;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < clip.frames.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05zu.pgm", i);
            save_pgm(clip.frames[i], (dir / name).string());
        }
        std::ofstream meta(dir / "meta");
        meta.precision(17);
        meta << "fps=" << clip.fps << "\n";
        if (clip.latent_class) meta << "class=" << *clip.latent_class << "\n";
        if (!clip.tag.empty()) meta << "tag=" << clip.tag << "\n";
    }
}

std::vector<VideoClip> load_corpus_from_disk(const std::string& root_path) {
    if (!fs::is_directory(root_path))
        throw std::runtime_error("load_corpus_from_disk: '" + root_path + "' is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root_path))
        if (e.is_directory() && e.path().filename().string().rfind("video_", 0) == 0)
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    std::vector<VideoClip> corpus;
    for (const fs::path& dir : dirs) {
        VideoClip clip;
        clip.video_id = dir.filename().string();

        fs::path meta_path = dir / "meta";
        std::ifstream meta(meta_path);
        if (!meta) throw std::runtime_error("load_corpus_from_disk: missing '" + meta_path.string() + "'");
        std::string line;
        bool have_fps = false;
        while (std::getline(meta, line)) {
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "fps") {
                clip.fps = std::stod(val);
                have_fps = true;
            } else if (key == "class") {
                clip.latent_class = std::stoi(val);
            } else if (key == "tag") {
                clip.tag = val;
            }
        }
        if (!have_fps)
            throw std::runtime_error("load_corpus_from_disk: no fps in '" + meta_path.string() + "'");

        std::vector<fs::path> frames;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".pgm") frames.push_back(e.path());
        std::sort(frames.begin(), frames.end());
        for (const fs::path& f : frames) {
            Image img = load_pgm(f.string());
            if (!clip.frames.empty() && (img.height != clip.frames[0].height ||
                                         img.width != clip.frames[0].width))
                throw std::runtime_error("load_corpus_from_disk: inconsistent frame size in '" +
                                         f.string() + "'");
            clip.frames.push_back(std::move(img));
        }
        if (clip.frames.empty())
            throw std::runtime_error("load_corpus_from_disk: no frames in '" + dir.string() + "'");
        corpus.push_back(std::move(clip));
    }
    return corpus;
}

std::vector<VideoClip> splice_corrupt_corpus(const std::vector<VideoClip>& corpus, double fraction,
                                             Rng& rng) {
    std::vector<VideoClip> out = corpus;
    for (auto& c : out)
        if (c.tag.empty()) c.tag = "clean";
    if (fraction <= 0.0) return out;
    std::size_t n_corrupt = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(corpus.size()))));
    auto picks = rng.sample_without_replacement(corpus.size(), n_corrupt);
    for (std::size_t idx : picks) {
        VideoClip& victim = out[idx];
        // donor of a different latent class
        std::vector<std::size_t> donors;
        for (std::size_t j = 0; j < corpus.size(); ++j)
            if (j != idx && corpus[j].latent_class != victim.latent_class &&
                corpus[j].frames[0].height == victim.frames[0].height &&
                corpus[j].frames[0].width == victim.frames[0].width)
                donors.push_back(j);
        if (donors.empty()) continue;
        const VideoClip& donor = corpus[donors[rng.uniform_index(donors.size())]];
        std::size_t half = victim.frames.size() / 2;
        for (std::size_t f = half; f < victim.frames.size(); ++f)
            victim.frames[f] = donor.frames[f % donor.frames.size()];
        victim.tag = "corrupted";
    }
    return out;
}

}  // namespace muscl::synth
