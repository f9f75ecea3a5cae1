#include "muscl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "muscl/csv.hpp"
#include "muscl/loss.hpp"

namespace muscl::harness {

namespace {

// Rng sub-stream tags; fixed so runs are reproducible across builds.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kEpochShuffleStream = 3;
constexpr std::uint64_t kBatchStream = 4;
constexpr std::uint64_t kValidBatchStream = 5;
constexpr std::uint64_t kEpochValidStream = 6;
constexpr std::uint64_t kProbeSplitStream = 7;
constexpr std::uint64_t kExportStream = 8;
constexpr std::uint64_t kCorruptStream = 9;

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (...) {
        throw std::invalid_argument("invalid value '" + v + "' for config key '" + key + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(u);
    } catch (...) {
        throw std::invalid_argument("invalid value '" + v + "' for config key '" + key + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("invalid value '" + v + "' for config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        throw std::invalid_argument("split_ratio must be in (0, 1)");
    if (!(samples_per_second > 0.0))
        throw std::invalid_argument("samples_per_second must be positive");
    if (!(corrupt_fraction >= 0.0 && corrupt_fraction < 1.0))
        throw std::invalid_argument("corrupt_fraction must be in [0, 1)");
    optim.validate();
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "corpus = " << corpus << '\n';
    os << "out_dir = " << out_dir << '\n';
    os << "seed = " << seed << '\n';
    os << "epochs = " << epochs << '\n';
    os << "split_ratio = " << csv::field(split_ratio) << '\n';
    os << "samples_per_second = " << csv::field(samples_per_second) << '\n';
    os << "probe_epochs = " << probe_epochs << '\n';
    os << "probe_train_ratio = " << csv::field(probe_train_ratio) << '\n';
    os << "ablate_seeds = " << ablate_seeds << '\n';
    os << "corrupt_fraction = " << csv::field(corrupt_fraction) << '\n';
    os << "strategy = " << pairs::strategy_name(pairgen.strategy) << '\n';
    os << "beta_alpha = " << csv::field(pairgen.beta_alpha) << '\n';
    os << "beta_beta = " << csv::field(pairgen.beta_beta) << '\n';
    os << "augment.crop_min_ratio = " << csv::field(pairgen.augment.crop_min_ratio) << '\n';
    os << "augment.flip_prob = " << csv::field(pairgen.augment.flip_prob) << '\n';
    os << "augment.jitter_strength = " << csv::field(pairgen.augment.jitter_strength) << '\n';
    os << "augment.blur = " << (pairgen.augment.blur_enabled ? "true" : "false") << '\n';
    os << "mode = " << (optim.mode == meta::OptimConfig::Mode::Meta ? "meta" : "plain") << '\n';
    os << "alpha1 = " << csv::field(optim.alpha1) << '\n';
    os << "plain_lr = " << csv::field(optim.plain_lr) << '\n';
    os << "alpha2 = " << csv::field(optim.alpha2) << '\n';
    os << "weight_decay = " << csv::field(optim.weight_decay) << '\n';
    os << "tau = " << csv::field(optim.tau) << '\n';
    os << "batch_size = " << optim.batch_size << '\n';
    os << "arch = " << arch.serialize() << '\n';
    os << "synth.n_videos = " << synth.n_videos << '\n';
    os << "synth.frames_per_video = " << synth.frames_per_video << '\n';
    os << "synth.fps = " << csv::field(synth.fps) << '\n';
    os << "synth.height = " << synth.height << '\n';
    os << "synth.width = " << synth.width << '\n';
    os << "synth.n_classes = " << synth.n_classes << '\n';
    os << "synth.speckle = " << csv::field(synth.speckle) << '\n';
    os << "synth.drift_speed = " << csv::field(synth.drift_speed) << '\n';
    os << "synth.n_junk_videos = " << synth.n_junk_videos << '\n';
    os << "synth.junk_frames = " << synth.junk_frames << '\n';
    os << "synth.seed = " << synth.seed << '\n';
    return os.str();
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config file '" + path + "' line " +
                                        std::to_string(lineno) + ": expected key = value, got '" +
                                        line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "corpus") c.corpus = v;
        else if (k == "out_dir") c.out_dir = v;
        else if (k == "seed") c.seed = parse_u64(k, v);
        else if (k == "epochs") c.epochs = parse_size(k, v);
        else if (k == "split_ratio") c.split_ratio = parse_f64(k, v);
        else if (k == "samples_per_second") c.samples_per_second = parse_f64(k, v);
        else if (k == "probe_epochs") c.probe_epochs = parse_size(k, v);
        else if (k == "probe_train_ratio") c.probe_train_ratio = parse_f64(k, v);
        else if (k == "corrupt_fraction") c.corrupt_fraction = parse_f64(k, v);
        else if (k == "ablate_seeds") c.ablate_seeds = parse_size(k, v);
        else if (k == "strategy") c.pairgen.strategy = pairs::strategy_from_name(v);
        else if (k == "beta_alpha") c.pairgen.beta_alpha = parse_f64(k, v);
        else if (k == "beta_beta") c.pairgen.beta_beta = parse_f64(k, v);
        else if (k == "augment.crop_min_ratio") c.pairgen.augment.crop_min_ratio = parse_f64(k, v);
        else if (k == "augment.flip_prob") c.pairgen.augment.flip_prob = parse_f64(k, v);
        else if (k == "augment.jitter_strength") c.pairgen.augment.jitter_strength = parse_f64(k, v);
        else if (k == "augment.blur") c.pairgen.augment.blur_enabled = parse_bool(k, v);
        else if (k == "mode") {
            if (v == "meta") c.optim.mode = meta::OptimConfig::Mode::Meta;
            else if (v == "plain") c.optim.mode = meta::OptimConfig::Mode::Plain;
            else throw std::invalid_argument("invalid value '" + v + "' for config key 'mode'");
        }
        else if (k == "alpha1") c.optim.alpha1 = parse_f64(k, v);
        else if (k == "plain_lr") c.optim.plain_lr = parse_f64(k, v);
        else if (k == "alpha2") c.optim.alpha2 = parse_f64(k, v);
        else if (k == "weight_decay") c.optim.weight_decay = parse_f64(k, v);
        else if (k == "tau") c.optim.tau = parse_f64(k, v);
        else if (k == "batch_size") c.optim.batch_size = parse_size(k, v);
        else if (k == "arch") c.arch = nets::ArchConfig::deserialize(v);
        else if (k == "synth.n_videos") c.synth.n_videos = parse_size(k, v);
        else if (k == "synth.frames_per_video") c.synth.frames_per_video = parse_size(k, v);
        else if (k == "synth.fps") c.synth.fps = parse_f64(k, v);
        else if (k == "synth.height") c.synth.height = parse_size(k, v);
        else if (k == "synth.width") c.synth.width = parse_size(k, v);
        else if (k == "synth.n_classes") c.synth.n_classes = parse_size(k, v);
        else if (k == "synth.speckle") c.synth.speckle = parse_f64(k, v);
        else if (k == "synth.drift_speed") c.synth.drift_speed = parse_f64(k, v);
        else if (k == "synth.n_junk_videos") c.synth.n_junk_videos = parse_size(k, v);
        else if (k == "synth.junk_frames") c.synth.junk_frames = parse_size(k, v);
        else if (k == "synth.seed") c.synth.seed = parse_u64(k, v);
        else throw std::invalid_argument("unknown config key '" + k + "'");
    }
    return c;
}

std::vector<synth::VideoClip> load_or_generate_corpus(const RunConfig& cfg) {
    std::vector<synth::VideoClip> corpus =
        (cfg.corpus.empty() || cfg.corpus == "synthetic")
            ? synth::generate_synthetic_corpus(cfg.synth)
            : synth::load_corpus_from_disk(cfg.corpus);
    if (cfg.corrupt_fraction > 0.0) {
        Rng rng = Rng::substream(cfg.synth.seed, {kCorruptStream});
        corpus = synth::splice_corrupt_corpus(corpus, cfg.corrupt_fraction, rng);
    }
    return corpus;
}

Split split_videos(std::size_t n_videos, double ratio, std::uint64_t seed) {
    if (n_videos < 2)
        throw std::invalid_argument("split_videos: need at least 2 videos, have " +
                                    std::to_string(n_videos));
    std::vector<std::size_t> order(n_videos);
    for (std::size_t i = 0; i < n_videos; ++i) order[i] = i;
    Rng rng = Rng::substream(seed, {kSplitStream});
    rng.shuffle(order);
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_videos)));
    n_train = std::min(std::max<std::size_t>(n_train, 1), n_videos - 1);
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return s;
}

namespace {

double unweighted_loss_value(const nets::ModelParams& m, const pairs::PairBatch& batch,
                             double tau) {
    Tape tape;
    auto mp = nets::attach_const(tape, m.params);
    Var H = nets::encode_batch(tape, m.arch, mp, meta::batch_images(batch));
    Var Z = nets::project(tape, m.arch, mp, H);
    return loss::validation_loss(Z, tau).value().item();
}

}  // namespace

PretrainResult pretrain(const RunConfig& cfg) {
    return pretrain(cfg, load_or_generate_corpus(cfg), true);
}

PretrainResult pretrain(const RunConfig& cfg, const std::vector<synth::VideoClip>& corpus,
                        bool write_outputs) {
    cfg.validate();
    const bool meta_mode = cfg.optim.mode == meta::OptimConfig::Mode::Meta;
    const bool pooled = cfg.pairgen.strategy == pairs::Strategy::SimCLRStyle;
    const std::size_t N = cfg.optim.batch_size;

    std::vector<synth::FrameSet> sets;
    sets.reserve(corpus.size());
    for (const auto& clip : corpus)
        sets.push_back(synth::extract_frame_set(clip, cfg.samples_per_second));

    Split split = split_videos(sets.size(), cfg.split_ratio, cfg.seed);
    std::vector<synth::FrameSet> train_sets, valid_sets;
    for (std::size_t i : split.train) train_sets.push_back(sets[i]);
    for (std::size_t i : split.valid) valid_sets.push_back(sets[i]);

    if (!pooled && train_sets.size() < N)
        throw std::runtime_error("pretrain: " + std::to_string(train_sets.size()) +
                                 " training videos but batch size " + std::to_string(N) +
                                 " distinct videos are required per batch");
    if (valid_sets.empty()) throw std::runtime_error("pretrain: no validation videos after split");
    const std::size_t nv = std::min(N, valid_sets.size());
    const std::size_t n_batches = pooled ? std::max<std::size_t>(1, train_sets.size() / N)
                                         : train_sets.size() / N;

    Rng init_rng = Rng::substream(cfg.seed, {kInitStream});
    auto [model, wnet] = nets::init_params(cfg.arch, init_rng);
    meta::TrainState state;
    state.theta_m = std::move(model);
    state.theta_c = std::move(wnet);

    PretrainResult result;
    std::unique_ptr<csv::Writer> log;
    if (write_outputs) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out_dir, ec);
        if (ec)
            throw std::runtime_error("pretrain: cannot create output directory '" + cfg.out_dir +
                                     "': " + ec.message());
        result.log_path = cfg.out_dir + "/train_log.csv";
        log = std::make_unique<csv::Writer>(result.log_path);
        log->write_row({"epoch", "train_loss", "valid_loss", "weight_mean", "weight_std",
                        "fallback_pairs"});
    }

    std::vector<std::size_t> order(train_sets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::substream(cfg.seed, {kEpochShuffleStream, epoch});
        shuffle_rng.shuffle(order);

        double train_loss_sum = 0.0, valid_loss_sum = 0.0;
        std::vector<double> epoch_weights;
        std::size_t fallback = 0;

        for (std::size_t b = 0; b < n_batches; ++b) {
            Rng batch_rng = Rng::substream(cfg.seed, {kBatchStream, epoch, b});
            pairs::PairBatch batch;
            if (pooled) {
                batch = pairs::make_batch(train_sets, N, cfg.pairgen, batch_rng,
                                          pairs::FallbackPolicy::Degrade);
            } else {
                std::vector<synth::FrameSet> slice;
                slice.reserve(N);
                for (std::size_t j = 0; j < N; ++j) slice.push_back(train_sets[order[b * N + j]]);
                batch = pairs::make_batch(slice, N, cfg.pairgen, batch_rng,
                                          pairs::FallbackPolicy::Degrade);
            }
            if (!pooled)
                for (const auto& p : batch.pairs)
                    if (p.strategy_used != cfg.pairgen.strategy) ++fallback;

            meta::StepInfo info;
            if (meta_mode) {
                Rng valid_rng = Rng::substream(cfg.seed, {kValidBatchStream, epoch, b});
                pairs::PairBatch vbatch = pairs::make_batch(valid_sets, nv, cfg.pairgen, valid_rng,
                                                            pairs::FallbackPolicy::Degrade);
                info = meta::meta_train_step(state, batch, vbatch, cfg.optim);
                valid_loss_sum += info.valid_loss;
                epoch_weights.insert(epoch_weights.end(), info.weights.begin(),
                                     info.weights.end());
            } else {
                info = meta::plain_train_step(state, batch, cfg.optim);
            }
            train_loss_sum += info.train_loss;
        }

        double train_loss = train_loss_sum / static_cast<double>(n_batches);
        double valid_loss;
        if (meta_mode) {
            valid_loss = valid_loss_sum / static_cast<double>(n_batches);
        } else {
            Rng valid_rng = Rng::substream(cfg.seed, {kEpochValidStream, epoch});
            pairs::PairBatch vbatch = pairs::make_batch(valid_sets, nv, cfg.pairgen, valid_rng,
                                                        pairs::FallbackPolicy::Degrade);
            valid_loss = unweighted_loss_value(state.theta_m, vbatch, cfg.optim.tau);
        }

        if (log) {
            std::string wmean, wstd;
            if (meta_mode && !epoch_weights.empty()) {
                double mu = 0.0;
                for (double w : epoch_weights) mu += w;
                mu /= static_cast<double>(epoch_weights.size());
                double var = 0.0;
                for (double w : epoch_weights) var += (w - mu) * (w - mu);
                var /= static_cast<double>(epoch_weights.size());
                wmean = csv::field(mu);
                wstd = csv::field(std::sqrt(var));
            }
            log->write_row({csv::field(epoch), csv::field(train_loss), csv::field(valid_loss),
                            wmean, wstd, csv::field(fallback)});
        }
    }

    result.ckpt.version = 1;
    result.ckpt.step = state.step;
    result.ckpt.config_text = cfg.to_text();
    result.ckpt.model = std::move(state.theta_m);
    if (meta_mode) result.ckpt.weight_net = std::move(state.theta_c);

    if (write_outputs) {
        result.checkpoint_path = cfg.out_dir + "/checkpoint.bin";
        save_checkpoint(result.ckpt, result.checkpoint_path);
    }
    return result;
}

namespace {

// Per-frame encoder features of every sampled frame, with labels and the
// owning video of each row.
struct ProbeData {
    std::vector<std::vector<double>> x;  // feature rows
    std::vector<int> label;
    std::vector<std::size_t> video;
    std::vector<int> video_class;  // per video
    int n_classes = 0;
};

ProbeData collect_features(const std::vector<synth::VideoClip>& corpus, double sps,
                           const std::function<Tensor(const std::vector<Tensor>&)>& featurize) {
    ProbeData d;
    for (std::size_t v = 0; v < corpus.size(); ++v) {
        const auto& clip = corpus[v];
        if (!clip.latent_class) continue;  // unlabeled clips pre-train only
        int cls = *clip.latent_class;
        if (cls < 0) throw std::runtime_error("probe: negative class label");
        d.n_classes = std::max(d.n_classes, cls + 1);
        d.video_class.push_back(cls);

        synth::FrameSet fs = synth::extract_frame_set(clip, sps);
        std::vector<Tensor> imgs;
        imgs.reserve(fs.K());
        for (const auto& f : fs.frames) imgs.push_back(nets::image_to_tensor(f));
        Tensor feats = featurize(imgs);
        std::size_t dim = feats.shape()[1];
        for (std::size_t r = 0; r < feats.shape()[0]; ++r) {
            std::vector<double> row(dim);
            for (std::size_t c = 0; c < dim; ++c) row[c] = feats.at(r, c);
            d.x.push_back(std::move(row));
            d.label.push_back(cls);
            d.video.push_back(v);
        }
    }
    if (d.n_classes < 2) throw std::runtime_error("probe: need at least 2 classes");
    if (d.x.empty()) throw std::runtime_error("probe: corpus has no labeled videos");
    return d;
}

// Class-stratified video-level split; returns a per-video train flag.
std::vector<char> stratified_split(const std::vector<int>& video_class, int n_classes,
                                   double ratio, std::uint64_t seed) {
    std::vector<char> train(video_class.size(), 0);
    for (int c = 0; c < n_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t v = 0; v < video_class.size(); ++v)
            if (video_class[v] == c) members.push_back(v);
        if (members.empty()) continue;
        Rng rng = Rng::substream(seed, {kProbeSplitStream, static_cast<std::uint64_t>(c)});
        rng.shuffle(members);
        std::size_t n_tr = static_cast<std::size_t>(
            std::floor(ratio * static_cast<double>(members.size())));
        n_tr = std::max<std::size_t>(n_tr, 1);
        if (n_tr == members.size() && members.size() > 1) n_tr = members.size() - 1;
        for (std::size_t i = 0; i < n_tr; ++i) train[members[i]] = 1;
    }
    return train;
}

// Standardize feature columns in place with train-row statistics; the
// classifier stays linear in the original features, this only conditions the
// optimization.
void standardize_features(ProbeData& d, const std::vector<std::size_t>& tr_rows) {
    std::size_t dim = d.x.front().size();
    std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
    for (std::size_t r : tr_rows)
        for (std::size_t j = 0; j < dim; ++j) mu[j] += d.x[r][j];
    for (double& m : mu) m /= static_cast<double>(tr_rows.size());
    for (std::size_t r : tr_rows)
        for (std::size_t j = 0; j < dim; ++j) {
            double c = d.x[r][j] - mu[j];
            sd[j] += c * c;
        }
    for (double& s : sd) {
        s = std::sqrt(s / static_cast<double>(tr_rows.size()));
        if (s < 1e-6) s = 1.0;  // near-constant column: center only, never amplify
    }
    for (auto& row : d.x)
        for (std::size_t j = 0; j < dim; ++j) row[j] = (row[j] - mu[j]) / sd[j];
}

// Full-batch Adam on flat parameter vectors.
struct FlatAdam {
    std::vector<double> m, v;
    std::size_t t = 0;
    void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        ++t;
        double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

// Stable softmax probabilities of one logit row.
void softmax_row(const std::vector<double>& logits, std::vector<double>& probs) {
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double s = 0.0;
    probs.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        probs[k] = std::exp(logits[k] - mx);
        s += probs[k];
    }
    for (double& p : probs) p /= s;
}

metrics::ProbeReport probe_on_features(ProbeData& d, std::size_t epochs,
                                       std::uint64_t seed, double train_ratio) {
    std::size_t dim = d.x.front().size();
    int K = d.n_classes;
    std::vector<char> train = stratified_split(d.video_class, K, train_ratio, seed);

    std::vector<std::size_t> tr_rows, te_rows;
    for (std::size_t r = 0; r < d.x.size(); ++r)
        (train[d.video[r]] ? tr_rows : te_rows).push_back(r);
    if (tr_rows.empty() || te_rows.empty())
        throw std::runtime_error("probe: degenerate train/test split");
    standardize_features(d, tr_rows);

    // W row-major [K, dim] then b [K], all zero at start.
    std::vector<double> p(static_cast<std::size_t>(K) * dim + static_cast<std::size_t>(K), 0.0);
    std::vector<double> g(p.size());
    std::vector<double> logits(K), probs;
    FlatAdam adam;

    auto forward = [&](const std::vector<double>& x) {
        for (int k = 0; k < K; ++k) {
            double z = p[static_cast<std::size_t>(K) * dim + static_cast<std::size_t>(k)];
            const double* w = &p[static_cast<std::size_t>(k) * dim];
            for (std::size_t j = 0; j < dim; ++j) z += w[j] * x[j];
            logits[static_cast<std::size_t>(k)] = z;
        }
    };

    double inv_n = 1.0 / static_cast<double>(tr_rows.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t r : tr_rows) {
            forward(d.x[r]);
            softmax_row(logits, probs);
            probs[static_cast<std::size_t>(d.label[r])] -= 1.0;
            for (int k = 0; k < K; ++k) {
                double gk = probs[static_cast<std::size_t>(k)] * inv_n;
                double* gw = &g[static_cast<std::size_t>(k) * dim];
                for (std::size_t j = 0; j < dim; ++j) gw[j] += gk * d.x[r][j];
                g[static_cast<std::size_t>(K) * dim + static_cast<std::size_t>(k)] += gk;
            }
        }
        adam.step(p, g, 0.01);
    }

    std::vector<int> truth, pred;
    for (std::size_t r : te_rows) {
        forward(d.x[r]);
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (logits[static_cast<std::size_t>(k)] > logits[static_cast<std::size_t>(best)])
                best = k;
        truth.push_back(d.label[r]);
        pred.push_back(best);
    }
    return metrics::compute_report(truth, pred, K);
}

}  // namespace

metrics::ProbeReport linear_probe(const Checkpoint& ckpt,
                                  const std::vector<synth::VideoClip>& corpus,
                                  std::size_t probe_epochs, std::uint64_t seed,
                                  double samples_per_second, double train_ratio) {
    ProbeData d = collect_features(corpus, samples_per_second,
                                   [&](const std::vector<Tensor>& imgs) {
                                       return nets::encode_images_value(ckpt.model, imgs);
                                   });
    return probe_on_features(d, probe_epochs, seed, train_ratio);
}

metrics::ProbeReport finetune_head(const Checkpoint& ckpt,
                                   const std::vector<synth::VideoClip>& corpus,
                                   std::size_t epochs, std::uint64_t seed,
                                   double samples_per_second, double train_ratio) {
    // Conv stack frozen: its pooled output per frame is a fixed feature, and
    // the encoder's final linear layer trains jointly with the classifier.
    ProbeData d = collect_features(corpus, samples_per_second,
                                   [&](const std::vector<Tensor>& imgs) {
                                       return nets::pooled_features_value(ckpt.model, imgs);
                                   });
    std::size_t C = d.x.front().size();
    std::size_t D = ckpt.model.arch.repr_dim;
    int K = d.n_classes;
    std::vector<char> train = stratified_split(d.video_class, K, train_ratio, seed);
    std::vector<std::size_t> tr_rows, te_rows;
    for (std::size_t r = 0; r < d.x.size(); ++r)
        (train[d.video[r]] ? tr_rows : te_rows).push_back(r);
    if (tr_rows.empty() || te_rows.empty())
        throw std::runtime_error("probe: degenerate train/test split");
    standardize_features(d, tr_rows);

    // Flat layout: head.w [D,C], head.b [D], clf.w [K,D], clf.b [K].
    std::size_t off_hb = D * C, off_cw = off_hb + D, off_cb = off_cw + static_cast<std::size_t>(K) * D;
    std::vector<double> p(off_cb + static_cast<std::size_t>(K), 0.0);
    {
        const Tensor& hw = ckpt.model.params.get("head.w");
        const Tensor& hb = ckpt.model.params.get("head.b");
        for (std::size_t i = 0; i < D * C; ++i) p[i] = hw[i];
        for (std::size_t i = 0; i < D; ++i) p[off_hb + i] = hb[i];
    }
    std::vector<double> g(p.size());
    std::vector<double> h(D), gh(D), logits(K), probs;
    FlatAdam adam;

    auto forward_h = [&](const std::vector<double>& x) {
        for (std::size_t i = 0; i < D; ++i) {
            double z = p[off_hb + i];
            const double* w = &p[i * C];
            for (std::size_t j = 0; j < C; ++j) z += w[j] * x[j];
            h[i] = z;
        }
    };
    auto forward_logits = [&]() {
        for (int k = 0; k < K; ++k) {
            double z = p[off_cb + static_cast<std::size_t>(k)];
            const double* w = &p[off_cw + static_cast<std::size_t>(k) * D];
            for (std::size_t i = 0; i < D; ++i) z += w[i] * h[i];
            logits[static_cast<std::size_t>(k)] = z;
        }
    };

    double inv_n = 1.0 / static_cast<double>(tr_rows.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t r : tr_rows) {
            forward_h(d.x[r]);
            forward_logits();
            softmax_row(logits, probs);
            probs[static_cast<std::size_t>(d.label[r])] -= 1.0;
            std::fill(gh.begin(), gh.end(), 0.0);
            for (int k = 0; k < K; ++k) {
                double gk = probs[static_cast<std::size_t>(k)] * inv_n;
                double* gw = &g[off_cw + static_cast<std::size_t>(k) * D];
                const double* cw = &p[off_cw + static_cast<std::size_t>(k) * D];
                for (std::size_t i = 0; i < D; ++i) {
                    gw[i] += gk * h[i];
                    gh[i] += gk * cw[i];
                }
                g[off_cb + static_cast<std::size_t>(k)] += gk;
            }
            for (std::size_t i = 0; i < D; ++i) {
                double* hw = &g[i * C];
                for (std::size_t j = 0; j < C; ++j) hw[j] += gh[i] * d.x[r][j];
                g[off_hb + i] += gh[i];
            }
        }
        adam.step(p, g, 0.01);
    }

    std::vector<int> truth, pred;
    for (std::size_t r : te_rows) {
        forward_h(d.x[r]);
        forward_logits();
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (logits[static_cast<std::size_t>(k)] > logits[static_cast<std::size_t>(best)])
                best = k;
        truth.push_back(d.label[r]);
        pred.push_back(best);
    }
    return metrics::compute_report(truth, pred, K);
}

void export_weights(const Checkpoint& ckpt, const std::vector<synth::VideoClip>& corpus,
                    const std::string& csv_path, double samples_per_second,
                    std::size_t pairs_per_video) {
    if (!ckpt.weight_net)
        throw std::runtime_error(
            "export_weights: checkpoint was trained in plain mode and has no pair-weighting "
            "network");
    pairs::PairGenConfig pg;
    pg.augment = pairs::AugmentConfig::disabled();

    csv::Writer out(csv_path);
    out.write_row({"video_id", "tag", "frame_indices", "xi1", "xi2", "weight"});
    for (std::size_t v = 0; v < corpus.size(); ++v) {
        synth::FrameSet fs = synth::extract_frame_set(corpus[v], samples_per_second);
        Rng rng = Rng::substream(kExportStream, {v});
        for (std::size_t i = 0; i < pairs_per_video; ++i) {
            pairs::PositivePair pp = fs.K() >= 3 ? pairs::ppi_generate(fs, pg, rng)
                                   : fs.K() == 2 ? pairs::s2_generate(fs, pg, rng)
                                                 : pairs::s1_generate(fs, pg, rng);
            Tensor H = nets::encode_images_value(
                ckpt.model, {nets::image_to_tensor(pp.x1), nets::image_to_tensor(pp.x2)});
            Tensor h1({H.shape()[1]}), h2({H.shape()[1]});
            for (std::size_t c = 0; c < H.shape()[1]; ++c) {
                h1[c] = H.at(0, c);
                h2[c] = H.at(1, c);
            }
            double w = nets::weigh_value(*ckpt.weight_net, h1, h2);
            std::string idx;
            for (std::size_t j = 0; j < pp.frame_indices.size(); ++j)
                idx += (j ? " " : "") + std::to_string(pp.frame_indices[j]);
            out.write_row({pp.video_id, corpus[v].tag, idx, csv::field(pp.xi1),
                           csv::field(pp.xi2), csv::field(w)});
        }
    }
}

void export_embeddings(const Checkpoint& ckpt, const std::vector<synth::VideoClip>& corpus,
                       const std::string& csv_path, double samples_per_second) {
    csv::Writer out(csv_path);
    std::vector<std::string> header{"video_id", "frame_index"};
    for (std::size_t c = 0; c < ckpt.model.arch.repr_dim; ++c)
        header.push_back("h" + std::to_string(c + 1));
    out.write_row(header);
    for (const auto& clip : corpus) {
        synth::FrameSet fs = synth::extract_frame_set(clip, samples_per_second);
        std::vector<Tensor> imgs;
        imgs.reserve(fs.K());
        for (const auto& f : fs.frames) imgs.push_back(nets::image_to_tensor(f));
        Tensor H = nets::encode_images_value(ckpt.model, imgs);
        for (std::size_t r = 0; r < H.shape()[0]; ++r) {
            std::vector<std::string> row{fs.video_id, csv::field(fs.source_indices[r])};
            for (std::size_t c = 0; c < H.shape()[1]; ++c) row.push_back(csv::field(H.at(r, c)));
            out.write_row(row);
        }
    }
}

namespace {

void print_report(const metrics::ProbeReport& r) {
    std::cout << "accuracy = " << r.accuracy << '\n';
    std::cout << "macro_f1 = " << r.macro_f1 << '\n';
    for (int c = 0; c < r.n_classes; ++c)
        std::cout << "class " << c << ": sensitivity=" << r.sensitivity[static_cast<std::size_t>(c)]
                  << " specificity=" << r.specificity[static_cast<std::size_t>(c)]
                  << " f1=" << r.f1[static_cast<std::size_t>(c)] << '\n';
}

void usage(std::ostream& os) {
    os << "usage: muscl <command> [--config FILE] [--key value ...]\n"
          "commands:\n"
          "  gen-data           write a synthetic corpus to out_dir\n"
          "  pretrain           contrastive pre-training (requires --seed)\n"
          "  probe              linear probe (requires --checkpoint, --seed)\n"
          "  finetune           head fine-tuning (requires --checkpoint, --seed)\n"
          "  export-weights     pair-weight CSV (requires --checkpoint)\n"
          "  export-embeddings  frame-embedding CSV (requires --checkpoint)\n"
          "  ablate             strategy ladder over seeds (requires --seed)\n";
}

std::string take(std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    std::string v = it->second;
    kv.erase(it);
    return v;
}

void require_seed(const std::map<std::string, std::string>& kv) {
    if (!kv.count("seed")) throw std::invalid_argument("missing required option '--seed'");
}

void run_ablate(const RunConfig& base) {
    std::vector<synth::VideoClip> corpus = load_or_generate_corpus(base);
    struct Cell {
        pairs::Strategy strategy;
        meta::OptimConfig::Mode mode;
    };
    const std::vector<Cell> ladder = {
        {pairs::Strategy::SimCLRStyle, meta::OptimConfig::Mode::Plain},
        {pairs::Strategy::S1, meta::OptimConfig::Mode::Plain},
        {pairs::Strategy::S2, meta::OptimConfig::Mode::Plain},
        {pairs::Strategy::S3, meta::OptimConfig::Mode::Plain},
        {pairs::Strategy::S3, meta::OptimConfig::Mode::Meta},
    };
    std::error_code ec;
    std::filesystem::create_directories(base.out_dir, ec);
    if (ec)
        throw std::runtime_error("ablate: cannot create output directory '" + base.out_dir +
                                 "': " + ec.message());
    csv::Writer out(base.out_dir + "/ablate.csv");
    out.write_row({"strategy", "mode", "seed", "accuracy", "macro_f1"});
    for (const Cell& cell : ladder) {
        for (std::size_t s = 0; s < base.ablate_seeds; ++s) {
            RunConfig rc = base;
            rc.pairgen.strategy = cell.strategy;
            rc.optim.mode = cell.mode;
            rc.seed = base.seed + s;
            PretrainResult res = pretrain(rc, corpus, false);
            metrics::ProbeReport rep =
                linear_probe(res.ckpt, corpus, rc.probe_epochs, rc.seed, rc.samples_per_second,
                             rc.probe_train_ratio);
            std::string mode = cell.mode == meta::OptimConfig::Mode::Meta ? "meta" : "plain";
            out.write_row({pairs::strategy_name(cell.strategy), mode, csv::field(rc.seed),
                           csv::field(rep.accuracy), csv::field(rep.macro_f1)});
            std::cout << pairs::strategy_name(cell.strategy) << "/" << mode << " seed "
                      << rc.seed << ": accuracy " << rep.accuracy << '\n';
        }
    }
    std::cout << "wrote " << base.out_dir << "/ablate.csv\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        if (args.empty()) {
            usage(std::cerr);
            return 1;
        }
        const std::string cmd = args[0];
        if (cmd == "help" || cmd == "--help" || cmd == "-h") {
            usage(std::cout);
            return 0;
        }
        const bool known =
            cmd == "gen-data" || cmd == "pretrain" || cmd == "probe" || cmd == "finetune" ||
            cmd == "export-weights" || cmd == "export-embeddings" || cmd == "ablate";
        if (!known) throw std::invalid_argument("unknown command '" + cmd + "'");

        std::map<std::string, std::string> kv;
        for (std::size_t i = 1; i < args.size(); ++i) {
            const std::string& tok = args[i];
            if (tok.rfind("--", 0) != 0)
                throw std::invalid_argument("unexpected argument '" + tok + "'");
            std::string key = tok.substr(2);
            if (i + 1 >= args.size())
                throw std::invalid_argument("missing value for option '--" + key + "'");
            std::string val = args[++i];
            if (key == "config") {
                for (auto& [k, v] : read_config_file(val)) kv[k] = v;
            } else {
                kv[key] = val;
            }
        }
        if (const char* env = std::getenv("MUSCL_OUT_DIR")) kv["out_dir"] = env;

        std::string checkpoint = take(kv, "checkpoint");
        std::string out_csv = take(kv, "out_csv");

        if (cmd == "gen-data") {
            RunConfig cfg = parse_run_config(kv);
            std::vector<synth::VideoClip> corpus = synth::generate_synthetic_corpus(cfg.synth);
            synth::save_corpus_to_disk(corpus, cfg.out_dir);
            std::cout << "wrote " << corpus.size() << " videos to " << cfg.out_dir << '\n';
            return 0;
        }
        if (cmd == "pretrain") {
            require_seed(kv);
            RunConfig cfg = parse_run_config(kv);
            PretrainResult res = pretrain(cfg);
            std::cout << "wrote " << res.checkpoint_path << " (" << res.ckpt.step << " steps)\n"
                      << "wrote " << res.log_path << '\n';
            return 0;
        }
        if (cmd == "probe" || cmd == "finetune") {
            require_seed(kv);
            if (checkpoint.empty())
                throw std::invalid_argument("missing required option '--checkpoint'");
            RunConfig cfg = parse_run_config(kv);
            Checkpoint ckpt = load_checkpoint(checkpoint);
            std::vector<synth::VideoClip> corpus = load_or_generate_corpus(cfg);
            metrics::ProbeReport rep =
                cmd == "probe"
                    ? linear_probe(ckpt, corpus, cfg.probe_epochs, cfg.seed,
                                   cfg.samples_per_second, cfg.probe_train_ratio)
                    : finetune_head(ckpt, corpus, cfg.probe_epochs, cfg.seed,
                                    cfg.samples_per_second, cfg.probe_train_ratio);
            print_report(rep);
            return 0;
        }
        if (cmd == "export-weights" || cmd == "export-embeddings") {
            if (checkpoint.empty())
                throw std::invalid_argument("missing required option '--checkpoint'");
            RunConfig cfg = parse_run_config(kv);
            Checkpoint ckpt = load_checkpoint(checkpoint);
            std::vector<synth::VideoClip> corpus = load_or_generate_corpus(cfg);
            std::error_code ec;
            std::filesystem::create_directories(cfg.out_dir, ec);
            if (out_csv.empty())
                out_csv = cfg.out_dir + (cmd == "export-weights" ? "/weights.csv"
                                                                 : "/embeddings.csv");
            if (cmd == "export-weights")
                export_weights(ckpt, corpus, out_csv, cfg.samples_per_second);
            else
                export_embeddings(ckpt, corpus, out_csv, cfg.samples_per_second);
            std::cout << "wrote " << out_csv << '\n';
            return 0;
        }
        // ablate
        require_seed(kv);
        RunConfig cfg = parse_run_config(kv);
        run_ablate(cfg);
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace muscl::harness
