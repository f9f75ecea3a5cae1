#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "muscl/checkpoint.hpp"
#include "muscl/meta_opt.hpp"
#include "muscl/metrics.hpp"
#include "muscl/pairgen.hpp"
#include "muscl/synth.hpp"

namespace muscl::harness {

/// Everything a run needs. Parsed from `key = value` text (see
/// parse_run_config for the key list); to_text() echoes the full
/// configuration and is embedded in checkpoints.
struct RunConfig {
    std::string corpus = "synthetic";  // "synthetic" or a corpus directory
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t epochs = 10;
    double split_ratio = 0.8;  // train fraction of videos
    double samples_per_second = 3.0;
    std::size_t probe_epochs = 200;
    double probe_train_ratio = 0.5;  // labeled-video fraction the probe trains on
    std::size_t ablate_seeds = 5;
    double corrupt_fraction = 0.0;  // videos spliced across classes after loading
    synth::SynthConfig synth;  // synth.seed is independent of `seed` so the
                               // corpus can stay fixed across training seeds
    pairs::PairGenConfig pairgen;
    meta::OptimConfig optim;
    nets::ArchConfig arch;

    void validate() const;
    std::string to_text() const;
};

/// `key = value` lines, `#` comments, blank lines ignored. Missing file or a
/// malformed line throws std::invalid_argument (a usage error at the CLI).
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Unknown keys and unparsable values throw std::invalid_argument naming the
/// offending key.
RunConfig parse_run_config(const std::map<std::string, std::string>& kv);

std::vector<synth::VideoClip> load_or_generate_corpus(const RunConfig& cfg);

/// Video-level split: a video's frames are never on both sides.
struct Split {
    std::vector<std::size_t> train, valid;
};
Split split_videos(std::size_t n_videos, double ratio, std::uint64_t seed);

struct PretrainResult {
    Checkpoint ckpt;
    std::string checkpoint_path;  // empty when nothing was written
    std::string log_path;
};

/// Full pre-training run: split, per-epoch shuffled batches through
/// meta_train_step or plain_train_step, train_log.csv (header: epoch,
/// train_loss,valid_loss,weight_mean,weight_std,fallback_pairs; the weight
/// columns are empty in plain mode) and checkpoint.bin in out_dir.
/// Deterministic: identical configs give byte-identical outputs.
PretrainResult pretrain(const RunConfig& cfg);
PretrainResult pretrain(const RunConfig& cfg, const std::vector<synth::VideoClip>& corpus,
                        bool write_outputs);

/// Frozen encoder; linear softmax classifier on h trained with full-batch
/// Adam (lr 0.01), class-stratified video-level 80/20 split; report on the
/// held-out videos' frames. Requires labels on every video.
metrics::ProbeReport linear_probe(const Checkpoint& ckpt,
                                  const std::vector<synth::VideoClip>& corpus,
                                  std::size_t probe_epochs, std::uint64_t seed,
                                  double samples_per_second = 3.0, double train_ratio = 0.5);

/// As linear_probe, but the encoder's final linear layer is trained jointly
/// with the classifier; the conv stack stays frozen.
metrics::ProbeReport finetune_head(const Checkpoint& ckpt,
                                   const std::vector<synth::VideoClip>& corpus,
                                   std::size_t epochs, std::uint64_t seed,
                                   double samples_per_second = 3.0, double train_ratio = 0.5);

/// Deterministic sweep of interpolated pairs (augmentation disabled) with the
/// checkpoint's pair-weighting network evaluated on each. CSV columns:
/// video_id,tag,frame_indices,xi1,xi2,weight. Requires a meta-mode checkpoint.
void export_weights(const Checkpoint& ckpt, const std::vector<synth::VideoClip>& corpus,
                    const std::string& csv_path, double samples_per_second = 3.0,
                    std::size_t pairs_per_video = 8);

/// One row per sampled frame: video_id,frame_index,h1..hD. Deterministic.
void export_embeddings(const Checkpoint& ckpt, const std::vector<synth::VideoClip>& corpus,
                       const std::string& csv_path, double samples_per_second = 3.0);

/// Subcommands: gen-data, pretrain, probe, finetune, export-weights,
/// export-embeddings, ablate. Exit codes: 0 success, 1 usage error, 2 runtime
/// error. MUSCL_OUT_DIR, when set, overrides out_dir.
int run_cli(const std::vector<std::string>& args);

}  // namespace muscl::harness
