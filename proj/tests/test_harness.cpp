#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "muscl/harness.hpp"
#include "muscl/nets.hpp"
#include "muscl/rng.hpp"

using namespace muscl;
namespace fs = std::filesystem;

namespace {

// small stack: min image dim 8 fits the 12x12 test corpus
const nets::ArchConfig kArch{{2, 4}, 8, 6, 8};

std::string fresh_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / "muscl_test_harness" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

harness::RunConfig small_cfg(const std::string& dir) {
    harness::RunConfig c;
    c.out_dir = dir;
    c.seed = 7;
    c.epochs = 2;
    c.probe_epochs = 50;
    c.synth.n_videos = 12;
    c.synth.frames_per_video = 24;
    c.synth.height = 12;
    c.synth.width = 12;
    c.arch = kArch;
    c.optim.batch_size = 4;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();  // RFC-4180 CRLF
        out.push_back(line);
    }
    return out;
}

// untrained checkpoint over a freshly initialized model
harness::Checkpoint fresh_checkpoint(const harness::RunConfig& cfg, std::uint64_t seed,
                                     bool with_wnet) {
    Rng rng(seed);
    auto [model, wnet] = nets::init_params(cfg.arch, rng);
    harness::Checkpoint ckpt;
    ckpt.config_text = cfg.to_text();
    ckpt.model = std::move(model);
    if (with_wnet) ckpt.weight_net = std::move(wnet);
    return ckpt;
}

}  // namespace

TEST_CASE("config validation rejects degenerate settings") {
    harness::RunConfig c = small_cfg(fresh_dir("validate"));
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg(fresh_dir("validate"));
    c.split_ratio = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg(fresh_dir("validate"));
    c.corrupt_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("config text round-trips through the file parser") {
    std::string dir = fresh_dir("roundtrip");
    harness::RunConfig c = small_cfg(dir);
    c.corrupt_fraction = 0.2;
    c.synth.n_junk_videos = 3;
    c.synth.junk_frames = 100;
    c.synth.seed = 42;
    c.pairgen.strategy = pairs::Strategy::S2;
    c.optim.mode = meta::OptimConfig::Mode::Plain;
    c.optim.tau = 0.25;

    std::string path = dir + "/run.cfg";
    {
        std::ofstream os(path);
        os << "# comment line\n\n" << c.to_text();
    }
    harness::RunConfig back = harness::parse_run_config(harness::read_config_file(path));
    CHECK(back.to_text() == c.to_text());
}

TEST_CASE("unknown config keys are rejected by name") {
    try {
        harness::parse_run_config({{"bogus_key", "1"}});
        FAIL("expected std::invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    CHECK_THROWS_AS(harness::parse_run_config({{"epochs", "not_a_number"}}),
                    std::invalid_argument);
}

TEST_CASE("video split is a deterministic disjoint cover") {
    harness::Split s = harness::split_videos(10, 0.8, 3);
    CHECK(s.train.size() == 8);
    CHECK(s.valid.size() == 2);
    std::vector<char> seen(10, 0);
    for (std::size_t i : s.train) seen[i]++;
    for (std::size_t i : s.valid) seen[i]++;
    for (char c : seen) CHECK(c == 1);

    harness::Split again = harness::split_videos(10, 0.8, 3);
    CHECK(again.train == s.train);
    CHECK(again.valid == s.valid);

    // extreme ratios still leave both sides non-empty
    CHECK(harness::split_videos(5, 0.01, 1).train.size() == 1);
    CHECK(harness::split_videos(5, 0.99, 1).valid.size() == 1);
    CHECK_THROWS_AS(harness::split_videos(1, 0.8, 0), std::invalid_argument);
}

TEST_CASE("pretraining twice gives byte-identical checkpoints and logs") {
    // the config echo in the checkpoint includes out_dir, so both runs must
    // target the same directory; capture the bytes between runs
    std::string dir = fresh_dir("det");
    harness::RunConfig c = small_cfg(dir);
    harness::PretrainResult r1 = harness::pretrain(c);
    std::string ckpt1 = slurp(r1.checkpoint_path), log1 = slurp(r1.log_path);
    harness::PretrainResult r2 = harness::pretrain(c);
    CHECK(slurp(r2.checkpoint_path) == ckpt1);
    CHECK(slurp(r2.log_path) == log1);

    // a different seed must actually change the outcome
    c.seed = 8;
    harness::PretrainResult r3 = harness::pretrain(c);
    CHECK(slurp(r3.checkpoint_path) != ckpt1);
}

TEST_CASE("training log has the fixed header and one row per epoch") {
    std::string dir = fresh_dir("log");
    harness::RunConfig c = small_cfg(dir);
    c.epochs = 3;
    harness::PretrainResult r = harness::pretrain(c);
    auto rows = lines_of(slurp(r.log_path));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "epoch,train_loss,valid_loss,weight_mean,weight_std,fallback_pairs");
    // meta mode: the weight columns are populated
    CHECK(rows[1].find(",,") == std::string::npos);

    c.optim.mode = meta::OptimConfig::Mode::Plain;
    harness::PretrainResult rp = harness::pretrain(c);
    auto prow = lines_of(slurp(rp.log_path));
    REQUIRE(prow.size() == 4);
    CHECK(prow[1].find(",,") != std::string::npos);  // weight columns empty
}

TEST_CASE("checkpoint round-trips to identical bytes and parameters") {
    std::string dir = fresh_dir("ckpt");
    harness::RunConfig c = small_cfg(dir);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 11, true);
    ckpt.step = 37;

    std::string p1 = dir + "/a.bin", p2 = dir + "/b.bin";
    harness::save_checkpoint(ckpt, p1);
    harness::Checkpoint back = harness::load_checkpoint(p1);
    harness::save_checkpoint(back, p2);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(back.step == 37);
    CHECK(back.config_text == ckpt.config_text);
    REQUIRE(back.weight_net.has_value());
    REQUIRE(back.model.params.count() == ckpt.model.params.count());
    for (std::size_t p = 0; p < ckpt.model.params.count(); ++p) {
        CHECK(back.model.params.names[p] == ckpt.model.params.names[p]);
        const Tensor& a = ckpt.model.params.values[p];
        const Tensor& b = back.model.params.values[p];
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("checkpoint loader rejects bad files by name") {
    std::string dir = fresh_dir("ckpt_bad");
    try {
        harness::load_checkpoint(dir + "/missing.bin");
        FAIL("expected std::runtime_error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("missing.bin") != std::string::npos);
    }

    harness::RunConfig c = small_cfg(dir);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 12, false);
    std::string path = dir + "/v.bin";
    harness::save_checkpoint(ckpt, path);
    std::string bytes = slurp(path);
    bytes[9] = 2;  // version field follows the 9-byte magic
    {
        std::ofstream os(path, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        harness::load_checkpoint(path);
        FAIL("expected std::runtime_error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("probe is deterministic and an untrained encoder sits near chance") {
    harness::RunConfig c = small_cfg(fresh_dir("probe"));
    c.synth.n_videos = 20;
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 21, false);

    metrics::ProbeReport a = harness::linear_probe(ckpt, corpus, 50, 5);
    metrics::ProbeReport b = harness::linear_probe(ckpt, corpus, 50, 5);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_f1 == b.macro_f1);
    CHECK(a.confusion == b.confusion);

    double mean = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
        mean += harness::linear_probe(ckpt, corpus, 50, seed).accuracy;
    mean /= 5.0;
    CHECK(mean > 0.3);
    CHECK(mean < 0.7);
}

TEST_CASE("macro F1 of a diagonal confusion matrix is 1") {
    std::vector<int> truth = {0, 0, 1, 1, 1, 0};
    metrics::ProbeReport r = metrics::compute_report(truth, truth, 2);
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.confusion[0][1] == 0);
    CHECK(r.confusion[1][0] == 0);
    CHECK(r.confusion[0][0] == 3);
    CHECK(r.confusion[1][1] == 3);
}

TEST_CASE("head fine-tuning at least matches the linear probe") {
    std::string dir = fresh_dir("ft");
    harness::RunConfig c = small_cfg(dir);
    c.synth.n_videos = 16;
    auto corpus = harness::load_or_generate_corpus(c);
    harness::PretrainResult r = harness::pretrain(c, corpus, false);

    double probe_mean = 0.0, ft_mean = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        probe_mean += harness::linear_probe(r.ckpt, corpus, 100, seed).accuracy;
        ft_mean += harness::finetune_head(r.ckpt, corpus, 100, seed).accuracy;
    }
    CHECK(ft_mean / 5.0 >= probe_mean / 5.0 - 0.02);
}

TEST_CASE("zero-epoch fine-tune equals the zero-epoch probe baseline") {
    harness::RunConfig c = small_cfg(fresh_dir("ft0"));
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 23, false);

    // the untouched classifier predicts a constant class either way
    metrics::ProbeReport p = harness::linear_probe(ckpt, corpus, 0, 9);
    metrics::ProbeReport f = harness::finetune_head(ckpt, corpus, 0, 9);
    CHECK(p.accuracy == f.accuracy);
    CHECK(p.confusion == f.confusion);
}

TEST_CASE("fine-tuning leaves the checkpoint parameters untouched") {
    harness::RunConfig c = small_cfg(fresh_dir("ft_frozen"));
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 24, false);
    std::vector<Tensor> before = ckpt.model.params.values;
    harness::finetune_head(ckpt, corpus, 20, 3);
    for (std::size_t p = 0; p < before.size(); ++p)
        for (std::size_t i = 0; i < before[p].size(); ++i)
            CHECK(ckpt.model.params.values[p][i] == before[p][i]);
}

TEST_CASE("weight export: fresh net emits 0.5 everywhere, plain checkpoints rejected") {
    std::string dir = fresh_dir("xw");
    harness::RunConfig c = small_cfg(dir);
    c.synth.n_videos = 6;
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 31, true);

    std::string csv = dir + "/w.csv";
    harness::export_weights(ckpt, corpus, csv);
    auto rows = lines_of(slurp(csv));
    REQUIRE(rows.size() == 1 + corpus.size() * 8);
    CHECK(rows[0] == "video_id,tag,frame_indices,xi1,xi2,weight");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        auto comma = rows[r].rfind(',');
        double w = std::stod(rows[r].substr(comma + 1));
        CHECK(w == 0.5);  // zero output layer: sigmoid(0) exactly
    }

    std::string csv2 = dir + "/w2.csv";
    harness::export_weights(ckpt, corpus, csv2);
    CHECK(slurp(csv) == slurp(csv2));

    harness::Checkpoint plain = fresh_checkpoint(c, 31, false);
    CHECK_THROWS_AS(harness::export_weights(plain, corpus, dir + "/w3.csv"),
                    std::runtime_error);
}

TEST_CASE("perturbed weight net keeps every exported weight inside (0,1)") {
    std::string dir = fresh_dir("xw_rand");
    harness::RunConfig c = small_cfg(dir);
    c.synth.n_videos = 5;
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 33, true);
    Rng rng(99);
    for (Tensor& t : ckpt.weight_net->params.values)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.3 * rng.normal();

    std::string csv = dir + "/w.csv";
    harness::export_weights(ckpt, corpus, csv);
    auto rows = lines_of(slurp(csv));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        double w = std::stod(rows[r].substr(rows[r].rfind(',') + 1));
        CHECK(w > 0.0);
        CHECK(w < 1.0);
    }
}

TEST_CASE("embedding export covers every sampled frame deterministically") {
    std::string dir = fresh_dir("xe");
    harness::RunConfig c = small_cfg(dir);
    c.synth.n_videos = 6;
    auto corpus = harness::load_or_generate_corpus(c);
    harness::Checkpoint ckpt = fresh_checkpoint(c, 41, false);

    std::size_t total_k = 0;
    for (const auto& clip : corpus) total_k += synth::extract_frame_set(clip).K();

    std::string csv = dir + "/e.csv";
    harness::export_embeddings(ckpt, corpus, csv);
    auto rows = lines_of(slurp(csv));
    REQUIRE(rows.size() == 1 + total_k);
    CHECK(rows[0].rfind("video_id,frame_index,h1,", 0) == 0);

    std::string csv2 = dir + "/e2.csv";
    harness::export_embeddings(ckpt, corpus, csv2);
    CHECK(slurp(csv) == slurp(csv2));
}

TEST_CASE("cli distinguishes usage errors from runtime errors") {
    CHECK(harness::run_cli({}) == 1);
    CHECK(harness::run_cli({"frobnicate"}) == 1);
    CHECK(harness::run_cli({"pretrain"}) == 1);                  // missing --seed
    CHECK(harness::run_cli({"pretrain", "--seed"}) == 1);        // missing value
    CHECK(harness::run_cli({"pretrain", "--seed", "1", "--nope", "2"}) == 1);
    CHECK(harness::run_cli({"probe", "--seed", "1"}) == 1);      // missing --checkpoint
    CHECK(harness::run_cli({"help"}) == 0);
    // missing checkpoint file is a runtime failure, not a usage error
    CHECK(harness::run_cli({"probe", "--checkpoint", "/nonexistent/ckpt.bin", "--seed", "1"}) ==
          2);
}

TEST_CASE("cli pretrain runs end to end") {
    std::string dir = fresh_dir("cli");
    int rc = harness::run_cli({"pretrain", "--seed", "5", "--epochs", "1",
                               "--out_dir", dir,
                               "--batch_size", "4",
                               "--arch", kArch.serialize(),
                               "--synth.n_videos", "12",
                               "--synth.frames_per_video", "24",
                               "--synth.height", "12",
                               "--synth.width", "12"});
    CHECK(rc == 0);
    CHECK(fs::exists(dir + "/checkpoint.bin"));
    CHECK(fs::exists(dir + "/train_log.csv"));

    harness::Checkpoint ckpt = harness::load_checkpoint(dir + "/checkpoint.bin");
    CHECK(ckpt.step > 0);
    CHECK(ckpt.weight_net.has_value());  // default mode is meta
}
