#include "fdsm/errors.hpp"
#include "fdsm/harness.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace fdsm;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 0) {
    ExperimentConfig c;
    c.seed = seed;
    c.data.train_per_class = 4;
    c.data.test_per_class = 3;
    c.model.model_dim = 16;
    c.head.epochs = 60;
    c.head.hidden_dim = 32;
    c.train.iterations = 30;
    c.train.batch_size = 8;
    c.train.warmup = 5;
    c.train.learning_rate = 1e-3;
    c.train.log_wall_clock = false;
    c.inference.num_noise_seeds = 2;
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.metadata = {{"kind", "model"}, {"note", "x"}};
    c.arrays.add("a", Tensor({2, 3}, std::vector<double>{1, -2, 3.5, 1e-300, -0.0, 7}));
    c.arrays.add("b.c", Tensor({1}, std::vector<double>{42}));
    return c;
}

} // namespace

TEST_CASE("config survives a JSON round trip") {
    const ExperimentConfig c = tiny_config(9);
    const auto j = to_json(c);
    CHECK(to_json(config_from_json(j)) == j);
    CHECK(config_from_json(nlohmann::json::object()).train.iterations == ExperimentConfig{}.train.iterations);
    CHECK_THROWS_AS(config_from_json({{"train", {{"iterationz", 3}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"model", {{"gating", "sometimes"}}}}), std::invalid_argument);
}

TEST_CASE("dotted overrides parse with the type of the current value") {
    auto j = to_json(ExperimentConfig{});
    apply_override(j, "train.iterations", "123");
    apply_override(j, "train.srm", "false");
    apply_override(j, "train.learning_rate", "0.5");
    apply_override(j, "eval.t_test_sweep", "10,20,30");
    apply_override(j, "eval.crop_lengths", "[8, 12]");
    apply_override(j, "data.mode", "mixed");
    const ExperimentConfig c = config_from_json(j);
    CHECK(c.train.iterations == 123);
    CHECK_FALSE(c.train.srm);
    CHECK(c.train.learning_rate == 0.5);
    CHECK(c.eval.t_test_sweep == std::vector<int>{10, 20, 30});
    CHECK(c.eval.crop_lengths == std::vector<std::size_t>{8, 12});
    CHECK(c.data.synth.mode == BenchmarkMode::Mixed);
    CHECK_THROWS_AS(apply_override(j, "train.nope", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "train", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "train.iterations", "many"), ConfigError);
    const auto keys = config_keys(j);
    CHECK(std::find(keys.begin(), keys.end(), "model.model_dim") != keys.end());
}

TEST_CASE("seed environment variable replaces the config seed") {
    ExperimentConfig c;
    c.seed = 1;
    ::setenv("FDSM_SEED", "77", 1);
    apply_env_overrides(c);
    CHECK(c.seed == 77);
    ::setenv("FDSM_SEED", "7x", 1);
    CHECK_THROWS_AS(apply_env_overrides(c), ConfigError);
    ::unsetenv("FDSM_SEED");
    apply_env_overrides(c);
    CHECK(c.seed == 77);
}

TEST_CASE("fingerprints track every field") {
    ExperimentConfig a = tiny_config(), b = tiny_config();
    CHECK(config_fingerprint(a) == config_fingerprint(b));
    b.train.gamma = 0.9;
    CHECK(config_fingerprint(a) != config_fingerprint(b));
}

TEST_CASE("checkpoint encoding round-trips bitwise") {
    const Checkpoint c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back.metadata == c.metadata);
    CHECK(back.arrays == c.arrays);
    CHECK(std::signbit(back.arrays.at("a")[4]));
    CHECK(encode_checkpoint(back) == bytes);

    TempDir dir("fdsm_ckpt_test");
    save_checkpoint(dir.path / "c.ckpt", c);
    CHECK(encode_checkpoint(load_checkpoint(dir.path / "c.ckpt")) == bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), CheckpointError);
}

TEST_CASE("corrupted checkpoints raise typed errors") {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), BadMagicError);
    CHECK_THROWS_AS(decode_checkpoint({}), BadMagicError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), VersionMismatchError);
    for (std::size_t cut : {6ul, 12ul, 20ul, bytes.size() - 1}) {
        const std::vector<unsigned char> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(decode_checkpoint(truncated), TruncatedFileError);
    }
    auto bad_json = bytes;
    bad_json[16] = '#';
    CHECK_THROWS_AS(decode_checkpoint(bad_json), CheckpointError);
}

TEST_CASE("toggles reach the model and the loss") {
    ExperimentConfig c = tiny_config();
    CHECK(c.denoiser().use_srm);
    c.train.srm = false;
    CHECK_FALSE(c.denoiser().use_srm);
    CHECK(c.denoiser().model_dim == 16);
    CHECK(c.curriculum_schedule().total == c.train.iterations);

    const ExperimentData data = prepare_data(c);
    const HeadTrainingResult head = distill(c, data);
    c.train.curriculum = false;
    c.train.freq_loss = false;
    const TrainedModel m = train_model(c, data, head.head);
    for (const auto& r : m.metrics) {
        CHECK(r.gamma == 0.0);
        CHECK(r.l_freq == 0.0);
        CHECK(r.l_total == r.l_diff);
    }
    CHECK_FALSE(m.fixed_eps.has_value());
    c.train.fixed_noise = true;
    const TrainedModel fixed = train_model(c, data, head.head);
    REQUIRE(fixed.fixed_eps.has_value());
    CHECK(model_checkpoint(c, fixed, head.head).arrays.contains("train.fixed_eps"));
}

TEST_CASE("data preparation keeps unseen classes out of training") {
    const ExperimentConfig c = tiny_config(3);
    const ExperimentData data = prepare_data(c);
    CHECK(data.train.size() == 8 * c.data.train_per_class);
    CHECK(data.test.size() == 2 * c.data.test_per_class);
    for (const auto& s : data.train) CHECK(s.split == Split::Seen);
    for (const auto& s : data.test) CHECK(s.split == Split::Unseen);
    CHECK(data.unseen_classes().size() == 2);
}

TEST_CASE("smoke training lowers the diffusion loss") {
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ExperimentConfig c = tiny_config(seed);
        c.train.iterations = 150;
        c.train.learning_rate = 3e-3;
        const ExperimentData data = prepare_data(c);
        const TrainedModel m = train_model(c, data, distill(c, data).head);
        double head = 0.0, tail = 0.0;
        for (int i = 0; i < 30; ++i) {
            head += m.metrics[static_cast<std::size_t>(i)].l_diff;
            tail += m.metrics[m.metrics.size() - 1 - static_cast<std::size_t>(i)].l_diff;
        }
        ratios.push_back(tail / head);
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[2] < 0.95);
}

TEST_CASE("pipeline runs are bitwise reproducible") {
    TempDir dir("fdsm_determinism_test");
    ExperimentConfig c = tiny_config(4);
    c.eval.t_test_sweep = {10, 25, 40};
    c.eval.crop_lengths = {16, 12};
    c.eval.downsample_factors = {2};
    std::vector<std::string> ckpts, csvs, evals;
    for (int run = 0; run < 2; ++run) {
        const fs::path base = dir.path / std::to_string(run);
        fs::create_directories(base);
        run_distill(c, base / "head.ckpt");
        run_train(c, base / "head.ckpt", base / "model.ckpt", base / "metrics.csv");
        ckpts.push_back(read_file(base / "model.ckpt"));
        csvs.push_back(read_file(base / "metrics.csv"));
        evals.push_back(run_eval(base / "model.ckpt", std::nullopt).dump());
    }
    CHECK(ckpts[0] == ckpts[1]);
    CHECK(csvs[0] == csvs[1]);
    CHECK(evals[0] == evals[1]);

    std::istringstream lines(csvs[0]);
    std::string header;
    std::getline(lines, header);
    CHECK(header == kMetricsHeader);
    std::size_t rows = 0;
    for (std::string line; std::getline(lines, line);) ++rows;
    CHECK(rows == static_cast<std::size_t>(c.train.iterations));

    const auto report = nlohmann::json::parse(evals[0]);
    CHECK(report.at("t_test_sweep").size() == 3);
    CHECK(report.at("downsample").size() == 1);
    // A crop to the full length is the identity.
    CHECK(report.at("crop").at(0).at("accuracy") == report.at("accuracy"));
    CHECK(report.at("crop").at(0).at("confusion") == report.at("confusion"));

    const auto spectrum = run_analyze_spectrum(dir.path / "0" / "model.ckpt", std::nullopt);
    CHECK(spectrum.at("high_band_gap").get<double>() >= 0.0);
    CHECK(spectrum.at("estimate").at("per_k").size() == 16);

    ExperimentConfig other = c;
    other.inference.t_test = 40;
    other.eval = {};
    const auto overridden = run_eval(dir.path / "0" / "model.ckpt", other);
    CHECK(overridden.at("t_test") == 40);
    CHECK(overridden.at("t_test_sweep").empty());

    CHECK_THROWS_AS(run_train(c, dir.path / "0" / "model.ckpt", dir.path / "x.ckpt", dir.path / "x.csv"),
                    CheckpointError);
}

TEST_CASE("ablation records every cell including failures") {
    TempDir dir("fdsm_ablation_test");
    const auto cells = parse_ablation_matrix({
        {"cells", {{{"name", "full"}, {"overrides", nlohmann::json::object()}},
                   {{"name", "broken"}, {"overrides", {{"train.warmup", 1000}}}},
                   {{"name", "diverges"}, {"overrides", {{"train.learning_rate", 1e300}}}}}},
        {"sweeps", {{{"key", "train.srm"}, {"values", {false}}}}},
    });
    REQUIRE(cells.size() == 4);
    CHECK(cells[3].name == "train.srm=false");
    const auto rows = run_ablation(tiny_config(), cells, dir.path / "ablation.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK_FALSE(rows[1].error.empty());
    CHECK_FALSE(rows[2].ok);
    CHECK(rows[2].error.find("iteration") != std::string::npos);
    CHECK(rows[3].ok);
    CHECK(rows[0].fingerprint != rows[3].fingerprint);

    std::istringstream csv(read_file(dir.path / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "cell,fingerprint,accuracy,status,error");
    std::size_t failed = 0, total = 0;
    while (std::getline(csv, line)) {
        ++total;
        failed += line.find(",failed,") != std::string::npos;
    }
    CHECK(total == 4);
    CHECK(failed == 2);
    CHECK_THROWS_AS(parse_ablation_matrix(nlohmann::json::object()), ConfigError);
}
