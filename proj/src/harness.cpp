#include "fdsm/harness.hpp"

#include "fdsm/errors.hpp"
#include "fdsm/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace fdsm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    data.synth.validate();
    if (data.train_per_class == 0 || data.test_per_class == 0) {
        throw ConfigError("train_per_class and test_per_class must be positive");
    }
    denoiser().validate();
    if (diffusion_steps < 1) throw ConfigError("diffusion steps must be >= 1");
    if (train.iterations < 1 || train.batch_size < 1) throw ConfigError("iterations and batch size must be positive");
    if (train.warmup < 0 || train.warmup >= train.iterations) {
        throw ConfigError("warmup must lie in [0, iterations)");
    }
    if (!(train.learning_rate > 0.0) || !(train.weight_decay >= 0.0)) throw ConfigError("bad optimizer settings");
    if (!(train.lambda_freq >= 0.0)) throw ConfigError("lambda_freq must be non-negative");
    spectral_weights().validate(data.synth.length);
    inference.validate(diffusion_steps);
    for (int t : eval.t_test_sweep) {
        if (t < 1 || t > diffusion_steps) throw ConfigError("t_test sweep value " + std::to_string(t) + " out of range");
    }
    if (head.epochs < 1 || head.hidden_dim < 1) throw ConfigError("head epochs and width must be positive");
}

DenoiserConfig ExperimentConfig::denoiser() const {
    DenoiserConfig m = model;
    m.channels = data.synth.channels;
    m.length = data.synth.length;
    m.joints = data.synth.joints;
    m.use_srm = train.srm;
    return m;
}

SpectralWeightConfig ExperimentConfig::spectral_weights() const {
    return {cutoff_from_divisor(data.synth.length, model.cutoff_div), train.gamma, diffusion_steps};
}

CurriculumSchedule ExperimentConfig::curriculum_schedule() const {
    CurriculumSchedule s = curriculum;
    s.total = train.iterations;
    return s;
}

std::uint64_t ExperimentConfig::text_seed() const { return substream_seed(seed, "text"); }

json to_json(const ExperimentConfig& c) {
    const SynthSpec& s = c.data.synth;
    return {
        {"seed", c.seed},
        {"data",
         {{"num_classes", s.num_classes},
          {"seen_fraction", s.seen_fraction},
          {"mode", to_string(s.mode)},
          {"channels", s.channels},
          {"length", s.length},
          {"joints", s.joints},
          {"cutoff_div", s.cutoff_div},
          {"jitter", s.jitter},
          {"high_fraction", s.high_fraction},
          {"descriptions_per_class", s.descriptions_per_class},
          {"frequencies_per_class", s.frequencies_per_class},
          {"active_joints", s.active_joints},
          {"train_per_class", c.data.train_per_class},
          {"test_per_class", c.data.test_per_class}}},
        {"model",
         {{"depth", c.model.depth},
          {"model_dim", c.model.model_dim},
          {"heads", c.model.heads},
          {"mlp_ratio", c.model.mlp_ratio},
          {"text_dim", c.model.text_dim},
          {"cutoff_div", c.model.cutoff_div},
          {"alpha", c.model.alpha},
          {"gating", to_string(c.model.gating)}}},
        {"head",
         {{"epochs", c.head.epochs}, {"learning_rate", c.head.learning_rate}, {"hidden_dim", c.head.hidden_dim}}},
        {"diffusion", {{"steps", c.diffusion_steps}, {"schedule", to_string(c.beta_schedule)}}},
        {"train",
         {{"iterations", c.train.iterations},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"weight_decay", c.train.weight_decay},
          {"warmup", c.train.warmup},
          {"lambda_freq", c.train.lambda_freq},
          {"gamma", c.train.gamma},
          {"fixed_noise", c.train.fixed_noise},
          {"srm", c.train.srm},
          {"freq_loss", c.train.freq_loss},
          {"curriculum", c.train.curriculum},
          {"log_wall_clock", c.train.log_wall_clock}}},
        {"curriculum",
         {{"kind", to_string(c.curriculum.kind)},
          {"fixed_p", c.curriculum.fixed_p},
          {"step_interval", c.curriculum.step_interval}}},
        {"inference",
         {{"t_test", c.inference.t_test},
          {"num_noise_seeds", c.inference.num_noise_seeds},
          {"aggregation", to_string(c.inference.aggregation)}}},
        {"eval",
         {{"crop_lengths", c.eval.crop_lengths},
          {"downsample_factors", c.eval.downsample_factors},
          {"t_test_sweep", c.eval.t_test_sweep}}},
    };
}

namespace {

void merge_checked(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), key);
        } else {
            slot = it.value();
        }
    }
}

} // namespace

ExperimentConfig config_from_json(const json& j) {
    json doc = to_json(ExperimentConfig{});
    merge_checked(doc, j, "");
    try {
        ExperimentConfig c;
        c.seed = doc["seed"].get<std::uint64_t>();
        const json& d = doc["data"];
        SynthSpec& s = c.data.synth;
        s.num_classes = d["num_classes"];
        s.seen_fraction = d["seen_fraction"];
        s.mode = benchmark_mode_from_string(d["mode"]);
        s.channels = d["channels"];
        s.length = d["length"];
        s.joints = d["joints"];
        s.cutoff_div = d["cutoff_div"];
        s.jitter = d["jitter"];
        s.high_fraction = d["high_fraction"];
        s.descriptions_per_class = d["descriptions_per_class"];
        s.frequencies_per_class = d["frequencies_per_class"];
        s.active_joints = d["active_joints"];
        c.data.train_per_class = d["train_per_class"];
        c.data.test_per_class = d["test_per_class"];

        const json& m = doc["model"];
        c.model.depth = m["depth"];
        c.model.model_dim = m["model_dim"];
        c.model.heads = m["heads"];
        c.model.mlp_ratio = m["mlp_ratio"];
        c.model.text_dim = m["text_dim"];
        c.model.cutoff_div = m["cutoff_div"];
        c.model.alpha = m["alpha"];
        c.model.gating = gating_mode_from_string(m["gating"]);

        const json& h = doc["head"];
        c.head.epochs = h["epochs"];
        c.head.learning_rate = h["learning_rate"];
        c.head.hidden_dim = h["hidden_dim"];

        c.diffusion_steps = doc["diffusion"]["steps"];
        c.beta_schedule = beta_schedule_from_string(doc["diffusion"]["schedule"]);

        const json& t = doc["train"];
        c.train.iterations = t["iterations"];
        c.train.batch_size = t["batch_size"];
        c.train.learning_rate = t["learning_rate"];
        c.train.weight_decay = t["weight_decay"];
        c.train.warmup = t["warmup"];
        c.train.lambda_freq = t["lambda_freq"];
        c.train.gamma = t["gamma"];
        c.train.fixed_noise = t["fixed_noise"];
        c.train.srm = t["srm"];
        c.train.freq_loss = t["freq_loss"];
        c.train.curriculum = t["curriculum"];
        c.train.log_wall_clock = t["log_wall_clock"];

        const json& cu = doc["curriculum"];
        c.curriculum.kind = curriculum_kind_from_string(cu["kind"]);
        c.curriculum.fixed_p = cu["fixed_p"];
        c.curriculum.step_interval = cu["step_interval"];

        const json& in = doc["inference"];
        c.inference.t_test = in["t_test"];
        c.inference.num_noise_seeds = in["num_noise_seeds"];
        c.inference.aggregation = noise_aggregation_from_string(in["aggregation"]);

        const json& e = doc["eval"];
        c.eval.crop_lengths = e["crop_lengths"].get<std::vector<std::size_t>>();
        c.eval.downsample_factors = e["downsample_factors"].get<std::vector<std::size_t>>();
        c.eval.t_test_sweep = e["t_test_sweep"].get<std::vector<int>>();
        c.head.embed_dim = c.model.text_dim;
        return c;
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("malformed config: ") + ex.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& ex) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + ex.what());
    }
}

namespace {

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.value().is_object()) {
            collect_keys(it.value(), key, out);
        } else {
            out.push_back(key);
        }
    }
}

json parse_like(const json& current, const std::string& key, const std::string& text) {
    try {
        if (current.is_boolean()) {
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw ConfigError("expected true/false for '" + key + "', got '" + text + "'");
        }
        if (current.is_number_unsigned()) {
            if (!text.empty() && text.front() == '-') throw ConfigError("'" + key + "' must be non-negative");
            return std::stoull(text);
        }
        if (current.is_number_integer()) return std::stoll(text);
        if (current.is_number_float()) return std::stod(text);
        if (current.is_string()) return text;
        if (current.is_array()) {
            if (!text.empty() && text.front() == '[') return json::parse(text);
            json arr = json::array();
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) arr.push_back(json::parse(item));
            }
            return arr;
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse '" + text + "' for config key '" + key + "'");
    } catch (const json::exception&) {
        throw ConfigError("cannot parse '" + text + "' for config key '" + key + "'");
    }
    throw ConfigError("config key '" + key + "' is not a settable leaf");
}

} // namespace

std::vector<std::string> config_keys(const json& cfg) {
    std::vector<std::string> out;
    collect_keys(cfg, "", out);
    return out;
}

void apply_override(json& cfg, const std::string& dotted_key, const std::string& value) {
    json* node = &cfg;
    std::stringstream ss(dotted_key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) {
            throw ConfigError("unknown config key '" + dotted_key + "'");
        }
        node = &(*node)[part];
    }
    if (node->is_object()) throw ConfigError("config key '" + dotted_key + "' names a section");
    *node = parse_like(*node, dotted_key, value);
}

void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* env = std::getenv("FDSM_SEED")) {
        try {
            std::size_t used = 0;
            const std::uint64_t seed = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
            cfg.seed = seed;
        } catch (const std::logic_error&) {
            throw ConfigError(std::string("FDSM_SEED is not an unsigned integer: '") + env + "'");
        }
    }
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr unsigned char kMagic[4] = {'F', 'D', 'S', 'M'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    put_le(out, bits);
}

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    template <typename T>
    T le(const char* what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return value;
    }

    double f64(const char* what) {
        const auto bits = le<std::uint64_t>(what);
        double value;
        std::memcpy(&value, &bits, sizeof value);
        return value;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw TruncatedFileError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string blob = ckpt.metadata.dump();
    put_le<std::uint64_t>(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(std::distance(ckpt.arrays.begin(), ckpt.arrays.end())));
    for (const auto& [name, tensor] : ckpt.arrays) {
        if (name.size() > 0xFFFF) throw CheckpointError("array name too long: " + name);
        if (tensor.rank() > 0xFF) throw CheckpointError("array rank too large: " + name);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<unsigned char>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : tensor.data()) put_f64(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw BadMagicError("not an FDSM checkpoint (bad magic)");
    }
    Reader r(bytes);
    r.text(4, "magic");
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw VersionMismatchError(version, kCheckpointVersion);
    const auto blob_len = r.le<std::uint64_t>("config length");
    if (blob_len > r.remaining()) throw TruncatedFileError("checkpoint truncated inside the config blob");
    Checkpoint ckpt;
    try {
        ckpt.metadata = json::parse(r.text(static_cast<std::size_t>(blob_len), "config"));
    } catch (const json::parse_error& ex) {
        throw CheckpointError(std::string("checkpoint config blob is not valid JSON: ") + ex.what());
    }
    const auto count = r.le<std::uint32_t>("array count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.le<std::uint16_t>("array name length");
        std::string name = r.text(name_len, "array name");
        const auto rank = r.le<std::uint8_t>("array rank");
        Shape shape;
        for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.le<std::uint32_t>("array dims"));
        const std::size_t n = shape_size(shape);
        if (n > r.remaining() / 8) throw TruncatedFileError("checkpoint truncated inside array '" + name + "'");
        std::vector<double> values(n);
        for (auto& v : values) v = r.f64("array payload");
        ckpt.arrays.add(name, Tensor(std::move(shape), std::move(values)));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Experiment stages
// ---------------------------------------------------------------------------

std::vector<ActionClass> ExperimentData::all_classes() const { return action_classes(classes); }
std::vector<ActionClass> ExperimentData::unseen_classes() const { return action_classes(classes, Split::Unseen); }

ExperimentData prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentData data;
    Rng class_rng(substream_seed(cfg.seed, "data.classes"));
    data.classes = generate_class_set(cfg.data.synth, class_rng);
    Rng train_rng(substream_seed(cfg.seed, "data.train"));
    data.train = synth_samples(data.classes, Split::Seen, cfg.data.train_per_class, train_rng);
    Rng test_rng(substream_seed(cfg.seed, "data.test"));
    data.test = synth_samples(data.classes, Split::Unseen, cfg.data.test_per_class, test_rng);
    return data;
}

HeadTrainingResult distill(const ExperimentConfig& cfg, const ExperimentData& data) {
    HeadTrainingOptions opts = cfg.head;
    opts.embed_dim = cfg.model.text_dim;
    opts.text_seed = cfg.text_seed();
    opts.init_seed = substream_seed(cfg.seed, "head.init");
    const auto classes = data.all_classes();
    return train_head(classes, opts);
}

std::string format_metrics_row(const MetricsRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f", static_cast<long long>(r.iteration),
                  r.l_diff, r.l_freq, r.l_total, r.lr, r.gamma, r.seconds);
    return buf;
}

LossTerms training_loss(const ad::VarMap& params, ad::Tape& tape, const ExperimentConfig& cfg,
                        const NoiseSchedule& schedule, const TrainingBatch& batch) {
    const DenoiserConfig model = cfg.denoiser();
    const Tensor z_t = forward_diffuse_batch(batch.z0, batch.t, batch.eps, schedule);
    const ad::Var z_t_var = tape.constant(z_t);
    const ad::Var eps_hat =
        denoise_forward(params, model, z_t_var, batch.t, tape.constant(batch.d), batch.s_eff);
    LossTerms terms;
    terms.l_diff = diffusion_loss(eps_hat, tape.constant(batch.eps));
    terms.total = terms.l_diff;
    if (cfg.train.freq_loss) {
        const ad::Var z0_hat = estimate_z0(z_t_var, eps_hat, batch.t, schedule);
        terms.l_freq = spectral_loss(tape.constant(batch.z0), z0_hat, batch.t, cfg.spectral_weights());
        terms.total = ad::add(terms.l_diff, ad::scale(*terms.l_freq, cfg.train.lambda_freq));
    }
    return terms;
}


TrainedModel train_model(const ExperimentConfig& cfg, const ExperimentData& data, const KinematicHead& head,
                         const MetricsSink& sink) {
    cfg.validate();
    if (data.train.empty()) throw ConfigError("training set is empty");
    const DenoiserConfig model = cfg.denoiser();
    const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps, cfg.beta_schedule);
    const CurriculumSchedule curriculum = cfg.curriculum_schedule();
    const std::size_t B = cfg.train.batch_size;
    const Shape batch_shape{B, model.channels, model.length, model.joints};

    std::map<int, const ActionClass*> class_of;
    for (const auto& c : data.classes) class_of[c.action.id] = &c.action;

    Rng batch_rng(substream_seed(cfg.seed, "batch"));
    Rng noise_rng(substream_seed(cfg.seed, "training-noise"));
    Rng curriculum_rng(substream_seed(cfg.seed, "curriculum"));
    Rng gating_rng(substream_seed(cfg.seed, "gating"));

    TrainedModel out;
    out.params = init_denoiser(model, substream_seed(cfg.seed, "init"));
    if (cfg.train.fixed_noise) out.fixed_eps = normal_tensor(batch_shape, noise_rng);
    OptimizerState state = OptimizerState::for_params(
        out.params, AdamWHyper{.learning_rate = cfg.train.learning_rate, .weight_decay = cfg.train.weight_decay});

    std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, cfg.diffusion_steps);
    const auto start = std::chrono::steady_clock::now();

    for (std::int64_t e = 0; e < cfg.train.iterations; ++e) {
        const double gamma = cfg.train.curriculum ? curriculum_prob(curriculum, e) : 0.0;
        TrainingBatch batch;
        std::vector<Tensor> z0s, ds;
        for (std::size_t b = 0; b < B; ++b) {
            const Sample& s = data.train[pick(batch_rng)];
            z0s.push_back(s.z0);
            batch.t.push_back(pick_t(batch_rng));
            const ActionClass& cls = *class_of.at(s.class_id);
            ds.push_back(sample_condition(cls, gamma, curriculum_rng, model.text_dim, cfg.text_seed()).embedding);
        }
        batch.z0 = stack(z0s);
        batch.d = stack(ds);
        batch.eps = out.fixed_eps ? *out.fixed_eps : normal_tensor(batch_shape, noise_rng);
        const std::vector<double> s_hat = predict_intensity_batch(head, batch.d);
        batch.s_eff = resolve_gating(model, s_hat, &gating_rng);

        const double lr = cosine_lr(e, cfg.train.iterations, cfg.train.learning_rate, cfg.train.warmup);
        MetricsRecord rec;
        rec.iteration = e + 1;
        rec.lr = lr;
        rec.gamma = gamma;
        GradientMap grads;
        try {
            ad::Tape tape(true);
            const ad::VarMap vars = ad::bind(tape, out.params, true);
            const LossTerms terms = training_loss(vars, tape, cfg, schedule, batch);
            tape.backward(terms.total);
            for (const auto& [name, value] : out.params) grads.add(name, tape.grad(vars[name]));
            rec.l_diff = terms.l_diff.value().item();
            rec.l_freq = terms.l_freq ? terms.l_freq->value().item() : 0.0;
            rec.l_total = terms.total.value().item();
        } catch (const NonFiniteError& ex) {
            throw TrainingError("iteration " + std::to_string(e + 1) + ": " + ex.what());
        }

        state.hyper.learning_rate = lr;
        auto updated = adamw_step(out.params, grads, state);
        out.params = std::move(updated.params);
        state = std::move(updated.state);

        if (cfg.train.log_wall_clock) {
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        out.metrics.push_back(rec);
        if (sink) sink(rec);
    }
    return out;
}

ZeroShotModel make_zero_shot_model(const ExperimentConfig& cfg, ParameterSet params, KinematicHead head) {
    ZeroShotModel m;
    m.config = cfg.denoiser();
    check_denoiser_params(params, m.config);
    m.params = std::move(params);
    m.schedule = make_schedule(cfg.diffusion_steps, cfg.beta_schedule);
    m.head = std::move(head);
    m.embed_dim = cfg.model.text_dim;
    m.text_seed = cfg.text_seed();
    return m;
}

json to_json(const EvalReport& r) {
    json out = to_json(r.plain);
    json sweep = json::array();
    for (const auto& [t, res] : r.t_test_sweep) sweep.push_back(to_json(res));
    json crops = json::array();
    for (const auto& [len, res] : r.crops) {
        json j = to_json(res);
        j["length"] = len;
        crops.push_back(std::move(j));
    }
    json downs = json::array();
    for (const auto& [factor, res] : r.downsamples) {
        json j = to_json(res);
        j["factor"] = factor;
        downs.push_back(std::move(j));
    }
    out["t_test_sweep"] = std::move(sweep);
    out["crop"] = std::move(crops);
    out["downsample"] = std::move(downs);
    return out;
}

EvalReport evaluate(const ExperimentConfig& cfg, const ZeroShotModel& model, const ExperimentData& data) {
    const auto candidates = data.unseen_classes();
    const std::uint64_t eval_seed = substream_seed(cfg.seed, "eval");
    EvalReport report;
    report.plain = evaluate_accuracy(model, data.test, candidates, cfg.inference, eval_seed);
    for (int t : cfg.eval.t_test_sweep) {
        InferenceConfig inf = cfg.inference;
        inf.t_test = t;
        report.t_test_sweep.emplace_back(t, evaluate_accuracy(model, data.test, candidates, inf, eval_seed));
    }
    for (std::size_t len : cfg.eval.crop_lengths) {
        Rng crop_rng(substream_seed(cfg.seed, "eval.crop"));
        std::vector<Sample> cropped = data.test;
        for (auto& s : cropped) s.z0 = crop(s.z0, len, &crop_rng);
        report.crops.emplace_back(len, evaluate_accuracy(model, cropped, candidates, cfg.inference, eval_seed));
    }
    for (std::size_t factor : cfg.eval.downsample_factors) {
        std::vector<Sample> thinned = data.test;
        for (auto& s : thinned) s.z0 = downsample(s.z0, factor);
        report.downsamples.emplace_back(factor,
                                        evaluate_accuracy(model, thinned, candidates, cfg.inference, eval_seed));
    }
    return report;
}

json to_json(const SpectrumReport& r) {
    return {{"t_test", r.t_test},
            {"ground_truth", r.ground_truth},
            {"estimate", r.estimate},
            {"high_band_gap", r.high_band_gap}};
}

SpectrumReport analyze_spectrum(const ExperimentConfig& cfg, const ZeroShotModel& model, const ExperimentData& data) {
    if (data.test.empty()) throw ProtocolError("evaluation set is empty");
    const InferenceConfig& inf = cfg.inference;
    inf.validate(model.schedule.T);
    const std::uint64_t eval_seed = substream_seed(cfg.seed, "eval");
    const std::size_t cutoff = cutoff_from_divisor(model.config.length, model.config.cutoff_div);
    std::map<int, CandidateCondition> conds;
    for (const auto& c : data.unseen_classes()) conds.emplace(c.id, candidate_condition(model, c));

    SpectrumReport report;
    report.t_test = inf.t_test;
    const std::size_t L = model.config.length;
    report.ground_truth = {cutoff, 0.0, 0.0, std::vector<double>(L, 0.0), {}};
    report.estimate = report.ground_truth;
    const auto N = static_cast<std::size_t>(inf.num_noise_seeds);
    std::size_t count = 0;
    const auto accumulate = [](BandEnergyReport& acc, const BandEnergyReport& r) {
        acc.low += r.low;
        acc.high += r.high;
        for (std::size_t k = 0; k < acc.per_k.size(); ++k) acc.per_k[k] += r.per_k[k];
    };

    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const Sample& s = data.test[i];
        const CandidateCondition& cond = conds.at(s.class_id);
        const std::uint64_t sample_seed = child_seed(eval_seed, i);
        std::vector<Tensor> z_t, eps, d(N, cond.embedding);
        for (std::size_t n = 0; n < N; ++n) {
            Rng rng(child_seed(sample_seed, n));
            eps.push_back(normal_tensor(s.z0.shape(), rng));
            z_t.push_back(forward_diffuse(s.z0, inf.t_test, eps.back(), model.schedule));
        }
        const std::vector<int> t(N, inf.t_test);
        const std::vector<double> s_hat(N, cond.s_hat);
        Rng gating_rng(substream_seed(sample_seed, "gating"));
        const Tensor zt_batch = stack(z_t);
        const Tensor eps_hat = denoise_batch(model.params, model.config, zt_batch, t, stack(d), s_hat, &gating_rng);
        const BandEnergyReport truth = band_energy(s.z0, cutoff);
        for (std::size_t n = 0; n < N; ++n) {
            const Tensor z0_hat = estimate_z0(unstack(zt_batch, n), unstack(eps_hat, n), inf.t_test, model.schedule);
            const BandEnergyReport est = band_energy(z0_hat, cutoff);
            accumulate(report.ground_truth, truth);
            accumulate(report.estimate, est);
            report.high_band_gap += std::abs(est.high - truth.high);
            ++count;
        }
    }
    for (BandEnergyReport* r : {&report.ground_truth, &report.estimate}) {
        r->low /= static_cast<double>(count);
        r->high /= static_cast<double>(count);
        for (auto& v : r->per_k) v /= static_cast<double>(count);
        for (std::size_t k = 0; k < L; ++k) r->normalized_frequency.push_back(static_cast<double>(k) / static_cast<double>(L));
    }
    report.high_band_gap /= static_cast<double>(count);
    return report;
}

// ---------------------------------------------------------------------------
// File-level runners
// ---------------------------------------------------------------------------

Checkpoint head_checkpoint(const ExperimentConfig& cfg, const HeadTrainingResult& head) {
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "head"},
                     {"config", to_json(cfg)},
                     {"train_accuracy", head.accuracy},
                     {"final_loss", head.final_loss},
                     {"degenerate_labels", head.degenerate_labels}};
    for (const auto& [name, t] : head.head.params) ckpt.arrays.add(name, t);
    return ckpt;
}

Checkpoint model_checkpoint(const ExperimentConfig& cfg, const TrainedModel& model, const KinematicHead& head) {
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "model"}, {"config", to_json(cfg)}};
    for (const auto& [name, t] : model.params) ckpt.arrays.add(name, t);
    for (const auto& [name, t] : head.params) ckpt.arrays.add(name, t);
    const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps, cfg.beta_schedule);
    ckpt.arrays.add("schedule.beta", Tensor({schedule.beta.size()}, schedule.beta));
    ckpt.arrays.add("schedule.alpha_bar", Tensor({schedule.alpha_bar.size()}, schedule.alpha_bar));
    if (model.fixed_eps) ckpt.arrays.add("train.fixed_eps", *model.fixed_eps);
    return ckpt;
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("config")) throw CheckpointError("checkpoint carries no config");
    return config_from_json(ckpt.metadata.at("config"));
}

ZeroShotModel model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "model") throw CheckpointError("not a model checkpoint");
    const ExperimentConfig cfg = checkpoint_config(ckpt);
    ParameterSet params;
    for (const auto& [name, shape] : denoiser_layout(cfg.denoiser())) {
        if (!ckpt.arrays.contains(name)) throw ShapeError("checkpoint lacks denoiser array '" + name + "'");
        params.add(name, ckpt.arrays.at(name));
    }
    return make_zero_shot_model(cfg, std::move(params), head_from_params(ckpt.arrays));
}

namespace {

// The stored experiment with its eval/inference sections replaced.
ExperimentConfig with_eval(const ExperimentConfig& stored, const std::optional<ExperimentConfig>& override_cfg) {
    ExperimentConfig cfg = stored;
    if (override_cfg) {
        cfg.inference = override_cfg->inference;
        cfg.eval = override_cfg->eval;
    }
    cfg.validate();
    return cfg;
}

} // namespace

HeadTrainingResult run_distill(const ExperimentConfig& cfg, const std::filesystem::path& head_out) {
    const ExperimentData data = prepare_data(cfg);
    HeadTrainingResult head = distill(cfg, data);
    if (head.degenerate_labels) {
        std::fprintf(stderr, "warning: every class carries the same intensity label\n");
    }
    std::fprintf(stderr, "distill: training accuracy %.4f, loss %.6f\n", head.accuracy, head.final_loss);
    save_checkpoint(head_out, head_checkpoint(cfg, head));
    return head;
}

void run_train(const ExperimentConfig& cfg, const std::filesystem::path& head_path,
               const std::filesystem::path& model_out, const std::filesystem::path& metrics_out) {
    const ExperimentData data = prepare_data(cfg);
    const Checkpoint head_ckpt = load_checkpoint(head_path);
    if (head_ckpt.metadata.value("kind", "") != "head") throw CheckpointError(head_path.string() + " is not a head checkpoint");
    const KinematicHead head = head_from_params(head_ckpt.arrays);
    if (head.input_dim != cfg.model.text_dim) {
        throw ShapeError("head expects " + std::to_string(head.input_dim) + "-dim embeddings, config uses " +
                         std::to_string(cfg.model.text_dim));
    }
    std::ofstream metrics(metrics_out);
    if (!metrics) throw ConfigError("cannot write " + metrics_out.string());
    metrics << kMetricsHeader << '\n';
    const TrainedModel model = train_model(cfg, data, head, [&](const MetricsRecord& r) {
        metrics << format_metrics_row(r) << '\n';
    });
    save_checkpoint(model_out, model_checkpoint(cfg, model, head));
}

json run_eval(const std::filesystem::path& model_path, const std::optional<ExperimentConfig>& eval_override) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const ExperimentConfig cfg = with_eval(checkpoint_config(ckpt), eval_override);
    const ZeroShotModel model = model_from_checkpoint(ckpt);
    return to_json(evaluate(cfg, model, prepare_data(cfg)));
}

json run_analyze_spectrum(const std::filesystem::path& model_path, const std::optional<ExperimentConfig>& eval_override) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const ExperimentConfig cfg = with_eval(checkpoint_config(ckpt), eval_override);
    const ZeroShotModel model = model_from_checkpoint(ckpt);
    return to_json(analyze_spectrum(cfg, model, prepare_data(cfg)));
}

std::vector<AblationCell> parse_ablation_matrix(const json& j) {
    std::vector<AblationCell> cells;
    if (j.contains("cells")) {
        for (const auto& c : j.at("cells")) cells.push_back({c.at("name").get<std::string>(), c.value("overrides", json::object())});
    }
    if (j.contains("sweeps")) {
        for (const auto& sweep : j.at("sweeps")) {
            const std::string key = sweep.at("key");
            for (const auto& v : sweep.at("values")) {
                const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
                cells.push_back({key + "=" + text, json{{key, v}}});
            }
        }
    }
    if (cells.empty()) throw ConfigError("ablation matrix defines no cells");
    return cells;
}

ExperimentConfig apply_cell(const ExperimentConfig& base, const AblationCell& cell) {
    json doc = to_json(base);
    for (auto it = cell.overrides.begin(); it != cell.overrides.end(); ++it) {
        const json& v = it.value();
        apply_override(doc, it.key(), v.is_string() ? v.get<std::string>() : v.dump());
    }
    return config_from_json(doc);
}

AblationRow run_cell(const ExperimentConfig& base, const AblationCell& cell) {
    AblationRow row;
    row.name = cell.name;
    try {
        const ExperimentConfig cfg = apply_cell(base, cell);
        row.fingerprint = config_fingerprint(cfg);
        const ExperimentData data = prepare_data(cfg);
        HeadTrainingResult head = distill(cfg, data);
        TrainedModel trained = train_model(cfg, data, head.head);
        const ZeroShotModel model = make_zero_shot_model(cfg, std::move(trained.params), std::move(head.head));
        row.accuracy = evaluate_accuracy(model, data.test, data.unseen_classes(), cfg.inference,
                                         substream_seed(cfg.seed, "eval"))
                           .accuracy;
        row.ok = true;
    } catch (const std::exception& ex) {
        row.ok = false;
        row.error = ex.what();
    }
    return row;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationCell>& cells,
                                      const std::filesystem::path& csv_out) {
    std::ofstream csv(csv_out);
    if (!csv) throw ConfigError("cannot write " + csv_out.string());
    csv << "cell,fingerprint,accuracy,status,error\n";
    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        AblationRow row = run_cell(base, cell);
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.6f", row.accuracy);
        csv << csv_field(row.name) << ',' << row.fingerprint << ',' << (row.ok ? acc : "") << ','
            << (row.ok ? "ok" : "failed") << ',' << csv_field(row.error) << '\n';
        csv.flush();
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace fdsm
