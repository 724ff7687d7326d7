#include "fdsm/synthdata.hpp"

#include "fdsm/dct_kernel.hpp"
#include "fdsm/errors.hpp"
#include "fdsm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fdsm {

BenchmarkMode benchmark_mode_from_string(const std::string& name) {
    if (name == "freq-only") return BenchmarkMode::FreqOnly;
    if (name == "mixed") return BenchmarkMode::Mixed;
    throw ConfigError("unknown benchmark mode '" + name + "'");
}

std::string to_string(BenchmarkMode mode) {
    return mode == BenchmarkMode::FreqOnly ? "freq-only" : "mixed";
}

std::string to_string(Split split) { return split == Split::Seen ? "seen" : "unseen"; }

Split split_from_string(const std::string& name) {
    if (name == "seen") return Split::Seen;
    if (name == "unseen") return Split::Unseen;
    throw ConfigError("unknown split '" + name + "'");
}

void ClassSignature::validate() const {
    if (channels == 0 || length == 0 || joints == 0) throw ConfigError("signature has empty latent dims");
    const auto check = [&](const Component& c) {
        if (c.k >= length || c.channel >= channels || c.joint >= joints) {
            throw ConfigError("signature component outside the latent grid");
        }
        if (!std::isfinite(c.amplitude)) throw ConfigError("signature amplitude is not finite");
    };
    std::for_each(low_band.begin(), low_band.end(), check);
    std::for_each(high_band.begin(), high_band.end(), check);
    if (intensity == 0.0 && !high_band.empty()) {
        throw ConfigError("static class carries high-band components");
    }
    if (!(jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
}

void SynthSpec::validate() const {
    if (num_classes < 2) {
        throw ConfigError("need at least 2 classes, got " + std::to_string(num_classes));
    }
    if (!(seen_fraction > 0.0 && seen_fraction < 1.0)) throw ConfigError("seen_fraction must lie in (0, 1)");
    if (channels == 0 || length < 2 || joints == 0) throw ConfigError("latent dims must be positive");
    if (cutoff() >= length) throw ConfigError("cutoff leaves no high band");
    if (!(high_fraction >= 0.0 && high_fraction <= 1.0)) throw ConfigError("high_fraction outside [0, 1]");
    if (descriptions_per_class == 0) throw ConfigError("descriptions_per_class must be positive");
    if (frequencies_per_class == 0 || frequencies_per_class > length - cutoff()) {
        throw ConfigError("frequencies_per_class must lie in [1, L - M]");
    }
    if (active_joints == 0 || active_joints > joints) throw ConfigError("active_joints must lie in [1, V]");
    if (!(jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
}

std::size_t SynthSpec::cutoff() const { return cutoff_from_divisor(length, cutoff_div); }

namespace {

std::vector<Component> draw_low_band(const SynthSpec& spec, Rng& rng) {
    // Coefficient scale sqrt(L)/2 puts each component at RMS 0.5 per element.
    const double scale = std::sqrt(static_cast<double>(spec.length)) / 2.0;
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<Component> out;
    for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t v = 0; v < spec.joints; ++v)
            for (std::size_t k = 0; k < spec.cutoff(); ++k) out.push_back({k, c, v, normal(rng)});
    return out;
}

std::string class_label(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "action_%02zu", index);
    return buf;
}

} // namespace

std::vector<SynthClass> generate_class_set(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    const std::size_t n = spec.num_classes;
    const std::size_t M = spec.cutoff();

    std::vector<int> intensity(n, 0);
    const auto num_high = static_cast<std::size_t>(std::lround(spec.high_fraction * static_cast<double>(n)));
    std::fill_n(intensity.begin(), num_high, 1);
    std::shuffle(intensity.begin(), intensity.end(), rng);

    const auto num_seen = static_cast<std::size_t>(std::lround(spec.seen_fraction * static_cast<double>(n)));
    if (num_seen == 0 || num_seen >= n) throw ConfigError("seen_fraction leaves an empty split");
    const std::size_t num_unseen = n - num_seen;

    std::vector<std::size_t> high_ids, low_ids;
    for (std::size_t i = 0; i < n; ++i) (intensity[i] ? high_ids : low_ids).push_back(i);
    std::size_t unseen_high = static_cast<std::size_t>(std::lround(
        static_cast<double>(num_unseen) * static_cast<double>(high_ids.size()) / static_cast<double>(n)));
    if (num_unseen >= 2 && !high_ids.empty() && !low_ids.empty()) {
        unseen_high = std::clamp<std::size_t>(unseen_high, 1, num_unseen - 1);
    }
    unseen_high = std::min(unseen_high, high_ids.size());
    const std::size_t unseen_low = num_unseen - unseen_high;
    if (unseen_low > low_ids.size()) throw ConfigError("cannot stratify the unseen split");

    std::shuffle(high_ids.begin(), high_ids.end(), rng);
    std::shuffle(low_ids.begin(), low_ids.end(), rng);
    std::vector<Split> split(n, Split::Seen);
    for (std::size_t i = 0; i < unseen_high; ++i) split[high_ids[i]] = Split::Unseen;
    for (std::size_t i = 0; i < unseen_low; ++i) split[low_ids[i]] = Split::Unseen;

    const std::vector<Component> shared_low = draw_low_band(spec, rng);

    std::vector<std::size_t> pool;
    const auto deal_frequency = [&]() {
        if (pool.empty()) {
            pool.resize(spec.length - M);
            std::iota(pool.begin(), pool.end(), M);
            std::shuffle(pool.begin(), pool.end(), rng);
        }
        const std::size_t k = pool.back();
        pool.pop_back();
        return k;
    };

    const double scale = std::sqrt(static_cast<double>(spec.length)) / 2.0;
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<SynthClass> classes;
    for (std::size_t i = 0; i < n; ++i) {
        SynthClass cls;
        cls.split = split[i];
        cls.action.id = static_cast<int>(i);
        cls.action.label = class_label(i);
        cls.action.s_gt = intensity[i];
        for (std::size_t j = 0; j < spec.descriptions_per_class; ++j) {
            cls.action.rich_descriptions.push_back(cls.action.label + " description " + std::to_string(j));
        }

        ClassSignature& sig = cls.signature;
        sig.channels = spec.channels;
        sig.length = spec.length;
        sig.joints = spec.joints;
        sig.cutoff = M;
        sig.jitter = spec.jitter;
        sig.intensity = intensity[i];
        sig.low_band = spec.mode == BenchmarkMode::FreqOnly ? shared_low : draw_low_band(spec, rng);
        if (intensity[i]) {
            for (std::size_t f = 0; f < spec.frequencies_per_class; ++f) {
                const std::size_t k = deal_frequency();
                sig.high_frequencies.push_back(k);
                for (std::size_t c = 0; c < spec.channels; ++c)
                    for (std::size_t v = spec.joints - spec.active_joints; v < spec.joints; ++v)
                        sig.high_band.push_back({k, c, v, normal(rng)});
            }
            std::sort(sig.high_frequencies.begin(), sig.high_frequencies.end());
        }
        sig.validate();
        classes.push_back(std::move(cls));
    }
    return classes;
}

Tensor clean_signal(const ClassSignature& sig, std::span<const double> excitation) {
    if (!excitation.empty() && excitation.size() != sig.high_frequencies.size()) {
        throw ShapeError("excitation needs one factor per high-band frequency");
    }
    const Tensor D = dct_matrix(sig.length);
    Tensor z({sig.channels, sig.length, sig.joints});
    const auto add = [&](const Component& comp, double gain) {
        for (std::size_t l = 0; l < sig.length; ++l) {
            z.at(comp.channel, l, comp.joint) += gain * comp.amplitude * D.at(comp.k, l);
        }
    };
    for (const auto& comp : sig.low_band) add(comp, 1.0);
    for (const auto& comp : sig.high_band) {
        double factor = 1.0;
        if (!excitation.empty()) {
            const auto it = std::find(sig.high_frequencies.begin(), sig.high_frequencies.end(), comp.k);
            factor = excitation[static_cast<std::size_t>(it - sig.high_frequencies.begin())];
        }
        add(comp, sig.intensity * factor);
    }
    return z;
}

Sample synth_sample(const SynthClass& cls, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> excitation(cls.signature.high_frequencies.size());
    for (auto& e : excitation) e = normal(rng);
    Sample s{clean_signal(cls.signature, excitation), cls.action.id, cls.split};
    if (cls.signature.jitter > 0.0) {
        std::normal_distribution<double> jitter(0.0, cls.signature.jitter);
        for (auto& x : s.z0.data()) x += jitter(rng);
    }
    return s;
}

std::vector<Sample> synth_samples(std::span<const SynthClass> classes, Split split,
                                  std::size_t per_class, Rng& rng) {
    std::vector<Sample> out;
    for (const auto& cls : classes) {
        if (cls.split != split) continue;
        for (std::size_t i = 0; i < per_class; ++i) out.push_back(synth_sample(cls, rng));
    }
    return out;
}

std::vector<ActionClass> action_classes(std::span<const SynthClass> classes) {
    std::vector<ActionClass> out;
    for (const auto& c : classes) out.push_back(c.action);
    return out;
}

std::vector<ActionClass> action_classes(std::span<const SynthClass> classes, Split split) {
    std::vector<ActionClass> out;
    for (const auto& c : classes)
        if (c.split == split) out.push_back(c.action);
    return out;
}

namespace {

void require_latent(const Tensor& z0, const char* op) {
    if (z0.rank() != 3) {
        throw ShapeError(std::string(op) + " expects a [C, L, V] latent, got " + shape_to_string(z0.shape()));
    }
}

// Frames first, first + stride, ... (count of them) along the temporal axis.
Tensor take_frames(const Tensor& z0, std::size_t first, std::size_t stride, std::size_t count) {
    const std::size_t C = z0.dim(0), V = z0.dim(2);
    Tensor out({C, count, V});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < count; ++l)
            for (std::size_t v = 0; v < V; ++v) out.at(c, l, v) = z0.at(c, first + l * stride, v);
    return out;
}

} // namespace

Tensor crop(const Tensor& z0, std::size_t new_length, Rng* rng) {
    require_latent(z0, "crop");
    const std::size_t L = z0.dim(1);
    if (new_length < 1 || new_length > L) {
        throw ConfigError("crop length " + std::to_string(new_length) + " outside [1, " + std::to_string(L) + "]");
    }
    std::size_t start = 0;
    if (rng != nullptr) start = std::uniform_int_distribution<std::size_t>(0, L - new_length)(*rng);
    return take_frames(z0, start, 1, new_length);
}

Tensor downsample(const Tensor& z0, std::size_t factor) {
    require_latent(z0, "downsample");
    const std::size_t L = z0.dim(1);
    if (factor < 1 || L % factor != 0) {
        throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide L = " +
                          std::to_string(L));
    }
    return take_frames(z0, 0, factor, L / factor);
}

void export_jsonl(const std::filesystem::path& path, std::span<const Sample> samples) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& s : samples) {
        const std::size_t C = s.z0.dim(0), L = s.z0.dim(1), V = s.z0.dim(2);
        nlohmann::json z = nlohmann::json::array();
        for (std::size_t c = 0; c < C; ++c) {
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t l = 0; l < L; ++l) {
                nlohmann::json row = nlohmann::json::array();
                for (std::size_t v = 0; v < V; ++v) row.push_back(s.z0.at(c, l, v));
                rows.push_back(std::move(row));
            }
            z.push_back(std::move(rows));
        }
        out << nlohmann::json{{"class_id", s.class_id}, {"split", to_string(s.split)}, {"z0", z}}.dump()
            << '\n';
    }
}

std::vector<Sample> import_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::vector<Sample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const auto nested = j.at("z0").get<std::vector<std::vector<std::vector<double>>>>();
        const std::size_t C = nested.size();
        const std::size_t L = C ? nested[0].size() : 0;
        const std::size_t V = L ? nested[0][0].size() : 0;
        Tensor z({C, L, V});
        for (std::size_t c = 0; c < C; ++c) {
            if (nested[c].size() != L) throw ShapeError("ragged z0 in " + path.string());
            for (std::size_t l = 0; l < L; ++l) {
                if (nested[c][l].size() != V) throw ShapeError("ragged z0 in " + path.string());
                for (std::size_t v = 0; v < V; ++v) z.at(c, l, v) = nested[c][l][v];
            }
        }
        samples.push_back({std::move(z), j.at("class_id").get<int>(), split_from_string(j.at("split"))});
    }
    return samples;
}

} // namespace fdsm
