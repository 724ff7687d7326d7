#pragma once

#include "fdsm/conditioning.hpp"
#include "fdsm/rng.hpp"
#include "fdsm/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdsm {

enum class BenchmarkMode {
    FreqOnly,  // shared low band, classes differ only above the cutoff
    Mixed,     // per-class low band as well
};

BenchmarkMode benchmark_mode_from_string(const std::string& name);
std::string to_string(BenchmarkMode mode);

enum class Split { Seen, Unseen };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// One cosine component: DCT-II basis vector k on joint v of channel c.
struct Component {
    std::size_t k = 0;
    std::size_t channel = 0;
    std::size_t joint = 0;
    double amplitude = 0.0;  // DCT coefficient
};

struct ClassSignature {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t joints = 0;
    std::size_t cutoff = 0;
    std::vector<Component> low_band;
    std::vector<Component> high_band;
    std::vector<std::size_t> high_frequencies;
    double intensity = 0.0;
    double jitter = 0.0;

    void validate() const;
};

struct SynthSpec {
    std::size_t num_classes = 10;
    double seen_fraction = 0.8;
    BenchmarkMode mode = BenchmarkMode::FreqOnly;
    std::size_t channels = 8;
    std::size_t length = 16;
    std::size_t joints = 5;
    std::size_t cutoff_div = 4;
    double jitter = 0.05;
    double high_fraction = 0.55;
    std::size_t descriptions_per_class = 5;
    std::size_t frequencies_per_class = 2;
    /// Joints carrying high-band motion; the last `active_joints` of V.
    std::size_t active_joints = 2;

    void validate() const;
    std::size_t cutoff() const;
};

struct SynthClass {
    ActionClass action;
    ClassSignature signature;
    Split split = Split::Seen;
};

/// Exactly round(high_fraction * n) classes are dynamic (s_gt = 1). The
/// unseen split is stratified by intensity. High-band frequencies are dealt
/// to dynamic classes without replacement from {M, ..., L - 1}; the pool is
/// reshuffled only once it runs dry.
std::vector<SynthClass> generate_class_set(const SynthSpec& spec, Rng& rng);

struct Sample {
    Tensor z0;  // [C, L, V]
    int class_id = 0;
    Split split = Split::Seen;
};

/// Noise-free latent. `excitation` scales each high-band frequency (in
/// high_frequencies order); empty means 1 for every frequency.
Tensor clean_signal(const ClassSignature& sig, std::span<const double> excitation = {});
/// Draws one N(0, 1) excitation per high-band frequency, then adds N(0, jitter^2) per element.
Sample synth_sample(const SynthClass& cls, Rng& rng);

std::vector<Sample> synth_samples(std::span<const SynthClass> classes, Split split,
                                  std::size_t per_class, Rng& rng);

std::vector<ActionClass> action_classes(std::span<const SynthClass> classes);
std::vector<ActionClass> action_classes(std::span<const SynthClass> classes, Split split);

/// Contiguous window of length new_length. The start is uniform over the
/// valid offsets when `rng` is given and 0 otherwise.
Tensor crop(const Tensor& z0, std::size_t new_length, Rng* rng = nullptr);
/// Every factor-th frame, starting at frame 0.
Tensor downsample(const Tensor& z0, std::size_t factor);

/// JSON lines: {"class_id", "split", "z0": [[[...]]]}.
void export_jsonl(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> import_jsonl(const std::filesystem::path& path);

} // namespace fdsm
