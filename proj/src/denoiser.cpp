#include "fdsm/denoiser.hpp"

#include "fdsm/errors.hpp"
#include "fdsm/spectral.hpp"

#include <cmath>

namespace fdsm {

GatingMode gating_mode_from_string(const std::string& name) {
    if (name == "predicted") return GatingMode::Predicted;
    if (name == "none") return GatingMode::None;
    if (name == "uniform") return GatingMode::Uniform;
    if (name == "random") return GatingMode::Random;
    throw ConfigError("unknown gating mode '" + name + "'");
}

std::string to_string(GatingMode mode) {
    switch (mode) {
    case GatingMode::Predicted: return "predicted";
    case GatingMode::None: return "none";
    case GatingMode::Uniform: return "uniform";
    case GatingMode::Random: return "random";
    }
    return "predicted";
}

void DenoiserConfig::validate() const {
    if (depth < 1) throw ConfigError("denoiser depth must be >= 1");
    if (heads < 1 || model_dim % heads != 0) {
        throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (model_dim % 2 != 0) throw ConfigError("model_dim must be even");
    if (channels == 0 || length == 0 || joints == 0 || text_dim < 2 || mlp_ratio == 0) {
        throw ConfigError("denoiser dimensions must be positive");
    }
    if (cutoff_div == 0) throw ConfigError("cutoff divisor must be positive");
}

Tensor timestep_embedding(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) {
        throw ConfigError("timestep embedding dimension must be even, got " + std::to_string(dim));
    }
    Tensor out({dim});
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out[2 * i] = std::sin(t * freq);
        out[2 * i + 1] = std::cos(t * freq);
    }
    return out;
}

std::vector<std::pair<std::string, Shape>> denoiser_layout(const DenoiserConfig& c) {
    c.validate();
    const std::size_t F = c.token_features();
    const std::size_t D = c.model_dim;
    const std::size_t H = c.mlp_ratio * D;
    std::vector<std::pair<std::string, Shape>> layout = {
        {"in.w", {F, D}},           {"in.b", {D}},
        {"cond.text.w", {c.text_dim, D}}, {"cond.text.b", {D}},
        {"cond.fc1.w", {D, D}},     {"cond.fc1.b", {D}},
        {"cond.fc2.w", {D, D}},     {"cond.fc2.b", {D}},
    };
    for (std::size_t i = 0; i < c.depth; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        for (const char* mod : {"attn_mod", "mlp_mod"}) {
            for (const char* part : {".scale", ".shift"}) {
                layout.push_back({p + mod + part + ".w", {D, D}});
                layout.push_back({p + mod + part + ".b", {D}});
            }
        }
        layout.push_back({p + "attn.q.w", {D, D}});
        layout.push_back({p + "attn.k.w", {D, D}});
        layout.push_back({p + "attn.v.w", {D, D}});
        layout.push_back({p + "attn.o.w", {D, D}});
        layout.push_back({p + "attn.o.b", {D}});
        layout.push_back({p + "mlp.fc1.w", {D, H}});
        layout.push_back({p + "mlp.fc1.b", {H}});
        layout.push_back({p + "mlp.fc2.w", {H, D}});
        layout.push_back({p + "mlp.fc2.b", {D}});
    }
    layout.push_back({"out.w", {D, F}});
    layout.push_back({"out.b", {F}});
    return layout;
}

ParameterSet init_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet params;
    for (auto& [name, shape] : denoiser_layout(config)) {
        const bool is_bias = name.ends_with(".b");
        const bool is_output = name.starts_with("out.");
        if (is_bias || is_output) {
            params.add(name, Tensor(shape));
        } else {
            params.add(name, normal_tensor(shape, rng, 0.02));
        }
    }
    return params;
}

void check_denoiser_params(const ParameterSet& params, const DenoiserConfig& config) {
    for (const auto& [name, shape] : denoiser_layout(config)) {
        if (!params.contains(name)) throw ShapeError("denoiser parameter '" + name + "' missing");
        if (params.at(name).shape() != shape) {
            throw ShapeError("denoiser parameter '" + name + "' has shape " +
                             shape_to_string(params.at(name).shape()) + ", config expects " +
                             shape_to_string(shape));
        }
    }
}

std::vector<double> resolve_gating(const DenoiserConfig& config, std::span<const double> s_hat,
                                   Rng* gating_rng) {
    std::vector<double> s(s_hat.size(), 0.0);
    if (!config.use_srm) return s;
    for (std::size_t b = 0; b < s.size(); ++b) {
        switch (config.gating) {
        case GatingMode::Predicted:
            if (!(s_hat[b] >= 0.0 && s_hat[b] <= 1.0)) {
                throw ConfigError("intensity score outside [0, 1]");
            }
            s[b] = s_hat[b];
            break;
        case GatingMode::None: s[b] = 0.0; break;
        case GatingMode::Uniform: s[b] = 1.0; break;
        case GatingMode::Random:
            if (gating_rng == nullptr) throw ConfigError("random gating needs an rng stream");
            s[b] = uniform01(*gating_rng);
            break;
        }
    }
    return s;
}

namespace {

ad::Var affine(const ad::VarMap& p, const std::string& prefix, ad::Var x) {
    return ad::add_bias(ad::linear(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

// h * (1 + scale(c)) + shift(c), with c [B, D] broadcast over the L tokens.
ad::Var modulate(const ad::VarMap& p, const std::string& prefix, ad::Var h, ad::Var c) {
    const std::size_t L = h.shape()[1];
    ad::Var scale = ad::broadcast_axis(affine(p, prefix + ".scale", c), 1, L);
    ad::Var shift = ad::broadcast_axis(affine(p, prefix + ".shift", c), 1, L);
    return ad::add(ad::mul(h, ad::add_scalar(scale, 1.0)), shift);
}

ad::Var split_heads(ad::Var x, std::size_t B, std::size_t L, std::size_t heads) {
    const std::size_t dh = x.shape()[2] / heads;
    if (heads == 1) return x;
    ad::Var y = ad::permute(ad::reshape(x, {B, L, heads, dh}), {0, 2, 1, 3});
    return ad::reshape(y, {B * heads, L, dh});
}

ad::Var merge_heads(ad::Var x, std::size_t B, std::size_t L, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t dh = x.shape()[2];
    ad::Var y = ad::permute(ad::reshape(x, {B, heads, L, dh}), {0, 2, 1, 3});
    return ad::reshape(y, {B, L, heads * dh});
}

ad::Var self_attention(const ad::VarMap& p, const std::string& prefix, ad::Var h,
                       std::size_t heads) {
    const std::size_t B = h.shape()[0];
    const std::size_t L = h.shape()[1];
    const std::size_t D = h.shape()[2];
    ad::Var q = split_heads(ad::linear(h, p[prefix + ".q.w"]), B, L, heads);
    ad::Var k = split_heads(ad::linear(h, p[prefix + ".k.w"]), B, L, heads);
    ad::Var v = split_heads(ad::linear(h, p[prefix + ".v.w"]), B, L, heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(D / heads));
    ad::Var weights = ad::softmax_last(ad::scale(ad::bmm(q, ad::transpose_last2(k)), inv_sqrt_dh));
    ad::Var mixed = merge_heads(ad::bmm(weights, v), B, L, heads);
    return affine(p, prefix + ".o", mixed);
}

} // namespace

ad::Var denoise_forward(const ad::VarMap& p, const DenoiserConfig& cfg, ad::Var z_t,
                        std::span<const int> t, ad::Var d, std::span<const double> s_eff,
                        DenoiseTrace* trace) {
    const Shape& zs = z_t.shape();
    if (zs.size() != 4 || zs[1] != cfg.channels || zs[3] != cfg.joints) {
        throw ShapeError("denoiser expects [B, " + std::to_string(cfg.channels) + ", L, " +
                         std::to_string(cfg.joints) + "], got " + shape_to_string(zs));
    }
    const std::size_t B = zs[0], C = zs[1], L = zs[2], V = zs[3];
    const std::size_t D = cfg.model_dim;
    if (t.size() != B || s_eff.size() != B) {
        throw ShapeError("denoiser: per-sample timesteps/gains do not match batch of " +
                         std::to_string(B));
    }
    if (d.shape() != Shape{B, cfg.text_dim}) {
        throw ShapeError("denoiser: text embedding must be [" + std::to_string(B) + ", " +
                         std::to_string(cfg.text_dim) + "], got " + shape_to_string(d.shape()));
    }
    ad::Tape& tape = z_t.tape();

    // Temporal tokens carrying C*V features each.
    ad::Var x = ad::reshape(ad::permute(z_t, {0, 2, 1, 3}), {B, L, C * V});
    ad::Var h = affine(p, "in", x);

    Tensor pos({B, L, D});
    for (std::size_t l = 0; l < L; ++l) {
        const Tensor pe = timestep_embedding(static_cast<double>(l), D);
        for (std::size_t b = 0; b < B; ++b)
            std::copy(pe.data().begin(), pe.data().end(), pos.data().begin() + static_cast<std::ptrdiff_t>((b * L + l) * D));
    }
    h = ad::add(h, tape.constant(std::move(pos)));

    Tensor temb({B, D});
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor e = timestep_embedding(static_cast<double>(t[b]), D);
        std::copy(e.data().begin(), e.data().end(), temb.data().begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    ad::Var c = ad::add(tape.constant(std::move(temb)), affine(p, "cond.text", d));
    c = affine(p, "cond.fc2", ad::gelu(affine(p, "cond.fc1", c)));

    const std::size_t cutoff = cutoff_from_divisor(L, cfg.cutoff_div);
    Tensor multipliers({B, L}, 1.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = cutoff; k < L; ++k) multipliers[b * L + k] = 1.0 + cfg.alpha * s_eff[b];

    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        ad::Var attn = self_attention(p, prefix + "attn", modulate(p, prefix + "attn_mod", h, c), cfg.heads);
        h = ad::add(h, ad::spectral_scale(attn, 1, multipliers));
        if (trace) ++trace->srm_applications;
        ad::Var hm = modulate(p, prefix + "mlp_mod", h, c);
        ad::Var mlp = affine(p, prefix + "mlp.fc2", ad::gelu(affine(p, prefix + "mlp.fc1", hm)));
        h = ad::add(h, mlp);
    }

    ad::Var out = affine(p, "out", h);
    return ad::permute(ad::reshape(out, {B, L, C, V}), {0, 2, 1, 3});
}

Tensor denoise_batch(const ParameterSet& params, const DenoiserConfig& config, const Tensor& z_t,
                     std::span<const int> t, const Tensor& d, std::span<const double> s_hat,
                     Rng* gating_rng) {
    const std::vector<double> s_eff = resolve_gating(config, s_hat, gating_rng);
    ad::Tape tape(false);
    const ad::VarMap vars = ad::bind(tape, params, false);
    return denoise_forward(vars, config, tape.constant(z_t), t, tape.constant(d), s_eff).value();
}

Tensor denoise(const ParameterSet& params, const DenoiserConfig& config, const Tensor& z_t, int t,
               const Tensor& d, double s_hat, Rng* gating_rng) {
    if (z_t.rank() != 3) throw ShapeError("denoise expects a [C, L, V] latent");
    Shape batched = z_t.shape();
    batched.insert(batched.begin(), 1);
    const int ts[] = {t};
    const double ss[] = {s_hat};
    const Tensor out = denoise_batch(params, config, z_t.reshaped(batched), ts,
                                     d.reshaped({1, d.size()}), ss, gating_rng);
    return out.reshaped(z_t.shape());
}

} // namespace fdsm
