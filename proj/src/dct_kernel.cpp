#include "fdsm/dct_kernel.hpp"

#include "fdsm/errors.hpp"

#include <cmath>
#include <numbers>

namespace fdsm {

namespace {

struct AxisView {
    std::size_t outer = 1;
    std::size_t length = 1;
    std::size_t inner = 1;
};

AxisView view_along(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= x.dim(i);
    v.length = x.dim(axis);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) v.inner *= x.dim(i);
    return v;
}

// out[o,r,i] = sum_c M(r,c) x[o,c,i], with M(r,c) = D[r][c] (forward) or D[c][r] (inverse).
Tensor apply_matrix(const Tensor& x, std::size_t axis, const Tensor& d, bool transpose) {
    const AxisView v = view_along(x, axis);
    const std::size_t L = v.length;
    Tensor out(x.shape());
    const double* src = x.data().data();
    double* dst = out.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const double* xs = src + o * L * v.inner;
        double* ys = dst + o * L * v.inner;
        for (std::size_t r = 0; r < L; ++r) {
            double* yrow = ys + r * v.inner;
            for (std::size_t c = 0; c < L; ++c) {
                const double m = transpose ? d[c * L + r] : d[r * L + c];
                const double* xrow = xs + c * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) yrow[i] += m * xrow[i];
            }
        }
    }
    return out;
}

} // namespace

Tensor dct_matrix(std::size_t length) {
    if (length == 0) throw ShapeError("DCT length must be positive");
    const double L = static_cast<double>(length);
    Tensor d({length, length});
    for (std::size_t k = 0; k < length; ++k) {
        const double beta = k == 0 ? std::sqrt(1.0 / L) : std::sqrt(2.0 / L);
        for (std::size_t l = 0; l < length; ++l) {
            d.at(k, l) = beta * std::cos(std::numbers::pi * (2.0 * static_cast<double>(l) + 1.0) *
                                         static_cast<double>(k) / (2.0 * L));
        }
    }
    return d;
}

Tensor dct_along(const Tensor& x, std::size_t axis) {
    return apply_matrix(x, axis, dct_matrix(view_along(x, axis).length), false);
}

Tensor idct_along(const Tensor& spectrum, std::size_t axis) {
    return apply_matrix(spectrum, axis, dct_matrix(view_along(spectrum, axis).length), true);
}

Tensor spectral_scale_along(const Tensor& x, std::size_t axis, const Tensor& multipliers) {
    const AxisView v = view_along(x, axis);
    if (multipliers.rank() != 2 || multipliers.dim(1) != v.length || multipliers.dim(0) == 0 ||
        v.outer % multipliers.dim(0) != 0) {
        throw ShapeError("spectral multipliers " + shape_to_string(multipliers.shape()) +
                         " incompatible with " + shape_to_string(x.shape()) + " along axis " +
                         std::to_string(axis));
    }
    const std::size_t L = v.length;
    const std::size_t per_group = v.outer / multipliers.dim(0);
    const Tensor d = dct_matrix(L);

    Tensor out(x.shape());
    std::vector<double> spec(L * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        const double* m = multipliers.data().data() + (o / per_group) * L;
        const double* xs = x.data().data() + o * L * v.inner;
        double* ys = out.data().data() + o * L * v.inner;

        bool identity = true;
        for (std::size_t k = 0; k < L; ++k) identity = identity && m[k] == 1.0;
        if (identity) {
            std::copy(xs, xs + L * v.inner, ys);
            continue;
        }

        std::fill(spec.begin(), spec.end(), 0.0);
        for (std::size_t k = 0; k < L; ++k) {
            double* srow = spec.data() + k * v.inner;
            for (std::size_t l = 0; l < L; ++l) {
                const double c = d[k * L + l];
                const double* xrow = xs + l * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) srow[i] += c * xrow[i];
            }
            for (std::size_t i = 0; i < v.inner; ++i) srow[i] *= m[k];
        }
        for (std::size_t l = 0; l < L; ++l) {
            double* yrow = ys + l * v.inner;
            for (std::size_t k = 0; k < L; ++k) {
                const double c = d[k * L + l];
                const double* srow = spec.data() + k * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) yrow[i] += c * srow[i];
            }
        }
    }
    return out;
}

} // namespace fdsm
