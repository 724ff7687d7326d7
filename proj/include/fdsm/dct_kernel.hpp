#pragma once

#include "fdsm/tensor.hpp"

#include <cstddef>

namespace fdsm {

/// Orthonormal DCT-II matrix D with D[k][l] = beta_k cos(pi (2l+1) k / 2L),
/// beta_0 = sqrt(1/L), beta_k = sqrt(2/L). The inverse transform is D^T.
Tensor dct_matrix(std::size_t length);

/// Forward transform along `axis`, treating the tensor as [outer, L, inner].
Tensor dct_along(const Tensor& x, std::size_t axis);
/// Inverse (DCT-III) transform along `axis`.
Tensor idct_along(const Tensor& spectrum, std::size_t axis);

/// IDCT(DCT(x) * m) along `axis`. `multipliers` has shape [G, L]; the outer
/// index o uses row o / (outer / G), so G = 1 shares one row across everything
/// and G = dim(0) gives one row per leading-axis entry. Rows equal to all ones
/// are copied through untouched.
Tensor spectral_scale_along(const Tensor& x, std::size_t axis, const Tensor& multipliers);

} // namespace fdsm
