#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "vpl/numcore/tensor.hpp"

namespace vpl {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

using Rng = std::mt19937_64;

/// Normal(0, std) resampled until |x| <= 2 std.
double truncated_normal(Rng& rng, double std);
Tensor truncated_normal_tensor(Rng& rng, Shape shape, double std);
Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi);

}  // namespace vpl
