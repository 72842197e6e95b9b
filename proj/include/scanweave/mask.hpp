#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "scanweave/core.hpp"

namespace scanweave::mask {

enum class Binarizer { kBernoulli, kTopK };

Binarizer parse_binarizer(std::string_view name);
std::string_view to_string(Binarizer b);

/// Water-filled mean adjustment with the bookkeeping needed for its Jacobian.
///
/// Entries of `clamped` are 1 where the output was pinned at 1. For the free
/// entries the output is `scale * raw`; `free_sum` is the sum of raw free
/// entries, so scale = (c * N - clamped_count) / free_sum.
struct MeanAdjustResult {
  ProbMap map;
  std::vector<std::uint8_t> clamped;
  double scale = 1.0;
  double free_sum = 0.0;
  int passes = 0;
};

/// Rescales `raw` so its mean equals `c` while staying inside [0,1].
///
/// Pure scaling by c / mean(raw) when nothing exceeds 1. Otherwise entries that
/// would exceed 1 are pinned at 1 and the remainder is rescaled to restore the
/// mean, repeated until no new entry is pinned. Every non-final pass pins at
/// least one entry, so at most N + 1 passes are made.
///
/// Throws ParameterError unless 0 < c < 1 and raw is in [0,1]; throws
/// DegenerateInputError when mean(raw) == 0 or the budget cannot be met.
MeanAdjustResult mean_adjust_detailed(std::span<const double> raw, int width, int height, double c);
ProbMap mean_adjust(const ProbMap& raw, double c);

/// Independent Bernoulli draw per pixel; pixel p uses counter stream p.
SamplingMask binarize_bernoulli(const ProbMap& probabilities, std::uint64_t seed);

/// Exactly round(c * N) ones at the largest probabilities; ties go to the
/// lower row-major index.
SamplingMask binarize_topk(const ProbMap& probabilities);

SamplingMask binarize(const ProbMap& probabilities, Binarizer binarizer, std::uint64_t seed);

/// i.i.d. Bernoulli(c) mask, bitwise equal to binarize_bernoulli of a constant map.
SamplingMask random_mask(int width, int height, double c, std::uint64_t seed);

/// Channel-summed Sobel magnitude, replicated border, height x width row-major.
std::vector<double> gradient_saliency(const SpectralCube& guide);

/// Saliency blended half-and-half with a uniform map, then mean adjusted.
ProbMap gradient_adaptive_probabilities(const SpectralCube& guide, double c);

SamplingMask gradient_adaptive_mask(const SpectralCube& guide, double c, std::uint64_t seed,
                                    Binarizer binarizer);

}  // namespace scanweave::mask
