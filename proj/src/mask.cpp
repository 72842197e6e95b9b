#include "scanweave/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scanweave/error.hpp"
#include "scanweave/rng.hpp"

namespace scanweave::mask {

Binarizer parse_binarizer(std::string_view name) {
  if (name == "bernoulli") return Binarizer::kBernoulli;
  if (name == "topk") return Binarizer::kTopK;
  throw ParameterError("unknown binarizer: " + std::string(name));
}

std::string_view to_string(Binarizer b) { return b == Binarizer::kBernoulli ? "bernoulli" : "topk"; }

MeanAdjustResult mean_adjust_detailed(std::span<const double> raw, int width, int height, double c) {
  if (!(c > 0.0 && c < 1.0)) throw ParameterError("mean_adjust: rate must lie in (0,1)");
  const std::size_t n = raw.size();
  if (n == 0 || n != static_cast<std::size_t>(width) * height) {
    throw DimensionError("mean_adjust: map size does not match extent");
  }
  double total = 0.0;
  for (double v : raw) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("mean_adjust: raw values must lie in [0,1]");
    total += v;
  }
  if (total <= 0.0) throw DegenerateInputError("mean_adjust: raw map has zero mean");

  MeanAdjustResult res;
  res.clamped.assign(n, 0);
  const double budget_total = c * static_cast<double>(n);
  std::size_t pinned = 0;
  double free_sum = total;
  double scale = 1.0;
  for (std::size_t pass = 0; pass <= n; ++pass) {
    ++res.passes;
    const double budget = budget_total - static_cast<double>(pinned);
    if (free_sum <= 0.0) throw DegenerateInputError("mean_adjust: budget exceeds the map support");
    scale = budget / free_sum;
    std::size_t newly = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (!res.clamped[p] && scale * raw[p] > 1.0) {
        res.clamped[p] = 1;
        free_sum -= raw[p];
        ++newly;
      }
    }
    if (newly == 0) break;
    pinned += newly;
    // Recompute the free sum exactly to avoid drift from repeated subtraction.
    free_sum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (!res.clamped[p]) free_sum += raw[p];
    }
  }

  res.scale = scale;
  res.free_sum = free_sum;
  res.map.width = width;
  res.map.height = height;
  res.map.target_mean = c;
  res.map.values.resize(n);
  for (std::size_t p = 0; p < n; ++p) res.map.values[p] = res.clamped[p] ? 1.0 : scale * raw[p];
  return res;
}

ProbMap mean_adjust(const ProbMap& raw, double c) {
  return mean_adjust_detailed(raw.values, raw.width, raw.height, c).map;
}

SamplingMask binarize_bernoulli(const ProbMap& probabilities, std::uint64_t seed) {
  std::vector<std::uint8_t> bits(probabilities.pixels());
  for (std::size_t p = 0; p < bits.size(); ++p) {
    bits[p] = to_unit(counter_bits(seed, p, 0)) < probabilities.values[p] ? 1 : 0;
  }
  return SamplingMask(probabilities.width, probabilities.height, std::move(bits), probabilities.target_mean);
}

SamplingMask binarize_topk(const ProbMap& probabilities) {
  const std::size_t n = probabilities.pixels();
  const auto keep = static_cast<std::size_t>(
      std::clamp(std::llround(probabilities.target_mean * static_cast<double>(n)), 0LL, static_cast<long long>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& v = probabilities.values;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t k = 0; k < keep; ++k) bits[order[k]] = 1;
  return SamplingMask(probabilities.width, probabilities.height, std::move(bits), probabilities.target_mean);
}

SamplingMask binarize(const ProbMap& probabilities, Binarizer binarizer, std::uint64_t seed) {
  return binarizer == Binarizer::kBernoulli ? binarize_bernoulli(probabilities, seed)
                                            : binarize_topk(probabilities);
}

SamplingMask random_mask(int width, int height, double c, std::uint64_t seed) {
  if (!(c >= 0.0 && c <= 1.0)) throw ParameterError("random_mask: rate must lie in [0,1]");
  ProbMap uniform{width, height, std::vector<double>(static_cast<std::size_t>(width) * height, c), c};
  return binarize_bernoulli(uniform, seed);
}

std::vector<double> gradient_saliency(const SpectralCube& guide) {
  const int w = guide.width();
  const int h = guide.height();
  std::vector<double> sal(guide.pixels(), 0.0);
  auto px = [&](int band, int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return guide.at(r, c, band);
  };
  for (int band = 0; band < guide.bands(); ++band) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double gx = (px(band, r - 1, c + 1) + 2 * px(band, r, c + 1) + px(band, r + 1, c + 1)) -
                          (px(band, r - 1, c - 1) + 2 * px(band, r, c - 1) + px(band, r + 1, c - 1));
        const double gy = (px(band, r + 1, c - 1) + 2 * px(band, r + 1, c) + px(band, r + 1, c + 1)) -
                          (px(band, r - 1, c - 1) + 2 * px(band, r - 1, c) + px(band, r - 1, c + 1));
        sal[static_cast<std::size_t>(r) * w + c] += std::sqrt(gx * gx + gy * gy);
      }
    }
  }
  return sal;
}

ProbMap gradient_adaptive_probabilities(const SpectralCube& guide, double c) {
  std::vector<double> sal = gradient_saliency(guide);
  const double mean = std::accumulate(sal.begin(), sal.end(), 0.0) / static_cast<double>(sal.size());
  // Saliency normalized to unit mean, blended with a unit uniform map, then
  // scaled into [0,1].
  double peak = 0.0;
  for (double& s : sal) {
    s = mean > 0.0 ? 0.5 * (s / mean) + 0.5 : 1.0;
    peak = std::max(peak, s);
  }
  for (double& s : sal) s /= peak;
  return mean_adjust_detailed(sal, guide.width(), guide.height(), c).map;
}

SamplingMask gradient_adaptive_mask(const SpectralCube& guide, double c, std::uint64_t seed,
                                    Binarizer binarizer) {
  return binarize(gradient_adaptive_probabilities(guide, c), binarizer, seed);
}

}  // namespace scanweave::mask
