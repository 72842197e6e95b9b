#pragma once

// Synthetic XRF-like phantoms with a known mixing model, and the simulated
// raster scan under a sampling mask.
//
// Every pixel carries a fixed share of a zero-spectrum "ground" endmember.
// Hidden shapes take that share over with a spectrum that has no colour, so
// the RGB render does not change when hidden shapes are added.

#include <cstdint>
#include <string>
#include <vector>

#include "scanweave/core.hpp"

namespace scanweave::pipeline {

struct PhantomSpec {
  std::string name = "phantom";
  int width = 48;
  int height = 48;
  int bands = 8;
  int endmembers = 4;          ///< visible endmembers, ground excluded
  int shapes = 5;              ///< rectangles, disks and sinusoidal blends
  bool sinusoids = true;       ///< allow sinusoidal blends among the shapes
  int hidden_disks = 0;
  double hidden_radius = 9.0;  ///< pixels
  double ground_share = 0.25;
  double noise_sigma = 0.02;   ///< applied by scan_simulate
  std::uint64_t seed = 1;
};

struct Phantom {
  std::string name;
  SpectralCube truth;      ///< Y = D_v A_v + D_nv A_nv
  SpectralCube rgb;        ///< I = D_rgb A_v
  Matrix visible;          ///< D_v A_v
  Matrix nonvisible;       ///< D_nv A_nv
  Dictionary d_v;          ///< B x (endmembers + 1), last column is the ground
  Dictionary d_nv;         ///< B x 1
  Dictionary d_rgb;        ///< 3 x (endmembers + 1)
  Abundance a_v;
  Abundance a_nv;
  std::vector<std::uint8_t> hidden_support;  ///< 1 inside any hidden disk
  double noise_sigma = 0.0;
  std::string manifest;
};

/// Throws ParameterError on fewer than 2 endmembers or impossible geometry.
Phantom phantom_gen(const PhantomSpec& spec);

/// {visible, hidden-disk}: the same scene without and with one hidden disk.
std::vector<PhantomSpec> default_suite(std::uint64_t seed = 1);

struct ScanResult {
  Matrix sampled;               ///< B x N_s
  SelectionOperator selection;
  double speedup = 1.0;         ///< N_h / N_s
};

/// Measures the selected pixels of `truth` with additive Gaussian noise,
/// clipped to [0,1]. Noise is drawn per (pixel, band) from counter streams.
/// Throws DegenerateInputError on an empty mask.
ScanResult scan_simulate(const SpectralCube& truth, const SamplingMask& mask, double sigma, std::uint64_t seed);

}  // namespace scanweave::pipeline
