#include "scanweave/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "scanweave/error.hpp"
#include "scanweave/rng.hpp"

namespace scanweave::pipeline {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr std::array<std::array<double, 3>, 8> kPalette{{{0.85, 0.20, 0.15},
                                                          {0.15, 0.60, 0.25},
                                                          {0.20, 0.30, 0.85},
                                                          {0.90, 0.80, 0.20},
                                                          {0.20, 0.80, 0.80},
                                                          {0.80, 0.25, 0.75},
                                                          {0.95, 0.55, 0.15},
                                                          {0.45, 0.30, 0.20}}};

Vector peak_spectrum(int bands, std::span<const double> centres, CounterRng& rng) {
  Vector s = Vector::Constant(bands, 0.04);
  for (double c : centres) {
    const double amp = rng.uniform(0.6, 0.95);
    const double width = rng.uniform(0.6, 1.1);
    for (int k = 0; k < bands; ++k) s(k) += amp * std::exp(-0.5 * (k - c) * (k - c) / (width * width));
  }
  return s.cwiseMin(1.0);
}

}  // namespace

Phantom phantom_gen(const PhantomSpec& spec) {
  if (spec.endmembers < 2) throw ParameterError("phantom: need at least 2 endmembers");
  if (spec.endmembers > static_cast<int>(kPalette.size())) throw ParameterError("phantom: too many endmembers");
  if (spec.width < 8 || spec.height < 8 || spec.bands < 1) throw ParameterError("phantom: image too small");
  if (spec.shapes < 0 || spec.hidden_disks < 0) throw ParameterError("phantom: negative shape count");
  if (!(spec.ground_share >= 0.0 && spec.ground_share < 1.0)) throw ParameterError("phantom: ground share outside [0,1)");
  if (spec.hidden_disks > 0 &&
      (spec.hidden_radius < 1.0 || 2.0 * spec.hidden_radius + 1.0 > std::min(spec.width, spec.height))) {
    throw ParameterError("phantom: hidden disk does not fit inside the image");
  }
  if (spec.hidden_disks > 0 && spec.ground_share <= 0.0) {
    throw ParameterError("phantom: hidden shapes need a nonzero ground share");
  }
  if (spec.noise_sigma < 0.0) throw ParameterError("phantom: negative noise");

  const int w = spec.width;
  const int h = spec.height;
  const int e = spec.endmembers;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  CounterRng rng(spec.seed, 0x5048414E);  // "PHAN"

  Phantom ph;
  ph.name = spec.name;
  ph.noise_sigma = spec.noise_sigma;
  ph.d_v = Matrix::Zero(spec.bands, e + 1);
  ph.d_rgb = Matrix::Zero(3, e + 1);
  for (int k = 0; k < e; ++k) {
    const double centre = (k + 0.5) * spec.bands / e + rng.uniform(-0.3, 0.3);
    const std::array<double, 1> c{centre};
    ph.d_v.col(k) = peak_spectrum(spec.bands, c, rng);
  }
  std::array<std::size_t, kPalette.size()> colours{};
  for (std::size_t i = 0; i < colours.size(); ++i) colours[i] = i;
  for (std::size_t i = colours.size(); i > 1; --i) std::swap(colours[i - 1], colours[rng.below(i)]);
  for (int k = 0; k < e; ++k) {
    const auto& col = kPalette[colours[static_cast<std::size_t>(k)]];
    ph.d_rgb.col(k) << col[0], col[1], col[2];
  }

  // Visible mixture weights, one simplex vector per pixel over the endmembers.
  Matrix weights = Matrix::Zero(e, static_cast<Eigen::Index>(n));
  weights.row(0).setOnes();
  std::ostringstream manifest;
  manifest << "name " << spec.name << "\nsize " << w << 'x' << h << 'x' << spec.bands << "\nseed " << spec.seed
           << "\nendmembers " << e << " + ground share " << spec.ground_share << '\n';
  for (int s = 0; s < spec.shapes; ++s) {
    const int k = 1 + s % (e - 1);
    const int other = (k + 1) % e;
    const auto draw = rng.below(3);
    const auto kind = spec.sinusoids ? draw : draw % 2;
    const double r0 = rng.uniform(0.0, 0.6 * h), c0 = rng.uniform(0.0, 0.6 * w);
    const double r1 = r0 + rng.uniform(0.25 * h, 0.4 * h), c1 = c0 + rng.uniform(0.25 * w, 0.4 * w);
    const double cr = rng.uniform(0.2 * h, 0.8 * h), cc = rng.uniform(0.2 * w, 0.8 * w);
    const double rad = rng.uniform(0.1, 0.22) * std::min(w, h);
    const double fr = rng.uniform(0.02, 0.08), fc = rng.uniform(0.02, 0.08);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const auto p = static_cast<Eigen::Index>(i * w + j);
        Vector v = Vector::Zero(e);
        if (kind == 0) {
          if (!(i >= r0 && i < r1 && j >= c0 && j < c1)) continue;
          v(k) = 1.0;
        } else if (kind == 1) {
          if ((i - cr) * (i - cr) + (j - cc) * (j - cc) > rad * rad) continue;
          v(k) = 1.0;
        } else {
          if (!(i >= r0 && i < r1 && j >= c0 && j < c1)) continue;
          const double t = 0.5 + 0.5 * std::sin(2.0 * kPi * (fr * i + fc * j));
          v(k) = t;
          v(other) += 1.0 - t;
        }
        weights.col(p) = v;
      }
    }
    static constexpr const char* kNames[] = {"rectangle", "disk", "sinusoid"};
    manifest << "shape " << kNames[kind] << " endmember " << k << '\n';
  }

  ph.a_v = Matrix::Zero(e + 1, static_cast<Eigen::Index>(n));
  ph.a_v.topRows(e) = (1.0 - spec.ground_share) * weights;
  ph.a_v.row(e).setConstant(spec.ground_share);

  // Hidden layer: its own stream so visible content is independent of it.
  CounterRng hidden_rng(spec.seed, 0x48494444);  // "HIDD"
  ph.d_nv = Matrix::Zero(spec.bands, 1);
  {
    const std::array<double, 2> c{hidden_rng.uniform(0.0, spec.bands - 1.0), hidden_rng.uniform(0.0, spec.bands - 1.0)};
    ph.d_nv.col(0) = peak_spectrum(spec.bands, c, hidden_rng);
  }
  ph.a_nv = Matrix::Zero(1, static_cast<Eigen::Index>(n));
  ph.hidden_support.assign(n, 0);
  for (int d = 0; d < spec.hidden_disks; ++d) {
    const double r = spec.hidden_radius;
    const double cr = hidden_rng.uniform(r, h - 1 - r);
    const double cc = hidden_rng.uniform(r, w - 1 - r);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        if ((i - cr) * (i - cr) + (j - cc) * (j - cc) > r * r) continue;
        const auto p = static_cast<std::size_t>(i * w + j);
        ph.hidden_support[p] = 1;
        ph.a_nv(0, static_cast<Eigen::Index>(p)) = spec.ground_share;
        ph.a_v(e, static_cast<Eigen::Index>(p)) = 0.0;
      }
    }
    manifest << "hidden disk centre " << cr << ',' << cc << " radius " << r << '\n';
  }

  ph.visible = ph.d_v * ph.a_v;
  ph.nonvisible = ph.d_nv * ph.a_nv;
  ph.truth = SpectralCube(w, h, Matrix(ph.visible + ph.nonvisible));
  ph.rgb = SpectralCube(w, h, Matrix(ph.d_rgb * ph.a_v));
  manifest << "noise_sigma " << spec.noise_sigma << '\n';
  ph.manifest = manifest.str();
  return ph;
}

std::vector<PhantomSpec> default_suite(std::uint64_t seed) {
  PhantomSpec visible;
  visible.name = "visible";
  visible.seed = seed;
  PhantomSpec hidden = visible;
  hidden.name = "hidden-disk";
  hidden.hidden_disks = 1;
  return {visible, hidden};
}

ScanResult scan_simulate(const SpectralCube& truth, const SamplingMask& mask, double sigma, std::uint64_t seed) {
  if (mask.width() != truth.width() || mask.height() != truth.height()) {
    throw DimensionError("scan_simulate: mask and cube differ in size");
  }
  if (sigma < 0.0) throw ParameterError("scan_simulate: negative noise");
  ScanResult out;
  out.selection = SelectionOperator(mask);
  if (out.selection.kept() == 0) throw DegenerateInputError("scan_simulate: empty mask");
  out.sampled = subsample(truth, out.selection);
  if (sigma > 0.0) {
    const auto idx = out.selection.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      CounterRng rng(seed, static_cast<std::uint64_t>(idx[k]));
      for (Eigen::Index b = 0; b < out.sampled.rows(); ++b) {
        double& v = out.sampled(b, static_cast<Eigen::Index>(k));
        v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
      }
    }
  }
  out.speedup = static_cast<double>(truth.pixels()) / static_cast<double>(out.selection.kept());
  return out;
}

}  // namespace scanweave::pipeline
