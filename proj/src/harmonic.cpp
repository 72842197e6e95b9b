#include "scanweave/harmonic.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "scanweave/error.hpp"

namespace scanweave::recon {

HarmonicBackend parse_backend(std::string_view name) {
  if (name == "cg") return HarmonicBackend::kConjugateGradient;
  if (name == "jacobi") return HarmonicBackend::kJacobi;
  if (name == "gauss-seidel" || name == "gs") return HarmonicBackend::kGaussSeidel;
  throw ParameterError("unknown harmonic backend: " + std::string(name));
}

namespace {

struct Grid {
  int w;
  int h;

  template <typename F>
  void neighbours(std::size_t p, F&& f) const {
    const int r = static_cast<int>(p / static_cast<std::size_t>(w));
    const int c = static_cast<int>(p % static_cast<std::size_t>(w));
    if (r > 0) f(p - w);
    if (r + 1 < h) f(p + w);
    if (c > 0) f(p - 1);
    if (c + 1 < w) f(p + 1);
  }
  int degree(std::size_t p) const {
    int d = 0;
    neighbours(p, [&](std::size_t) { ++d; });
    return d;
  }
};

// (deg x_p - sum of neighbours) at every unsampled p, in max norm
double residual_max(const Grid& g, const std::vector<double>& x, const SamplingMask& mask) {
  double worst = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) {
    if (mask[p]) continue;
    double s = 0.0;
    int d = 0;
    g.neighbours(p, [&](std::size_t q) {
      s += x[q];
      ++d;
    });
    worst = std::max(worst, std::abs(d * x[p] - s));
  }
  return worst;
}

void solve_cg(const Grid& g, std::vector<double>& x, const SamplingMask& mask, const HarmonicOptions& opt,
              ChannelResult& out) {
  const std::size_t n = x.size();
  // Unknowns are the unsampled pixels; sampled neighbours move to the right-hand side.
  std::vector<double> r(n, 0.0), p(n, 0.0), ap(n, 0.0);
  auto apply = [&](const std::vector<double>& v, std::vector<double>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) {
        y[i] = 0.0;
        continue;
      }
      double s = 0.0;
      int d = 0;
      g.neighbours(i, [&](std::size_t q) {
        ++d;
        if (!mask[q]) s += v[q];
      });
      y[i] = d * v[i] - s;
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) continue;
    double s = 0.0;
    int d = 0;
    g.neighbours(i, [&](std::size_t q) {
      s += x[q];
      ++d;
    });
    r[i] = s - d * x[i];  // b - A x with the known values folded in
  }
  p = r;
  double rr = 0.0;
  for (double v : r) rr += v * v;
  auto max_abs = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
  };
  out.residual = max_abs(r);
  while (out.residual > opt.tolerance && out.iterations < opt.max_iterations) {
    apply(p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (pap <= 0.0) break;
    const double alpha = rr / pap;
    double rr_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rr_new += r[i] * r[i];
    }
    ++out.iterations;
    // recompute the true residual now and then to avoid drift
    if (out.iterations % 50 == 0) {
      out.residual = residual_max(g, x, mask);
    } else {
      out.residual = max_abs(r);
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  out.residual = residual_max(g, x, mask);
}

void solve_relaxation(const Grid& g, std::vector<double>& x, const SamplingMask& mask, const HarmonicOptions& opt,
                      ChannelResult& out) {
  const bool jacobi = opt.backend == HarmonicBackend::kJacobi;
  std::vector<double> next = x;
  out.residual = residual_max(g, x, mask);
  while (out.residual > opt.tolerance && out.iterations < opt.max_iterations) {
    std::vector<double>& target = jacobi ? next : x;
    for (std::size_t p = 0; p < x.size(); ++p) {
      if (mask[p]) continue;
      double s = 0.0;
      int d = 0;
      g.neighbours(p, [&](std::size_t q) {
        s += x[q];
        ++d;
      });
      target[p] = s / d;
    }
    if (jacobi) x.swap(next);
    ++out.iterations;
    if (out.iterations % 10 == 0 || out.iterations == opt.max_iterations) out.residual = residual_max(g, x, mask);
  }
  out.residual = residual_max(g, x, mask);
}

}  // namespace

double laplace_residual(std::span<const double> image, const SamplingMask& mask) {
  if (image.size() != mask.pixels()) throw DimensionError("laplace_residual: image and mask differ in size");
  return residual_max(Grid{mask.width(), mask.height()}, std::vector<double>(image.begin(), image.end()), mask);
}

ChannelResult harmonic_inpaint_channel(std::span<const double> image, const SamplingMask& mask,
                                       const HarmonicOptions& options) {
  if (image.size() != mask.pixels()) throw DimensionError("harmonic_inpaint_channel: image and mask differ in size");
  if (mask.count() == 0) throw DegenerateInputError("harmonic_inpaint_channel: no sampled pixels");
  HarmonicOptions opt = options;
  if (opt.max_iterations <= 0) opt.max_iterations = static_cast<int>(10 * mask.pixels());
  const Grid g{mask.width(), mask.height()};

  double mean = 0.0;
  for (std::size_t p = 0; p < image.size(); ++p) {
    if (mask[p]) mean += image[p];
  }
  mean /= static_cast<double>(mask.count());
  ChannelResult out;
  out.image.resize(image.size());
  for (std::size_t p = 0; p < image.size(); ++p) out.image[p] = mask[p] ? image[p] : mean;

  if (opt.backend == HarmonicBackend::kConjugateGradient) {
    solve_cg(g, out.image, mask, opt, out);
  } else {
    solve_relaxation(g, out.image, mask, opt, out);
  }
  out.converged = out.residual <= opt.tolerance;
  return out;
}

CubeResult harmonic_inpaint_cube(const Matrix& sampled, const SamplingMask& mask, const HarmonicOptions& options,
                                 int threads) {
  const SelectionOperator sel(mask);
  if (static_cast<std::size_t>(sampled.cols()) != sel.kept()) {
    throw DimensionError("harmonic_inpaint_cube: " + std::to_string(sampled.cols()) + " columns for " +
                         std::to_string(sel.kept()) + " sampled pixels");
  }
  const int bands = static_cast<int>(sampled.rows());
  const Matrix full = embed(sampled, sel);
  std::vector<ChannelResult> results(static_cast<std::size_t>(bands));
  auto work = [&](int band) {
    std::vector<double> img(mask.pixels());
    for (std::size_t p = 0; p < img.size(); ++p) img[p] = full(band, static_cast<Eigen::Index>(p));
    results[static_cast<std::size_t>(band)] = harmonic_inpaint_channel(img, mask, options);
  };
  const int nthreads = std::clamp(threads, 1, std::max(1, bands));
  if (nthreads == 1) {
    for (int b = 0; b < bands; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&, t] {
        for (int b = t; b < bands; b += nthreads) work(b);
      });
    }
    for (auto& th : pool) th.join();
  }
  CubeResult out{SpectralCube(mask.width(), mask.height(), bands), true, 0, 0.0};
  for (int b = 0; b < bands; ++b) {
    const auto& r = results[static_cast<std::size_t>(b)];
    for (std::size_t p = 0; p < r.image.size(); ++p) out.cube.matrix()(b, static_cast<Eigen::Index>(p)) = r.image[p];
    out.converged = out.converged && r.converged;
    out.max_iterations = std::max(out.max_iterations, r.iterations);
    out.max_residual = std::max(out.max_residual, r.residual);
  }
  return out;
}

}  // namespace scanweave::recon
