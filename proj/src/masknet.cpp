#include "scanweave/masknet.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "scanweave/error.hpp"
#include "scanweave/io.hpp"
#include "scanweave/metrics.hpp"
#include "scanweave/rng.hpp"

namespace scanweave::masknet {

using io::get_f32;
using io::get_u32;
using io::put_f32;
using io::put_u32;

namespace {

constexpr std::uint32_t kParamsVersion = 1;

std::string block_name(int b, const char* part) { return "block" + std::to_string(b) + "." + part; }

// ---- fixed linear operators used by the reconstructors -------------------

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = radius == 0 ? 1.0 : std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Zero-padded separable blur of one plane. The kernel is symmetric, so this
// operator is self-adjoint.
void blur_plane(const double* in, double* out, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < w) s += k[static_cast<std::size_t>(d + r)] * in[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < h) s += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
}

// y = (diag(d) + mu L + ridge) x with L the 4-neighbour Neumann Laplacian.
void harmonic_apply(const double* d, const double* x, double* y, int h, int w, double mu, double ridge) {
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * w + c;
      double lap = 0.0;
      if (r > 0) lap += x[p] - x[p - w];
      if (r + 1 < h) lap += x[p] - x[p + w];
      if (c > 0) lap += x[p] - x[p - 1];
      if (c + 1 < w) lap += x[p] - x[p + 1];
      y[p] = (d[p] + ridge) * x[p] + mu * lap;
    }
  }
}

// Conjugate gradient for the SPD weighted-harmonic system.
void harmonic_solve(const double* d, const double* b, double* x, int h, int w, const ReconstructorConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> r(b, b + n), p(n), ap(n);
  std::fill(x, x + n, 0.0);
  double rr = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < n; ++i) bb += b[i] * b[i];
  rr = bb;
  if (bb == 0.0) return;
  p = r;
  const double stop = cfg.solve_tolerance * cfg.solve_tolerance * bb;
  for (int it = 0; it < cfg.max_solve_iterations && rr > stop; ++it) {
    harmonic_apply(d, p.data(), ap.data(), h, w, cfg.smoothness, cfg.ridge);
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
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
}

void check_recon_shapes(const Shape& zs, const Shape& ds) {
  if (ds.n != zs.n || ds.c != 1 || ds.h != zs.h || ds.w != zs.w) {
    throw DimensionError("frozen_reconstruct: probability map must be {N,1,H,W} matching the image");
  }
}

// Normalized convolution forward; keeps numerator and denominator for backprop.
struct NormConvParts {
  Tensor numerator;    // {N, C, H, W}
  Tensor denominator;  // {N, 1, H, W}, includes epsilon
  Tensor output;
};

NormConvParts normalized_convolution(const Tensor& zc, const Tensor& d, const ReconstructorConfig& cfg) {
  const Shape zs = zc.shape();
  const std::size_t plane = zs.plane();
  const auto kernel = gaussian_kernel(cfg.sigma, cfg.radius);
  NormConvParts parts{Tensor(zs), Tensor(d.shape()), Tensor(zs)};
  for (int n = 0; n < zs.n; ++n) {
    blur_plane(d.data() + n * plane, parts.denominator.data() + n * plane, zs.h, zs.w, kernel);
    for (std::size_t p = 0; p < plane; ++p) parts.denominator[n * plane + p] += cfg.epsilon;
    for (int c = 0; c < zs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * zs.c + c) * plane;
      blur_plane(zc.data() + off, parts.numerator.data() + off, zs.h, zs.w, kernel);
      for (std::size_t p = 0; p < plane; ++p) {
        parts.output[off + p] = parts.numerator[off + p] / parts.denominator[n * plane + p];
      }
    }
  }
  return parts;
}

Tensor weighted_harmonic(const Tensor& zc, const Tensor& d, const ReconstructorConfig& cfg) {
  const Shape zs = zc.shape();
  const std::size_t plane = zs.plane();
  Tensor out(zs);
  for (int n = 0; n < zs.n; ++n) {
    for (int c = 0; c < zs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * zs.c + c) * plane;
      harmonic_solve(d.data() + n * plane, zc.data() + off, out.data() + off, zs.h, zs.w, cfg);
    }
  }
  return out;
}

void he_normal(Tensor& t, int fan_in, double gain, CounterRng& rng) {
  const double sd = gain * std::sqrt(2.0 / fan_in);
  for (double& v : t.values()) v = sd * rng.normal();
}

std::vector<std::uint8_t> activation_signature(const ForwardPass& fp) {
  std::vector<std::uint8_t> sig;
  for (VarId id : fp.kink_inputs) {
    for (double v : fp.tape.value(id).values()) sig.push_back(v > 0.0 ? 1 : 0);
  }
  for (double v : fp.tape.value(fp.probability).values()) sig.push_back(v >= 1.0 ? 1 : 0);
  return sig;
}

}  // namespace

// ---- parameters -----------------------------------------------------------

MaskNetParams::MaskNetParams(const Architecture& arch) : arch_(arch) {
  if (arch.in_channels < 1 || arch.features < 1 || arch.blocks < 0) {
    throw ParameterError("MaskNetParams: invalid architecture");
  }
  const int f = arch.features;
  add("input.weight", Shape{f, arch.in_channels, 3, 3}, 0.0);
  add("input.bias", Shape{1, f, 1, 1}, 0.0);
  add("input.slope", Shape{1, f, 1, 1}, 0.25);
  for (int b = 0; b < arch.blocks; ++b) {
    for (int conv = 1; conv <= 2; ++conv) {
      const std::string c = "conv" + std::to_string(conv);
      add(block_name(b, (c + ".weight").c_str()), Shape{f, f, 3, 3}, 0.0);
      add(block_name(b, (c + ".bias").c_str()), Shape{1, f, 1, 1}, 0.0);
      if (arch.batch_norm) {
        const std::string bn = "bn" + std::to_string(conv);
        add(block_name(b, (bn + ".gamma").c_str()), Shape{1, f, 1, 1}, 1.0);
        add(block_name(b, (bn + ".beta").c_str()), Shape{1, f, 1, 1}, 0.0);
        add(block_name(b, (bn + ".running_mean").c_str()), Shape{1, f, 1, 1}, 0.0, false);
        add(block_name(b, (bn + ".running_var").c_str()), Shape{1, f, 1, 1}, 1.0, false);
      }
      if (conv == 1) add(block_name(b, "slope"), Shape{1, f, 1, 1}, 0.25);
    }
  }
  add("output.weight", Shape{1, f, 3, 3}, 0.0);
  add("output.bias", Shape{1, 1, 1, 1}, 0.0);
}

void MaskNetParams::add(std::string name, Shape shape, double fill, bool trainable) {
  tensors_.push_back(NamedTensor{std::move(name), Tensor(shape, fill), trainable});
}

MaskNetParams MaskNetParams::initialize(const Architecture& arch, std::uint64_t seed) {
  MaskNetParams p(arch);
  CounterRng rng(seed, 0x4E45544D);  // "NETM"
  const int f = arch.features;
  he_normal(p.find("input.weight").value, arch.in_channels * 9, 1.0, rng);
  for (int b = 0; b < arch.blocks; ++b) {
    he_normal(p.find(block_name(b, "conv1.weight")).value, f * 9, 1.0, rng);
    // Damped second convolution keeps the residual stack near identity at start.
    he_normal(p.find(block_name(b, "conv2.weight")).value, f * 9, 0.3, rng);
  }
  he_normal(p.find("output.weight").value, f * 9, 0.3, rng);
  return p;
}

MaskNetParams MaskNetParams::zeros(const Architecture& arch) {
  MaskNetParams p(arch);
  for (auto& t : p.tensors_) {
    if (t.name.ends_with("slope")) std::fill(t.value.values().begin(), t.value.values().end(), 0.0);
  }
  return p;
}

NamedTensor& MaskNetParams::find(const std::string& name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ParameterError("MaskNetParams: no tensor named " + name);
}

const NamedTensor& MaskNetParams::find(const std::string& name) const {
  return const_cast<MaskNetParams*>(this)->find(name);
}

std::size_t MaskNetParams::trainable_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    if (t.trainable) n += t.value.size();
  }
  return n;
}

bool MaskNetParams::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const NamedTensor& t) { return t.value.all_finite(); });
}

double& MaskNetParams::trainable_at(std::size_t k) {
  for (auto& t : tensors_) {
    if (!t.trainable) continue;
    if (k < t.value.size()) return t.value[k];
    k -= t.value.size();
  }
  throw ParameterError("MaskNetParams: trainable index out of range");
}

bool operator==(const MaskNetParams& a, const MaskNetParams& b) {
  if (!(a.arch_ == b.arch_) || a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.trainable != y.trainable || !(x.value.shape() == y.value.shape())) return false;
    if (!std::equal(x.value.values().begin(), x.value.values().end(), y.value.values().begin())) return false;
  }
  return true;
}

void save_params(std::ostream& out, const MaskNetParams& params) {
  const Architecture& a = params.architecture();
  out.write("SNWT", 4);
  put_u32(out, kParamsVersion);
  put_u32(out, static_cast<std::uint32_t>(a.in_channels));
  put_u32(out, static_cast<std::uint32_t>(a.features));
  put_u32(out, static_cast<std::uint32_t>(a.blocks));
  put_u32(out, a.batch_norm ? 1U : 0U);
  put_u32(out, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, t.trainable ? 1U : 0U);
    const Shape s = t.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& t : params.tensors()) {
    for (double v : t.value.values()) put_f32(out, v);
  }
  if (!out) throw FormatError("failed to write SNWT parameters");
}

void save_params(const std::filesystem::path& path, const MaskNetParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  save_params(out, params);
}

MaskNetParams load_params(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "SNWT", 4) != 0) throw FormatError("not an SNWT parameter file");
  if (get_u32(in) != kParamsVersion) throw FormatError("unsupported SNWT version");
  Architecture arch;
  arch.in_channels = static_cast<int>(get_u32(in));
  arch.features = static_cast<int>(get_u32(in));
  arch.blocks = static_cast<int>(get_u32(in));
  arch.batch_norm = get_u32(in) != 0;
  MaskNetParams params = MaskNetParams::zeros(arch);
  const std::uint32_t count = get_u32(in);
  if (count != params.tensors().size()) throw FormatError("SNWT layer table does not match its architecture");
  for (auto& t : params.tensors()) {
    const std::uint32_t len = get_u32(in);
    if (len > 256) throw FormatError("SNWT tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const bool trainable = get_u32(in) != 0;
    Shape s;
    s.n = static_cast<int>(get_u32(in));
    s.c = static_cast<int>(get_u32(in));
    s.h = static_cast<int>(get_u32(in));
    s.w = static_cast<int>(get_u32(in));
    if (!in || name != t.name || trainable != t.trainable || !(s == t.value.shape())) {
      throw FormatError("SNWT layer table entry mismatch at " + t.name);
    }
  }
  for (auto& t : params.tensors()) {
    for (double& v : t.value.values()) v = get_f32(in);
  }
  if (!params.all_finite()) throw FormatError("SNWT parameters contain non-finite values");
  return params;
}

MaskNetParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return load_params(in);
}

// ---- differentiable domain ops --------------------------------------------

Tensor frozen_reconstruct(const Tensor& zc, const Tensor& d, const ReconstructorConfig& cfg) {
  check_recon_shapes(zc.shape(), d.shape());
  if (cfg.kind == ReconstructorKind::kNormalizedConvolution) return normalized_convolution(zc, d, cfg).output;
  return weighted_harmonic(zc, d, cfg);
}

VarId reconstruct_op(Tape& tape, VarId zc, VarId d, const ReconstructorConfig& cfg) {
  const Shape zs = tape.value(zc).shape();
  check_recon_shapes(zs, tape.value(d).shape());
  const std::size_t plane = zs.plane();
  const std::array<VarId, 2> ins{zc, d};

  if (cfg.kind == ReconstructorKind::kNormalizedConvolution) {
    auto parts = normalized_convolution(tape.value(zc), tape.value(d), cfg);
    Tensor out = parts.output;
    return tape.record(std::move(out), ins,
                       [=, num = std::move(parts.numerator), den = std::move(parts.denominator)](Tape& t, VarId self) {
      const auto kernel = gaussian_kernel(cfg.sigma, cfg.radius);
      const Tensor& g = t.grad(self);
      std::vector<double> buf(plane), blurred(plane);
      std::vector<double> gden(plane);
      for (int n = 0; n < zs.n; ++n) {
        std::fill(gden.begin(), gden.end(), 0.0);
        for (int c = 0; c < zs.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * zs.c + c) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const double dv = den[n * plane + p];
            buf[p] = g[off + p] / dv;
            gden[p] -= g[off + p] * num[off + p] / (dv * dv);
          }
          if (t.requires_grad(zc)) {
            blur_plane(buf.data(), blurred.data(), zs.h, zs.w, kernel);
            Tensor& gz = t.grad_slot(zc);
            for (std::size_t p = 0; p < plane; ++p) gz[off + p] += blurred[p];
          }
        }
        if (t.requires_grad(d)) {
          blur_plane(gden.data(), blurred.data(), zs.h, zs.w, kernel);
          Tensor& gd = t.grad_slot(d);
          for (std::size_t p = 0; p < plane; ++p) gd[n * plane + p] += blurred[p];
        }
      }
    });
  }

  Tensor out = weighted_harmonic(tape.value(zc), tape.value(d), cfg);
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    // Adjoint method: A lambda = g, then dzc = lambda and dD = -lambda * r.
    const Tensor& g = t.grad(self);
    const Tensor& r = t.value(self);
    const Tensor& dv = t.value(d);
    std::vector<double> lambda(plane);
    for (int n = 0; n < zs.n; ++n) {
      for (int c = 0; c < zs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * zs.c + c) * plane;
        harmonic_solve(dv.data() + n * plane, g.data() + off, lambda.data(), zs.h, zs.w, cfg);
        if (t.requires_grad(zc)) {
          Tensor& gz = t.grad_slot(zc);
          for (std::size_t p = 0; p < plane; ++p) gz[off + p] += lambda[p];
        }
        if (t.requires_grad(d)) {
          Tensor& gd = t.grad_slot(d);
          for (std::size_t p = 0; p < plane; ++p) gd[n * plane + p] -= lambda[p] * r[off + p];
        }
      }
    }
  });
}

VarId mean_adjust_op(Tape& tape, VarId raw, double c) {
  const Shape s = tape.value(raw).shape();
  if (s.c != 1) throw DimensionError("mean_adjust_op: expected a single-channel map");
  const std::size_t plane = s.plane();
  Tensor out(s);
  std::vector<mask::MeanAdjustResult> results;
  results.reserve(static_cast<std::size_t>(s.n));
  for (int n = 0; n < s.n; ++n) {
    std::span<const double> L(tape.value(raw).data() + n * plane, plane);
    results.push_back(mask::mean_adjust_detailed(L, s.w, s.h, c));
    std::copy(results.back().map.values.begin(), results.back().map.values.end(), out.data() + n * plane);
    results.back().map.values.clear();
  }
  const std::array<VarId, 1> ins{raw};
  return tape.record(std::move(out), ins, [=, res = std::move(results)](Tape& t, VarId self) {
    // Free entries: D = s L with s = budget / sum_free(L), so
    // dL_j = s (g_j - sum_free(g_i L_i) / sum_free(L)).
    const Tensor& g = t.grad(self);
    const Tensor& L = t.value(raw);
    Tensor& gl = t.grad_slot(raw);
    for (int n = 0; n < s.n; ++n) {
      const auto& r = res[static_cast<std::size_t>(n)];
      const std::size_t base = n * plane;
      double dot = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        if (!r.clamped[p]) dot += g[base + p] * L[base + p];
      }
      for (std::size_t p = 0; p < plane; ++p) {
        if (!r.clamped[p]) gl[base + p] += r.scale * (g[base + p] - dot / r.free_sum);
      }
    }
  });
}

// ---- network --------------------------------------------------------------

ForwardPass forward(MaskNetParams& params, const Tensor& batch, double c, const ReconstructorConfig& recon,
                    bool with_loss, bool training) {
  const Architecture& arch = params.architecture();
  if (batch.shape().c != arch.in_channels) {
    throw DimensionError("masknet: guide has " + std::to_string(batch.shape().c) + " channels, network expects " +
                         std::to_string(arch.in_channels));
  }
  ForwardPass fp;
  Tape& tape = fp.tape;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < params.tensors().size(); ++i) {
    const auto& t = params.tensors()[i];
    fp.param_ids.push_back(t.trainable ? tape.variable(t.value) : tape.constant(t.value));
    index[t.name] = i;
  }
  auto P = [&](const std::string& name) { return fp.param_ids[index.at(name)]; };

  auto norm = [&](VarId x, int b, int conv) {
    if (!arch.batch_norm) return x;
    const std::string bn = block_name(b, ("bn" + std::to_string(conv)).c_str());
    auto& mean_t = params.find(bn + ".running_mean").value;
    auto& var_t = params.find(bn + ".running_var").value;
    autodiff::BatchNormState state;
    state.running_mean.assign(mean_t.values().begin(), mean_t.values().end());
    state.running_var.assign(var_t.values().begin(), var_t.values().end());
    const VarId y = autodiff::batch_norm(tape, x, P(bn + ".gamma"), P(bn + ".beta"), state, training);
    std::copy(state.running_mean.begin(), state.running_mean.end(), mean_t.data());
    std::copy(state.running_var.begin(), state.running_var.end(), var_t.data());
    return y;
  };

  fp.input = tape.constant(batch);
  VarId h = autodiff::conv2d(tape, fp.input, P("input.weight"), P("input.bias"));
  fp.kink_inputs.push_back(h);
  h = autodiff::prelu(tape, h, P("input.slope"));
  for (int b = 0; b < arch.blocks; ++b) {
    VarId r = autodiff::conv2d(tape, h, P(block_name(b, "conv1.weight")), P(block_name(b, "conv1.bias")));
    r = norm(r, b, 1);
    fp.kink_inputs.push_back(r);
    r = autodiff::prelu(tape, r, P(block_name(b, "slope")));
    r = autodiff::conv2d(tape, r, P(block_name(b, "conv2.weight")), P(block_name(b, "conv2.bias")));
    r = norm(r, b, 2);
    h = autodiff::add(tape, h, r);
  }
  const VarId logits = autodiff::conv2d(tape, h, P("output.weight"), P("output.bias"));
  fp.probability_raw = autodiff::sigmoid(tape, logits);
  if (!tape.value(fp.probability_raw).all_finite()) {
    throw TrainingDivergence("masknet: non-finite activations");
  }
  fp.probability = mean_adjust_op(tape, fp.probability_raw, c);
  if (with_loss) {
    const VarId zc = autodiff::multiply_broadcast(tape, fp.input, fp.probability);
    fp.reconstruction = reconstruct_op(tape, zc, fp.probability, recon);
    fp.loss = autodiff::mse(tape, fp.reconstruction, fp.input);
  }
  return fp;
}

Tensor to_tensor(const SpectralCube& image) {
  Tensor t(Shape{1, image.bands(), image.height(), image.width()});
  const std::size_t plane = image.pixels();
  for (int b = 0; b < image.bands(); ++b) {
    for (std::size_t p = 0; p < plane; ++p) t[b * plane + p] = image.matrix()(b, static_cast<Eigen::Index>(p));
  }
  return t;
}

Tensor stack(std::span<const SpectralCube> images) {
  if (images.empty()) throw DimensionError("stack: no images");
  const auto& first = images.front();
  Tensor t(Shape{static_cast<int>(images.size()), first.bands(), first.height(), first.width()});
  const std::size_t per = static_cast<std::size_t>(first.bands()) * first.pixels();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw DimensionError("stack: images differ in shape");
    const Tensor one = to_tensor(images[i]);
    std::copy(one.values().begin(), one.values().end(), t.data() + i * per);
  }
  return t;
}

ProbMap netm_forward(const MaskNetParams& params, const SpectralCube& guide, double c) {
  if (guide.width() < 8 || guide.height() < 8) throw DimensionError("netm_forward: guide must be at least 8x8");
  MaskNetParams local = params;
  ForwardPass fp = forward(local, to_tensor(guide), c, ReconstructorConfig{}, false, false);
  const Tensor& d = fp.tape.value(fp.probability);
  if (!d.all_finite()) throw TrainingDivergence("netm_forward: non-finite probability map");
  return ProbMap{guide.width(), guide.height(), std::vector<double>(d.values().begin(), d.values().end()), c};
}

SamplingMask netm_mask(const MaskNetParams& params, const SpectralCube& guide, double c, std::uint64_t seed,
                       mask::Binarizer binarizer) {
  return mask::binarize(netm_forward(params, guide, c), binarizer, seed);
}

// ---- training -------------------------------------------------------------

TrainResult train_netm(std::span<const SpectralCube> corpus, double c, const TrainConfig& cfg) {
  Architecture arch = cfg.architecture;
  if (!corpus.empty()) arch.in_channels = corpus.front().bands();
  return train_netm(corpus, c, cfg, MaskNetParams::initialize(arch, cfg.seed));
}

TrainResult train_netm(std::span<const SpectralCube> corpus, double c, const TrainConfig& cfg,
                       const MaskNetParams& init) {
  if (corpus.empty()) throw ParameterError("train_netm: empty corpus");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ParameterError("train_netm: invalid schedule");
  TrainResult result{init, {}, 0, false};
  MaskNetParams& params = result.params;
  const std::size_t nparam = params.trainable_size();
  std::vector<double> m(nparam, 0.0), v(nparam, 0.0);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  MaskNetParams last_good = params;

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    CounterRng shuffle(cfg.seed, 0x5348554600000000ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SpectralCube> members;
      for (std::size_t k = start; k < stop; ++k) members.push_back(corpus[order[k]]);

      ForwardPass fp;
      try {
        fp = forward(params, stack(members), c, cfg.reconstructor, true, true);
      } catch (const TrainingDivergence&) {
        result.diverged = true;
        break;
      }
      const double loss = fp.tape.value(fp.loss)[0];
      if (!std::isfinite(loss)) {
        result.diverged = true;
        break;
      }
      fp.tape.backward(fp.loss);

      ++result.steps;
      const double bc1 = 1.0 - std::pow(cfg.beta1, result.steps);
      const double bc2 = 1.0 - std::pow(cfg.beta2, result.steps);
      std::size_t k = 0;
      bool finite = true;
      for (std::size_t ti = 0; ti < params.tensors().size(); ++ti) {
        auto& t = params.tensors()[ti];
        if (!t.trainable) continue;
        const Tensor& g = fp.tape.grad(fp.param_ids[ti]);
        for (std::size_t e = 0; e < t.value.size(); ++e, ++k) {
          const double ge = g[e];
          finite = finite && std::isfinite(ge);
          m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * ge;
          v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * ge * ge;
          t.value[e] -= cfg.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam_epsilon);
        }
      }
      if (!finite || !params.all_finite()) {
        result.diverged = true;
        break;
      }
      loss_sum += loss * static_cast<double>(members.size());
      loss_count += members.size();
    }
    if (result.diverged) {
      params = last_good;
      break;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(loss_count));
    last_good = params;
  }
  return result;
}

double evaluate_loss(const MaskNetParams& params, std::span<const SpectralCube> images, double c,
                     const ReconstructorConfig& recon) {
  double total = 0.0;
  MaskNetParams local = params;
  for (const auto& img : images) {
    ForwardPass fp = forward(local, to_tensor(img), c, recon, true, false);
    total += fp.tape.value(fp.loss)[0];
  }
  return total / static_cast<double>(images.size());
}

double uniform_loss(std::span<const SpectralCube> images, double c, const ReconstructorConfig& recon) {
  double total = 0.0;
  for (const auto& img : images) {
    const Tensor z = to_tensor(img);
    const Tensor d(Shape{1, 1, img.height(), img.width()}, c);
    Tensor zc = z;
    const std::size_t plane = img.pixels();
    for (std::size_t i = 0; i < zc.size(); ++i) zc[i] *= d[i % plane];
    const Tensor r = frozen_reconstruct(zc, d, recon);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += (r[i] - z[i]) * (r[i] - z[i]);
    total += s / static_cast<double>(r.size());
  }
  return total / static_cast<double>(images.size());
}

namespace {

double reconstruction_psnr(const Tensor& z, const std::vector<double>& d_values, const ReconstructorConfig& recon) {
  const Shape s = z.shape();
  const std::size_t plane = s.plane();
  Tensor d(Shape{1, 1, s.h, s.w}, d_values);
  Tensor zc = z;
  for (std::size_t i = 0; i < zc.size(); ++i) zc[i] *= d[i % plane];
  const Tensor r = frozen_reconstruct(zc, d, recon);
  double se = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) se += (r[i] - z[i]) * (r[i] - z[i]);
  return metrics::psnr_from_rmse(std::sqrt(se / static_cast<double>(r.size())));
}

std::vector<double> mask_values(const SamplingMask& m) {
  std::vector<double> out(m.pixels());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = m[p] ? 1.0 : 0.0;
  return out;
}

}  // namespace

MaskEvaluation evaluate_masks(const MaskNetParams& params, std::span<const SpectralCube> images, double c,
                              const ReconstructorConfig& recon, std::span<const std::uint64_t> seeds) {
  MaskEvaluation ev;
  std::size_t pairs = 0;
  for (const auto& img : images) {
    const Tensor z = to_tensor(img);
    const ProbMap d = netm_forward(params, img, c);
    ev.netm_continuous_psnr += reconstruction_psnr(z, d.values, recon);
    for (std::uint64_t seed : seeds) {
      ev.netm_binarized_psnr += reconstruction_psnr(z, mask_values(mask::binarize_bernoulli(d, seed)), recon);
      ev.random_psnr +=
          reconstruction_psnr(z, mask_values(mask::random_mask(img.width(), img.height(), c, seed)), recon);
      ++pairs;
    }
  }
  ev.netm_continuous_psnr /= static_cast<double>(images.size());
  ev.netm_binarized_psnr /= static_cast<double>(pairs);
  ev.random_psnr /= static_cast<double>(pairs);
  return ev;
}

GradCheckReport grad_check(const MaskNetParams& params, const SpectralCube& guide, double c,
                           const ReconstructorConfig& recon, std::size_t samples, std::uint64_t seed, double h,
                           double floor) {
  const Tensor batch = to_tensor(guide);
  MaskNetParams base = params;
  ForwardPass fp0 = forward(base, batch, c, recon, true, true);
  fp0.tape.backward(fp0.loss);
  std::vector<double> analytic;
  for (std::size_t ti = 0; ti < base.tensors().size(); ++ti) {
    if (!base.tensors()[ti].trainable) continue;
    const Tensor& g = fp0.tape.grad(fp0.param_ids[ti]);
    analytic.insert(analytic.end(), g.values().begin(), g.values().end());
  }
  const auto sig0 = activation_signature(fp0);

  std::vector<std::size_t> pool(analytic.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  CounterRng rng(seed, 0x47524144);  // "GRAD"
  GradCheckReport report;
  for (std::size_t i = 0; i < pool.size() && report.checked < samples; ++i) {
    std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    const std::size_t k = pool[i];
    auto eval = [&](double delta, std::vector<std::uint8_t>& sig) {
      MaskNetParams p = params;
      p.trainable_at(k) += delta;
      ForwardPass fp = forward(p, batch, c, recon, true, true);
      sig = activation_signature(fp);
      return fp.tape.value(fp.loss)[0];
    };
    std::vector<std::uint8_t> sp, sm;
    const double fplus = eval(h, sp);
    const double fminus = eval(-h, sm);
    if (sp != sig0 || sm != sig0) {
      ++report.skipped;
      continue;
    }
    const double fd = (fplus - fminus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[k]), std::abs(fd), floor});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic[k] - fd) / denom);
    ++report.checked;
  }
  return report;
}

std::vector<SpectralCube> synthetic_edge_corpus(int count, int size, std::uint64_t seed) {
  std::vector<SpectralCube> corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    CounterRng rng(seed, 0x434F5250'00000000ULL + static_cast<std::uint64_t>(i));  // "CORP"
    SpectralCube img(size, size, 3);
    auto colour = [&]() {
      return std::array<double, 3>{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    };
    auto paint = [&](auto inside, const std::array<double, 3>& col) {
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (!inside(r, c)) continue;
          for (int b = 0; b < 3; ++b) img.at(r, c, b) = col[static_cast<std::size_t>(b)];
        }
      }
    };
    paint([](int, int) { return true; }, colour());
    const int shapes = 2 + static_cast<int>(rng.below(3));
    for (int sidx = 0; sidx < shapes; ++sidx) {
      const auto col = colour();
      switch (rng.below(3)) {
        case 0: {
          const double r0 = rng.uniform(0, size * 0.7), c0 = rng.uniform(0, size * 0.7);
          const double r1 = r0 + rng.uniform(size * 0.2, size * 0.6), c1 = c0 + rng.uniform(size * 0.2, size * 0.6);
          paint([=](int r, int c) { return r >= r0 && r < r1 && c >= c0 && c < c1; }, col);
          break;
        }
        case 1: {
          const double cr = rng.uniform(0, size), cc = rng.uniform(0, size);
          const double rad = rng.uniform(size * 0.1, size * 0.35);
          paint([=](int r, int c) { return (r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad; }, col);
          break;
        }
        default: {
          const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
          const double off = rng.uniform(-0.3, 0.3) * size;
          const double nr = std::sin(angle), nc = std::cos(angle);
          const double half = 0.5 * (size - 1);
          paint([=](int r, int c) { return (r - half) * nr + (c - half) * nc > off; }, col);
          break;
        }
      }
    }
    corpus.push_back(std::move(img));
  }
  return corpus;
}

}  // namespace scanweave::masknet
