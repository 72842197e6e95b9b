#include "scanweave/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "scanweave/error.hpp"

namespace scanweave::autodiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

// Lowers one image of an NCHW tensor into a (C*k*k) x (H*W) patch matrix.
void im2col(const double* image, int channels, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < channels; ++ch) {
    const double* plane = image + static_cast<std::size_t>(ch) * hw;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * hw;
        for (int r = 0; r < h; ++r) {
          const int sr = r + ki - pad;
          double* dst = row + static_cast<std::size_t>(r) * w;
          if (sr < 0 || sr >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sr) * w;
          for (int c = 0; c < w; ++c) {
            const int sc = c + kj - pad;
            dst[c] = (sc >= 0 && sc < w) ? src[sc] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix adjoints back onto the image.
void col2im_add(const double* col, int channels, int h, int w, int k, double* image) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < channels; ++ch) {
    double* plane = image + static_cast<std::size_t>(ch) * hw;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * hw;
        for (int r = 0; r < h; ++r) {
          const int sr = r + ki - pad;
          if (sr < 0 || sr >= h) continue;
          const double* src = row + static_cast<std::size_t>(r) * w;
          double* dst = plane + static_cast<std::size_t>(sr) * w;
          for (int c = 0; c < w; ++c) {
            const int sc = c + kj - pad;
            if (sc >= 0 && sc < w) dst[sc] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  require(data_.size() == shape_.size(), "Tensor: data size does not match shape");
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

VarId Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return nodes_.size() - 1;
}

VarId Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return nodes_.size() - 1;
}

VarId Tape::record(Tensor value, std::span<const VarId> inputs, Backward backward) {
  bool needs = false;
  for (VarId id : inputs) needs = needs || nodes_[id].requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
  return nodes_.size() - 1;
}

const Tensor& Tape::grad(VarId id) { return grad_slot(id); }

Tensor& Tape::grad_slot(VarId id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(VarId loss) {
  require(nodes_[loss].value.size() == 1, "Tape::backward: loss must be a single element");
  for (auto& node : nodes_) {
    if (!node.grad.empty()) std::fill(node.grad.values().begin(), node.grad.values().end(), 0.0);
  }
  grad_slot(loss)[0] = 1.0;
  for (VarId id = loss + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

VarId conv2d(Tape& tape, VarId input, VarId weight, VarId bias) {
  const Shape xs = tape.value(input).shape();
  const Shape ws = tape.value(weight).shape();
  require(ws.c == xs.c, "conv2d: input channels do not match the kernel");
  require(ws.h == ws.w && ws.h % 2 == 1, "conv2d: kernel must be square with odd size");
  require(tape.value(bias).size() == static_cast<std::size_t>(ws.n), "conv2d: bias size mismatch");
  const int k = ws.h;
  const int cout = ws.n;
  const Eigen::Index patch = static_cast<Eigen::Index>(xs.c) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(xs.plane());

  Tensor out(Shape{xs.n, cout, xs.h, xs.w});
  std::vector<double> col(static_cast<std::size_t>(patch * hw));
  ConstRowMap wmat(tape.value(weight).data(), cout, patch);
  Eigen::Map<const Eigen::VectorXd> b(tape.value(bias).data(), cout);
  for (int n = 0; n < xs.n; ++n) {
    im2col(tape.value(input).data() + static_cast<std::size_t>(n) * xs.c * hw, xs.c, xs.h, xs.w, k, col.data());
    RowMap o(out.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    o.noalias() = wmat * ConstRowMap(col.data(), patch, hw);
    o.colwise() += b;
  }

  const std::array<VarId, 3> ins{input, weight, bias};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Shape xs2 = t.value(input).shape();
    const Eigen::Index cout2 = cout;
    std::vector<double> col2(static_cast<std::size_t>(patch * hw));
    std::vector<double> gcol(static_cast<std::size_t>(patch * hw));
    const Tensor& g = t.grad(self);
    ConstRowMap wm(t.value(weight).data(), cout2, patch);
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    const bool need_b = t.requires_grad(bias);
    for (int n = 0; n < xs2.n; ++n) {
      ConstRowMap go(g.data() + static_cast<std::size_t>(n) * cout2 * hw, cout2, hw);
      if (need_w) {
        im2col(t.value(input).data() + static_cast<std::size_t>(n) * xs2.c * hw, xs2.c, xs2.h, xs2.w, k, col2.data());
        RowMap gw(t.grad_slot(weight).data(), cout2, patch);
        gw.noalias() += go * ConstRowMap(col2.data(), patch, hw).transpose();
      }
      if (need_b) {
        Eigen::Map<Eigen::VectorXd> gb(t.grad_slot(bias).data(), cout2);
        gb += go.rowwise().sum();
      }
      if (need_x) {
        RowMap gc(gcol.data(), patch, hw);
        gc.noalias() = wm.transpose() * go;
        col2im_add(gcol.data(), xs2.c, xs2.h, xs2.w, k,
                   t.grad_slot(input).data() + static_cast<std::size_t>(n) * xs2.c * hw);
      }
    }
  });
}

VarId add(Tape& tape, VarId a, VarId b) {
  require(tape.value(a).shape() == tape.value(b).shape(), "add: shape mismatch");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::array<VarId, 2> ins{a, b};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    for (VarId target : {a, b}) {
      if (!t.requires_grad(target)) continue;
      Tensor& gt = t.grad_slot(target);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

VarId prelu(Tape& tape, VarId input, VarId slope) {
  const Shape s = tape.value(input).shape();
  require(tape.value(slope).size() == static_cast<std::size_t>(s.c), "prelu: one slope per channel");
  Tensor out(s);
  const Tensor& x = tape.value(input);
  const Tensor& a = tape.value(slope);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = x[base + p];
        out[base + p] = v > 0.0 ? v : a[c] * v;
      }
    }
  }
  const std::array<VarId, 2> ins{input, slope};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(input);
    const Tensor& av = t.value(slope);
    const bool need_x = t.requires_grad(input);
    const bool need_a = t.requires_grad(slope);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
        double ga = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
          const double v = xv[base + p];
          if (v > 0.0) {
            if (need_x) t.grad_slot(input)[base + p] += g[base + p];
          } else {
            if (need_x) t.grad_slot(input)[base + p] += av[c] * g[base + p];
            ga += v * g[base + p];
          }
        }
        if (need_a) t.grad_slot(slope)[c] += ga;
      }
    }
  });
}

VarId sigmoid(Tape& tape, VarId input) {
  Tensor out = tape.value(input);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const std::array<VarId, 1> ins{input};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_slot(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

VarId multiply_broadcast(Tape& tape, VarId z, VarId d) {
  const Shape zs = tape.value(z).shape();
  const Shape ds = tape.value(d).shape();
  require(ds.n == zs.n && ds.c == 1 && ds.h == zs.h && ds.w == zs.w, "multiply_broadcast: shape mismatch");
  const std::size_t plane = zs.plane();
  Tensor out(zs);
  const Tensor& zv = tape.value(z);
  const Tensor& dv = tape.value(d);
  for (int n = 0; n < zs.n; ++n) {
    for (int c = 0; c < zs.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * zs.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[base + p] = zv[base + p] * dv[n * plane + p];
    }
  }
  const std::array<VarId, 2> ins{z, d};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& zv2 = t.value(z);
    const Tensor& dv2 = t.value(d);
    const bool need_z = t.requires_grad(z);
    const bool need_d = t.requires_grad(d);
    for (int n = 0; n < zs.n; ++n) {
      for (int c = 0; c < zs.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * zs.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          if (need_z) t.grad_slot(z)[base + p] += g[base + p] * dv2[n * plane + p];
          if (need_d) t.grad_slot(d)[n * plane + p] += g[base + p] * zv2[base + p];
        }
      }
    }
  });
}

VarId mse(Tape& tape, VarId a, VarId b) {
  require(tape.value(a).shape() == tape.value(b).shape(), "mse: shape mismatch");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(av.size());
  Tensor out(Shape{}, std::vector<double>{s * inv});
  const std::array<VarId, 2> ins{a, b};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const double g = t.grad(self)[0];
    const Tensor& a2 = t.value(a);
    const Tensor& b2 = t.value(b);
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    for (std::size_t i = 0; i < a2.size(); ++i) {
      const double d = 2.0 * inv * g * (a2[i] - b2[i]);
      if (need_a) t.grad_slot(a)[i] += d;
      if (need_b) t.grad_slot(b)[i] -= d;
    }
  });
}

VarId batch_norm(Tape& tape, VarId input, VarId gamma, VarId beta, BatchNormState& state, bool training) {
  const Shape s = tape.value(input).shape();
  const auto channels = static_cast<std::size_t>(s.c);
  require(tape.value(gamma).size() == channels && tape.value(beta).size() == channels,
          "batch_norm: gamma/beta must have one entry per channel");
  if (state.running_mean.size() != channels) state.running_mean.assign(channels, 0.0);
  if (state.running_var.size() != channels) state.running_var.assign(channels, 1.0);
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);

  std::vector<double> mean(channels), inv_std(channels);
  const Tensor& x = tape.value(input);
  for (std::size_t c = 0; c < channels; ++c) {
    if (training) {
      double m = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) m += x[base + p];
      }
      m /= count;
      double v = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) v += (x[base + p] - m) * (x[base + p] - m);
      }
      v /= count;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor out(s);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        out[base + p] = gv[c] * (x[base + p] - mean[c]) * inv_std[c] + bv[c];
      }
    }
  }

  const std::array<VarId, 3> ins{input, gamma, beta};
  return tape.record(std::move(out), ins, [=](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(input);
    const Tensor& gam = t.value(gamma);
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double xhat = (xv[base + p] - mean[c]) * inv_std[c];
          sum_g += g[base + p];
          sum_gx += g[base + p] * xhat;
        }
      }
      if (t.requires_grad(gamma)) t.grad_slot(gamma)[c] += sum_gx;
      if (t.requires_grad(beta)) t.grad_slot(beta)[c] += sum_g;
      if (!t.requires_grad(input)) continue;
      Tensor& gx = t.grad_slot(input);
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          if (training) {
            const double xhat = (xv[base + p] - mean[c]) * inv_std[c];
            gx[base + p] += gam[c] * inv_std[c] * (g[base + p] - sum_g / count - xhat * sum_gx / count);
          } else {
            gx[base + p] += gam[c] * inv_std[c] * g[base + p];
          }
        }
      }
    }
  });
}

}  // namespace scanweave::autodiff
