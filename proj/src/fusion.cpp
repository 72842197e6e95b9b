#include "scanweave/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <ostream>

#include "scanweave/error.hpp"

namespace scanweave::fusion {

// ---- adaptive TV ----------------------------------------------------------

AdaptiveTVOperator::AdaptiveTVOperator(int width, int height, std::vector<Edge> edges)
    : width_(width), height_(height), edges_(std::move(edges)) {
  const auto n = static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height);
  for (const Edge& e : edges_) {
    if (e.p >= n || e.q >= n) throw DimensionError("AdaptiveTVOperator: edge outside the image");
  }
}

namespace {

std::vector<Edge> grid_edges(int w, int h) {
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(std::max(0, h - 1)) * w + static_cast<std::size_t>(h) * std::max(0, w - 1));
  for (int i = 0; i + 1 < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const auto p = static_cast<std::uint32_t>(i * w + j);
      edges.push_back(Edge{p, p + static_cast<std::uint32_t>(w), 1.0});
    }
  }
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      const auto p = static_cast<std::uint32_t>(i * w + j);
      edges.push_back(Edge{p, p + 1, 1.0});
    }
  }
  return edges;
}

}  // namespace

AdaptiveTVOperator AdaptiveTVOperator::unweighted(int width, int height) {
  return AdaptiveTVOperator(width, height, grid_edges(width, height));
}

Matrix AdaptiveTVOperator::apply(const Matrix& v) const {
  if (static_cast<std::size_t>(v.cols()) != static_cast<std::size_t>(width_) * height_) {
    throw DimensionError("AdaptiveTVOperator::apply: column count does not match the image");
  }
  Matrix out(v.rows(), static_cast<Eigen::Index>(edges_.size()));
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const Edge& e = edges_[k];
    out.col(static_cast<Eigen::Index>(k)) = std::sqrt(e.weight) * (v.col(e.p) - v.col(e.q));
  }
  return out;
}

double AdaptiveTVOperator::penalty(const Matrix& v) const {
  if (static_cast<std::size_t>(v.cols()) != static_cast<std::size_t>(width_) * height_) {
    throw DimensionError("AdaptiveTVOperator::penalty: column count does not match the image");
  }
  double s = 0.0;
  const Eigen::Index rows = v.rows();
  const double* data = v.data();
  for (const Edge& e : edges_) {
    const double* a = data + static_cast<std::size_t>(e.p) * rows;
    const double* b = data + static_cast<std::size_t>(e.q) * rows;
    double d2 = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) d2 += (a[r] - b[r]) * (a[r] - b[r]);
    s += e.weight * d2;
  }
  return s;
}

Matrix AdaptiveTVOperator::laplacian(const Matrix& v) const {
  Matrix g = Matrix::Zero(v.rows(), v.cols());
  const Eigen::Index rows = v.rows();
  for (const Edge& e : edges_) {
    const double* a = v.data() + static_cast<std::size_t>(e.p) * rows;
    const double* b = v.data() + static_cast<std::size_t>(e.q) * rows;
    double* ga = g.data() + static_cast<std::size_t>(e.p) * rows;
    double* gb = g.data() + static_cast<std::size_t>(e.q) * rows;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double d = e.weight * (a[r] - b[r]);
      ga[r] += d;
      gb[r] -= d;
    }
  }
  return g;
}

AdaptiveTVOperator build_adaptive_tv(const SpectralCube& guide, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("build_adaptive_tv: alpha must be positive");
  std::vector<Edge> edges = grid_edges(guide.width(), guide.height());
  const Matrix& m = guide.matrix();
  for (Edge& e : edges) e.weight = std::exp(-alpha * (m.col(e.p) - m.col(e.q)).squaredNorm());
  return AdaptiveTVOperator(guide.width(), guide.height(), std::move(edges));
}

// ---- configuration --------------------------------------------------------

void FusionConfig::validate() const {
  if (atoms < 2) throw ParameterError("fusion: atoms must be at least 2");
  if (!(lambda > 0.0) || !(gamma > 0.0) || !(alpha > 0.0)) throw ParameterError("fusion: lambda, gamma, alpha must be positive");
  if (max_outer < 0 || stop_window < 1 || line_search_steps < 1) throw ParameterError("fusion: invalid iteration limits");
  if (!(stop_tolerance > 0.0) || !(initial_step > 0.0)) throw ParameterError("fusion: tolerances must be positive");
  if (dict_epochs < 0 || code_iterations < 1 || training_pixels < 0) throw ParameterError("fusion: invalid dictionary schedule");
}

FusionConfig FusionConfig::from_config(const KeyValueConfig& kv) {
  static const std::vector<std::string> known{"atoms",          "lambda",     "gamma",           "alpha",
                                              "max_outer",      "stop_tolerance", "stop_window", "line_search_steps",
                                              "initial_step",   "dict_epochs", "code_iterations", "training_pixels", "beta",
                                              "seed",           "harmonic_tolerance", "threads"};
  for (const auto& [key, value] : kv.entries()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ParameterError("fusion config: unknown key '" + key + "'");
    }
  }
  FusionConfig c;
  c.atoms = static_cast<int>(kv.get_int("atoms", c.atoms));
  c.lambda = kv.get_double("lambda", c.lambda);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.max_outer = static_cast<int>(kv.get_int("max_outer", c.max_outer));
  c.stop_tolerance = kv.get_double("stop_tolerance", c.stop_tolerance);
  c.stop_window = static_cast<int>(kv.get_int("stop_window", c.stop_window));
  c.line_search_steps = static_cast<int>(kv.get_int("line_search_steps", c.line_search_steps));
  c.initial_step = kv.get_double("initial_step", c.initial_step);
  c.dict_epochs = static_cast<int>(kv.get_int("dict_epochs", c.dict_epochs));
  c.code_iterations = static_cast<int>(kv.get_int("code_iterations", c.code_iterations));
  c.training_pixels = static_cast<int>(kv.get_int("training_pixels", c.training_pixels));
  c.beta = kv.get_double("beta", c.beta);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.harmonic_tolerance = kv.get_double("harmonic_tolerance", c.harmonic_tolerance);
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.validate();
  return c;
}

// ---- objective ------------------------------------------------------------

Problem make_problem(const Matrix& sampled, const SamplingMask& mask, const SpectralCube& guide,
                     const FusionConfig& cfg) {
  if (guide.width() != mask.width() || guide.height() != mask.height()) {
    throw DimensionError("fusion: guide image and mask differ in size");
  }
  Problem p;
  p.selection = SelectionOperator(mask);
  if (static_cast<std::size_t>(sampled.cols()) != p.selection.kept()) {
    throw DimensionError("fusion: sampled columns do not match the mask");
  }
  p.sampled = sampled;
  p.rgb = guide.matrix();
  p.tv_visible = build_adaptive_tv(guide, cfg.alpha);
  p.tv_nonvisible = AdaptiveTVOperator::unweighted(guide.width(), guide.height());
  p.lambda = cfg.lambda;
  p.gamma = cfg.gamma;
  return p;
}

namespace {

void check_state(const FusionState& s, const Problem& p) {
  const Eigen::Index n = p.rgb.cols();
  const Eigen::Index m = s.a_v.rows();
  if (s.a_v.cols() != n || s.a_nv.cols() != n || s.a_nv.rows() != m || s.d_v.cols() != m || s.d_nv.cols() != m ||
      s.d_rgb.cols() != m || s.d_rgb.rows() != p.rgb.rows() || s.d_v.rows() != p.sampled.rows() ||
      s.d_nv.rows() != p.sampled.rows()) {
    throw DimensionError("fusion: state is inconsistent with the problem");
  }
}

struct Evaluation {
  Matrix y_v;
  Matrix y_nv;
  Matrix rgb_residual;  // D_rgb A_v - I
  ObjectiveTerms terms;
};

Evaluation evaluate(const FusionState& s, const Problem& p) {
  Evaluation ev;
  ev.y_v = s.d_v * s.a_v;
  ev.y_nv = s.d_nv * s.a_nv;
  double data = 0.0;
  const auto idx = p.selection.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    data += (ev.y_v.col(idx[k]) + ev.y_nv.col(idx[k]) - p.sampled.col(static_cast<Eigen::Index>(k))).squaredNorm();
  }
  ev.rgb_residual = s.d_rgb * s.a_v - p.rgb;
  ev.terms.data = data;
  ev.terms.tv_visible = p.gamma * p.tv_visible.penalty(ev.y_v);
  ev.terms.tv_nonvisible = p.lambda * p.tv_nonvisible.penalty(ev.y_nv);
  ev.terms.rgb = ev.rgb_residual.squaredNorm();
  ev.terms.total = ev.terms.data + ev.terms.tv_visible + ev.terms.tv_nonvisible + ev.terms.rgb;
  return ev;
}

}  // namespace

ObjectiveTerms objective(const FusionState& state, const Problem& problem) {
  check_state(state, problem);
  return evaluate(state, problem).terms;
}

ObjectiveTerms objective(const FusionState& state, const Matrix& sampled, const SpectralCube& guide,
                         const SamplingMask& mask, const FusionConfig& cfg) {
  return objective(state, make_problem(sampled, mask, guide, cfg));
}

// ---- constraints ----------------------------------------------------------

void project_simplex(std::span<double> v) {
  if (v.empty()) return;
  // Michelot: shrink the active set until the threshold stops moving.
  std::vector<double> active(v.begin(), v.end());
  double theta = 0.0;
  for (;;) {
    double sum = 0.0;
    for (double x : active) sum += x;
    theta = (sum - 1.0) / static_cast<double>(active.size());
    const std::size_t before = active.size();
    active.erase(std::remove_if(active.begin(), active.end(), [&](double x) { return x <= theta; }), active.end());
    if (active.size() == before) break;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

void project_constraints(Abundance& a_v, Abundance& a_nv) {
  if (a_v.rows() != a_nv.rows() || a_v.cols() != a_nv.cols()) {
    throw DimensionError("project_constraints: abundance shapes differ");
  }
  const Eigen::Index m = a_v.rows();
  std::vector<double> col(static_cast<std::size_t>(2 * m));
  for (Eigen::Index p = 0; p < a_v.cols(); ++p) {
    for (Eigen::Index k = 0; k < m; ++k) {
      col[static_cast<std::size_t>(k)] = a_v(k, p);
      col[static_cast<std::size_t>(m + k)] = a_nv(k, p);
    }
    project_simplex(col);
    for (Eigen::Index k = 0; k < m; ++k) {
      a_v(k, p) = col[static_cast<std::size_t>(k)];
      a_nv(k, p) = col[static_cast<std::size_t>(m + k)];
    }
  }
}

void clamp_dictionaries(FusionState& state) {
  for (Matrix* d : {&state.d_rgb, &state.d_v, &state.d_nv}) *d = d->cwiseMax(0.0).cwiseMin(1.0);
}

double constraint_violation(const FusionState& s) {
  double worst = 0.0;
  for (const Matrix* d : {&s.d_rgb, &s.d_v, &s.d_nv}) {
    if (d->size() == 0) continue;
    worst = std::max({worst, -d->minCoeff(), d->maxCoeff() - 1.0});
  }
  if (s.a_v.size() > 0) {
    worst = std::max({worst, -s.a_v.minCoeff(), -s.a_nv.minCoeff()});
    const Eigen::RowVectorXd sums = s.a_v.colwise().sum() + s.a_nv.colwise().sum();
    worst = std::max(worst, (sums.array() - 1.0).abs().maxCoeff());
  }
  return std::max(worst, 0.0);
}

// ---- solver ---------------------------------------------------------------

namespace {

using Vars = std::function<std::vector<Matrix*>(FusionState&)>;
using Projection = std::function<void(FusionState&)>;

// One projected-gradient step with backtracking. Accepts only sufficient
// decrease that also does not raise the objective.
bool line_search(FusionState& s, const Problem& p, double& f, const Vars& vars, const std::vector<Matrix>& grads,
                 const Projection& project, double& step, int max_steps) {
  for (int k = 0; k < max_steps; ++k) {
    FusionState trial = s;
    auto tv = vars(trial);
    auto sv = vars(s);
    for (std::size_t i = 0; i < tv.size(); ++i) *tv[i] -= step * grads[i];
    project(trial);
    double lin = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < tv.size(); ++i) {
      const Matrix d = *tv[i] - *sv[i];
      lin += (grads[i].array() * d.array()).sum();
      sq += d.squaredNorm();
    }
    if (sq == 0.0) return false;
    const double ft = evaluate(trial, p).terms.total;
    if (std::isfinite(ft) && ft <= f + lin + sq / (2.0 * step) && ft <= f) {
      s = std::move(trial);
      f = ft;
      step *= 2.0;
      return true;
    }
    step *= 0.5;
  }
  return false;
}

double rmse_of(const Matrix& y, const Matrix& truth) {
  return std::sqrt((y - truth).squaredNorm() / static_cast<double>(y.size()));
}

}  // namespace

FusionResult fuse_inpaint(const Matrix& sampled, const SamplingMask& mask, const SpectralCube& guide,
                          const FusionConfig& cfg, const Matrix* truth, const FusionState* initial) {
  cfg.validate();
  const Problem p = make_problem(sampled, mask, guide, cfg);
  if (p.selection.kept() == 0) throw DegenerateInputError("fuse_inpaint: empty mask");
  if (truth != nullptr && (truth->rows() != sampled.rows() || truth->cols() != p.rgb.cols())) {
    throw DimensionError("fuse_inpaint: truth has the wrong shape");
  }

  FusionResult out;
  if (initial != nullptr) {
    out.state = *initial;
    recon::HarmonicOptions ho;
    ho.tolerance = cfg.harmonic_tolerance;
    out.y0 = recon::harmonic_inpaint_cube(sampled, mask, ho, cfg.threads).cube.matrix();
  } else {
    dict::InitOptions io;
    io.atoms = cfg.atoms;
    io.beta = cfg.beta;
    io.epochs = cfg.dict_epochs;
    io.code_iterations = cfg.code_iterations;
    io.training_pixels = cfg.training_pixels;
    io.seed = cfg.seed;
    io.harmonic.tolerance = cfg.harmonic_tolerance;
    io.threads = cfg.threads;
    auto init = dict::init_fusion_state(p.rgb, sampled, mask, io);
    out.state = std::move(init.state);
    out.y0 = std::move(init.y0);
  }
  check_state(out.state, p);
  FusionState& s = out.state;
  clamp_dictionaries(s);
  project_constraints(s.a_v, s.a_nv);

  auto record = [&](int iteration, const Evaluation& ev) {
    TraceRow row{iteration, ev.terms, std::nullopt};
    if (truth != nullptr) row.rmse = rmse_of(ev.y_v + ev.y_nv, *truth);
    out.trace.push_back(row);
  };

  Evaluation ev = evaluate(s, p);
  double f = ev.terms.total;
  record(0, ev);
  out.max_constraint_violation = constraint_violation(s);

  const Vars abundances = [](FusionState& x) { return std::vector<Matrix*>{&x.a_v, &x.a_nv}; };
  const Vars dv = [](FusionState& x) { return std::vector<Matrix*>{&x.d_v}; };
  const Vars dnv = [](FusionState& x) { return std::vector<Matrix*>{&x.d_nv}; };
  const Vars drgb = [](FusionState& x) { return std::vector<Matrix*>{&x.d_rgb}; };
  const Projection simplex = [](FusionState& x) { project_constraints(x.a_v, x.a_nv); };
  const Projection clamp_v = [](FusionState& x) { x.d_v = x.d_v.cwiseMax(0.0).cwiseMin(1.0); };
  const Projection clamp_nv = [](FusionState& x) { x.d_nv = x.d_nv.cwiseMax(0.0).cwiseMin(1.0); };
  const Projection clamp_rgb = [](FusionState& x) { x.d_rgb = x.d_rgb.cwiseMax(0.0).cwiseMin(1.0); };
  std::array<double, 4> steps{};
  steps.fill(cfg.initial_step);

  // Gradient pieces shared by the blocks, recomputed from the current state.
  struct Pieces {
    Matrix g_v;   // 2 R + 2 gamma L_w Y_v
    Matrix g_nv;  // 2 R + 2 lambda L Y_nv
    Matrix g_rgb; // 2 (D_rgb A_v - I)
  };
  auto pieces = [&](const FusionState& x) {
    const Evaluation e = evaluate(x, p);
    Matrix r = Matrix::Zero(x.d_v.rows(), p.rgb.cols());
    const auto idx = p.selection.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      r.col(idx[k]) = e.y_v.col(idx[k]) + e.y_nv.col(idx[k]) - p.sampled.col(static_cast<Eigen::Index>(k));
    }
    Pieces pc;
    pc.g_v = 2.0 * r + 2.0 * p.gamma * p.tv_visible.laplacian(e.y_v);
    pc.g_nv = 2.0 * r + 2.0 * p.lambda * p.tv_nonvisible.laplacian(e.y_nv);
    pc.g_rgb = 2.0 * e.rgb_residual;
    return pc;
  };

  int quiet = 0;
  out.stop_reason = "max_outer";
  for (int it = 1; it <= cfg.max_outer; ++it) {
    const double f_start = f;
    bool moved = false;
    {
      const Pieces pc = pieces(s);
      std::vector<Matrix> g{s.d_v.transpose() * pc.g_v + s.d_rgb.transpose() * pc.g_rgb,
                            s.d_nv.transpose() * pc.g_nv};
      moved |= line_search(s, p, f, abundances, g, simplex, steps[0], cfg.line_search_steps);
    }
    {
      const Pieces pc = pieces(s);
      std::vector<Matrix> g{pc.g_v * s.a_v.transpose()};
      moved |= line_search(s, p, f, dv, g, clamp_v, steps[1], cfg.line_search_steps);
    }
    {
      const Pieces pc = pieces(s);
      std::vector<Matrix> g{pc.g_nv * s.a_nv.transpose()};
      moved |= line_search(s, p, f, dnv, g, clamp_nv, steps[2], cfg.line_search_steps);
    }
    {
      const Pieces pc = pieces(s);
      std::vector<Matrix> g{pc.g_rgb * s.a_v.transpose()};
      moved |= line_search(s, p, f, drgb, g, clamp_rgb, steps[3], cfg.line_search_steps);
    }
    ev = evaluate(s, p);
    record(it, ev);
    out.iterations = it;
    out.max_constraint_violation = std::max(out.max_constraint_violation, constraint_violation(s));
    if (!moved) {
      out.stop_reason = "stalled";
      break;
    }
    const double rel = (f_start - f) / std::max(std::abs(f_start), 1e-300);
    quiet = rel < cfg.stop_tolerance ? quiet + 1 : 0;
    if (quiet >= cfg.stop_window) {
      out.stop_reason = "converged";
      break;
    }
  }

  out.y_v = std::move(ev.y_v);
  out.y_nv = std::move(ev.y_nv);
  out.y = combine_visible_nonvisible(out.y_v, out.y_nv);
  return out;
}

bool trace_monotone(std::span<const TraceRow> trace, double slack) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const double prev = trace[i - 1].terms.total;
    if (trace[i].terms.total > prev + slack * std::max(1.0, std::abs(prev))) return false;
  }
  return true;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace) {
  const bool with_rmse = !trace.empty() && trace.front().rmse.has_value();
  out << "iteration,objective,data,tv_visible,tv_nonvisible,rgb";
  if (with_rmse) out << ",rmse";
  out << '\n';
  out.precision(12);
  for (const TraceRow& r : trace) {
    out << r.iteration << ',' << r.terms.total << ',' << r.terms.data << ',' << r.terms.tv_visible << ','
        << r.terms.tv_nonvisible << ',' << r.terms.rgb;
    if (with_rmse) out << ',' << r.rmse.value_or(0.0);
    out << '\n';
  }
}

}  // namespace scanweave::fusion
