#pragma once

// Visible / non-visible fusion inpainting.
//
//   min  ||X - (D_v A_v + D_nv A_nv) S||^2 + gamma ||grad_I(D_v A_v)||^2
//        + lambda ||grad(D_nv A_nv)||^2 + ||I - D_rgb A_v||^2
//   s.t. dictionaries in [0,1], abundances >= 0, A_v + A_nv columns sum to 1
//
// Blocks (A_v, A_nv), D_v, D_nv and D_rgb are updated in turn by projected
// gradient steps with backtracking, so the objective never increases.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scanweave/config.hpp"
#include "scanweave/core.hpp"
#include "scanweave/dict.hpp"

namespace scanweave::fusion {

using dict::FusionState;

struct Edge {
  std::uint32_t p = 0;  ///< pixel index
  std::uint32_t q = 0;  ///< neighbour below or to the right
  double weight = 1.0;
};

/// Weighted first-order differences over every vertical and horizontal
/// neighbour pair. Vertical pairs come first, then horizontal, each in
/// row-major order of the upper-left pixel.
class AdaptiveTVOperator {
 public:
  AdaptiveTVOperator() = default;
  AdaptiveTVOperator(int width, int height, std::vector<Edge> edges);
  static AdaptiveTVOperator unweighted(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const Edge> edges() const { return edges_; }

  /// V P: column e holds sqrt(w_e) (V_p - V_q). V is rows x pixels.
  Matrix apply(const Matrix& v) const;
  /// sum_e w_e ||V_p - V_q||^2
  double penalty(const Matrix& v) const;
  /// Half the gradient of penalty: sum over incident edges of w_e (V_p - V_q).
  Matrix laplacian(const Matrix& v) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Edge> edges_;
};

/// w = exp(-alpha ||I_p - I_q||^2) from the guide image.
AdaptiveTVOperator build_adaptive_tv(const SpectralCube& guide, double alpha);

struct FusionConfig {
  int atoms = 200;
  double lambda = 0.1;  ///< non-visible TV weight
  double gamma = 0.1;   ///< visible adaptive TV weight
  double alpha = 16.0;  ///< edge sensitivity
  int max_outer = 100;
  double stop_tolerance = 1e-5;
  int stop_window = 3;
  int line_search_steps = 40;
  double initial_step = 1.0;
  int dict_epochs = 3;
  int code_iterations = 80;
  int training_pixels = 1024;  ///< dictionary learning subset, 0 = all pixels
  double beta = -1.0;  ///< negative: scale-free default
  std::uint64_t seed = 1;
  double harmonic_tolerance = 1e-8;
  int threads = 1;

  void validate() const;
  /// Reads flat `key = value` entries named like the fields; unknown keys are rejected.
  static FusionConfig from_config(const KeyValueConfig& kv);
};

struct ObjectiveTerms {
  double data = 0.0;
  double tv_visible = 0.0;     ///< gamma-weighted
  double tv_nonvisible = 0.0;  ///< lambda-weighted
  double rgb = 0.0;
  double total = 0.0;
};

struct Problem {
  Matrix sampled;  ///< X, B x N_s
  Matrix rgb;      ///< I, b x N
  SelectionOperator selection;
  AdaptiveTVOperator tv_visible;
  AdaptiveTVOperator tv_nonvisible;
  double lambda = 0.1;
  double gamma = 0.1;
};

Problem make_problem(const Matrix& sampled, const SamplingMask& mask, const SpectralCube& guide,
                     const FusionConfig& cfg);

ObjectiveTerms objective(const FusionState& state, const Problem& problem);
ObjectiveTerms objective(const FusionState& state, const Matrix& sampled, const SpectralCube& guide,
                         const SamplingMask& mask, const FusionConfig& cfg);

/// Euclidean projection of v onto {x >= 0, sum x = 1}.
void project_simplex(std::span<double> v);
/// Per pixel, the stacked (A_v, A_nv) column goes to the simplex.
void project_constraints(Abundance& a_v, Abundance& a_nv);
/// Clamps every dictionary entry to [0,1].
void clamp_dictionaries(FusionState& state);
/// Largest violation of the box, nonnegativity and sum-to-one constraints.
double constraint_violation(const FusionState& state);

struct TraceRow {
  int iteration = 0;
  ObjectiveTerms terms;
  std::optional<double> rmse;
};

struct FusionResult {
  Matrix y;      ///< D_v A_v + D_nv A_nv, unclamped
  Matrix y_v;
  Matrix y_nv;
  Matrix y0;     ///< harmonic initialization
  FusionState state;
  std::vector<TraceRow> trace;
  int iterations = 0;
  std::string stop_reason;
  double max_constraint_violation = 0.0;  ///< worst over all outer iterations
};

/// `truth` (B x N) adds an RMSE column to the trace. `initial` replaces the
/// dictionary-learning initialization.
FusionResult fuse_inpaint(const Matrix& sampled, const SamplingMask& mask, const SpectralCube& guide,
                          const FusionConfig& cfg, const Matrix* truth = nullptr,
                          const FusionState* initial = nullptr);

bool trace_monotone(std::span<const TraceRow> trace, double slack = 1e-12);

/// iteration,objective,data,tv_visible,tv_nonvisible,rgb[,rmse]
void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace);

}  // namespace scanweave::fusion
