#pragma once

// Desk-scale mask generation network.
//
//   guide z -> conv3x3 -> PReLU -> B x [conv -> (BN) -> PReLU -> conv -> (BN) -> +skip]
//           -> conv3x3 to one channel -> sigmoid -> mean adjustment -> D
//
// Training minimizes || z - R(z * D, D) ||^2 where R is a fixed differentiable
// reconstructor and D is the continuous probability map. A binary mask is only
// drawn (Bernoulli) at evaluation time.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scanweave/core.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/tape.hpp"

namespace scanweave::masknet {

using autodiff::Shape;
using autodiff::Tape;
using autodiff::Tensor;
using autodiff::VarId;

struct Architecture {
  int in_channels = 3;
  int features = 16;
  int blocks = 3;
  bool batch_norm = false;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class MaskNetParams {
 public:
  MaskNetParams() = default;

  /// He-normal convolution weights, zero biases, PReLU slopes 0.25.
  static MaskNetParams initialize(const Architecture& arch, std::uint64_t seed);
  /// Every parameter zero (PReLU slopes included); BN scales stay at 1.
  static MaskNetParams zeros(const Architecture& arch);

  const Architecture& architecture() const { return arch_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  NamedTensor& find(const std::string& name);
  const NamedTensor& find(const std::string& name) const;

  std::size_t trainable_size() const;
  bool all_finite() const;

  /// Scalar view over trainable entries, in table order.
  double& trainable_at(std::size_t k);

  friend bool operator==(const MaskNetParams& a, const MaskNetParams& b);

 private:
  explicit MaskNetParams(const Architecture& arch);
  void add(std::string name, Shape shape, double fill, bool trainable = true);

  Architecture arch_;
  std::vector<NamedTensor> tensors_;
};

/// Parameter file: "SNWT", u32 version, u32 in_channels, u32 features,
/// u32 blocks, u32 batch_norm, u32 tensor count, then per tensor
/// {u32 name length, name bytes, u32 trainable, u32 n, c, h, w}, then every
/// tensor's entries as little-endian f32 in table order.
void save_params(std::ostream& out, const MaskNetParams& params);
void save_params(const std::filesystem::path& path, const MaskNetParams& params);
MaskNetParams load_params(std::istream& in);
MaskNetParams load_params(const std::filesystem::path& path);

enum class ReconstructorKind { kNormalizedConvolution, kWeightedHarmonic };

/// Fixed differentiable reconstructor standing in for a trained inpainter.
struct ReconstructorConfig {
  ReconstructorKind kind = ReconstructorKind::kNormalizedConvolution;
  /// Normalized convolution: separable Gaussian of this width; radius 0 is
  /// the single-pixel kernel.
  double sigma = 1.5;
  int radius = 4;
  double epsilon = 1e-3;
  /// Weighted harmonic: solves (diag(D) + smoothness * L + ridge) r = z * D.
  double smoothness = 0.25;
  double ridge = 1e-8;
  double solve_tolerance = 1e-12;
  int max_solve_iterations = 4000;
};

/// r = (K * zc) / (K * D + eps), or the weighted harmonic solve. zc is
/// {N, C, H, W}; d is {N, 1, H, W}.
Tensor frozen_reconstruct(const Tensor& zc, const Tensor& d, const ReconstructorConfig& cfg);

/// Tape op for frozen_reconstruct, differentiable in both zc and d.
VarId reconstruct_op(Tape& tape, VarId zc, VarId d, const ReconstructorConfig& cfg);

/// Tape op for per-image mean adjustment of a {N, 1, H, W} map. Pinned
/// entries receive zero gradient.
VarId mean_adjust_op(Tape& tape, VarId raw, double c);

/// One forward pass recorded on a tape.
struct ForwardPass {
  Tape tape;
  std::vector<VarId> param_ids;     ///< parallel to MaskNetParams::tensors()
  std::vector<VarId> kink_inputs;   ///< inputs of every PReLU
  VarId input = 0;
  VarId probability_raw = 0;        ///< sigmoid output L
  VarId probability = 0;            ///< mean adjusted map D
  VarId reconstruction = 0;
  VarId loss = 0;
};

/// Forward pass over a batch {N, C, H, W}. With `with_loss` the frozen
/// reconstructor and mean squared loss are appended. Training mode uses
/// batch statistics in BN layers and updates their running statistics.
ForwardPass forward(MaskNetParams& params, const Tensor& batch, double c, const ReconstructorConfig& recon,
                    bool with_loss, bool training);

/// Guide image as a {1, C, H, W} tensor.
Tensor to_tensor(const SpectralCube& image);
Tensor stack(std::span<const SpectralCube> images);

/// Probability map for one guide image (inference mode).
/// Throws TrainingDivergence on non-finite activations.
ProbMap netm_forward(const MaskNetParams& params, const SpectralCube& guide, double c);

SamplingMask netm_mask(const MaskNetParams& params, const SpectralCube& guide, double c, std::uint64_t seed,
                       mask::Binarizer binarizer);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  Architecture architecture;
  ReconstructorConfig reconstructor;
};

struct TrainResult {
  MaskNetParams params;
  std::vector<double> epoch_losses;  ///< mean training loss of each epoch
  int steps = 0;
  bool diverged = false;
};

/// Adam on the continuous-map loss; the reconstructor stays fixed. On a
/// non-finite loss training stops and the parameters of the last completed
/// epoch are returned with `diverged` set.
TrainResult train_netm(std::span<const SpectralCube> corpus, double c, const TrainConfig& cfg);
TrainResult train_netm(std::span<const SpectralCube> corpus, double c, const TrainConfig& cfg,
                       const MaskNetParams& init);

/// Mean reconstruction loss over images with the network's continuous map.
double evaluate_loss(const MaskNetParams& params, std::span<const SpectralCube> images, double c,
                     const ReconstructorConfig& recon);
/// Same loss with the uniform map D = c.
double uniform_loss(std::span<const SpectralCube> images, double c, const ReconstructorConfig& recon);

struct MaskEvaluation {
  double netm_binarized_psnr = 0.0;   ///< Bernoulli masks from the network
  double netm_continuous_psnr = 0.0;  ///< continuous map fed to the reconstructor
  double random_psnr = 0.0;           ///< i.i.d. Bernoulli(c) masks
};

/// Mean PSNR over every (image, seed) pair under the frozen reconstructor.
MaskEvaluation evaluate_masks(const MaskNetParams& params, std::span<const SpectralCube> images, double c,
                              const ReconstructorConfig& recon, std::span<const std::uint64_t> seeds);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  ///< perturbation crossed a PReLU kink or clamp boundary
};

/// Compares tape adjoints of the full loss with central differences of step
/// h over randomly chosen trainable entries. Relative error uses
/// max(|a|, |b|, floor) as denominator.
GradCheckReport grad_check(const MaskNetParams& params, const SpectralCube& guide, double c,
                           const ReconstructorConfig& recon, std::size_t samples, std::uint64_t seed,
                           double h = 1e-4, double floor = 1e-8);

/// Random piecewise-constant colour images: rectangles, disks and straight
/// edges on a coloured background.
std::vector<SpectralCube> synthetic_edge_corpus(int count, int size, std::uint64_t seed);

}  // namespace scanweave::masknet
