#pragma once

// Domain types shared by every module, the linear mixing algebra and the
// pixel-selection operator.
//
// Pixel order is row-major: pixel (row, col) of a width x height image has
// index row * width + col. A cube's matrix view is bands x pixels, one column
// per pixel, so the Eigen column-major storage is band-major per pixel.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace scanweave {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Endmember dictionary, rows = bands (B or b), columns = atoms M.
using Dictionary = Matrix;
/// Abundance map, rows = atoms M, columns = pixels.
using Abundance = Matrix;

class SpectralCube {
 public:
  SpectralCube() = default;
  SpectralCube(int width, int height, int bands);
  /// Takes ownership of a bands x (width*height) matrix.
  SpectralCube(int width, int height, Matrix data);

  int width() const { return width_; }
  int height() const { return height_; }
  int bands() const { return static_cast<int>(data_.rows()); }
  std::size_t pixels() const { return static_cast<std::size_t>(width_) * height_; }

  double at(int row, int col, int band) const { return data_(band, index(row, col)); }
  double& at(int row, int col, int band) { return data_(band, index(row, col)); }
  Eigen::Index index(int row, int col) const {
    return static_cast<Eigen::Index>(row) * width_ + col;
  }

  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }

  /// One band as a height x width row-major image.
  std::vector<double> band_image(int band) const;

  bool same_shape(const SpectralCube& other) const {
    return width_ == other.width_ && height_ == other.height_ && bands() == other.bands();
  }

 private:
  int width_ = 0;
  int height_ = 0;
  Matrix data_;
};

/// Binary per-pixel acquisition mask plus the commanded budget.
class SamplingMask {
 public:
  SamplingMask() = default;
  SamplingMask(int width, int height, double rate);
  SamplingMask(int width, int height, std::vector<std::uint8_t> bits, double rate);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixels() const { return bits_.size(); }
  double rate() const { return rate_; }

  bool at(int row, int col) const { return bits_[static_cast<std::size_t>(row) * width_ + col] != 0; }
  void set(int row, int col, bool v) { bits_[static_cast<std::size_t>(row) * width_ + col] = v ? 1 : 0; }
  bool operator[](std::size_t p) const { return bits_[p] != 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t count() const;
  double realized_rate() const;

  friend bool operator==(const SamplingMask& a, const SamplingMask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.bits_ == b.bits_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
  double rate_ = 0.0;
};

/// Continuous relaxation of a mask: per-pixel sampling probabilities.
struct ProbMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  double target_mean = 0.0;

  std::size_t pixels() const { return values.size(); }
  double mean() const;
};

/// Row-major list of kept pixel indices, the matrix S of X = Y S.
class SelectionOperator {
 public:
  SelectionOperator() = default;
  explicit SelectionOperator(const SamplingMask& mask);
  SelectionOperator(std::vector<Eigen::Index> indices, std::size_t total_pixels);

  std::span<const Eigen::Index> indices() const { return indices_; }
  std::size_t kept() const { return indices_.size(); }
  std::size_t total() const { return total_; }

 private:
  std::vector<Eigen::Index> indices_;
  std::size_t total_ = 0;
};

/// D * A, the linear mixing model.
Matrix mix(const Dictionary& dictionary, const Abundance& abundance);

/// Keeps the selected columns of a bands x pixels matrix, order preserved.
Matrix subsample(const Matrix& full, const SelectionOperator& selection);
Matrix subsample(const SpectralCube& cube, const SelectionOperator& selection);

/// Inverse of subsample on the selected set; unselected columns are zero.
Matrix embed(const Matrix& sampled, const SelectionOperator& selection);

/// Y = Y_v + Y_nv. The result is unclamped; clamping happens at export.
Matrix combine_visible_nonvisible(const Matrix& visible, const Matrix& nonvisible);

/// Elementwise clamp to [0, 1] for cube serialization.
Matrix clamp_unit(const Matrix& m);

/// Divides by the cube maximum when any value exceeds 1; negative values are
/// clipped to zero.
SpectralCube scale_to_unit(SpectralCube cube);

/// Full-size cube whose unsampled pixels are zero vectors.
SpectralCube masked_cube(const SpectralCube& cube, const SamplingMask& mask);

}  // namespace scanweave
