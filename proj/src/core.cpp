#include "scanweave/core.hpp"

#include <algorithm>
#include <string>

#include "scanweave/error.hpp"

namespace scanweave {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

SpectralCube::SpectralCube(int width, int height, int bands)
    : width_(width), height_(height) {
  if (width < 0 || height < 0 || bands < 0) {
    throw DimensionError("SpectralCube: negative extent");
  }
  data_ = Matrix::Zero(bands, static_cast<Eigen::Index>(width) * height);
}

SpectralCube::SpectralCube(int width, int height, Matrix data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.cols() != static_cast<Eigen::Index>(width) * height) {
    throw DimensionError("SpectralCube: matrix has " + std::to_string(data_.cols()) +
                         " columns, expected " + std::to_string(width * height));
  }
}

std::vector<double> SpectralCube::band_image(int band) const {
  std::vector<double> out(pixels());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = data_(band, static_cast<Eigen::Index>(p));
  return out;
}

SamplingMask::SamplingMask(int width, int height, double rate)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(width) * height, 0), rate_(rate) {}

SamplingMask::SamplingMask(int width, int height, std::vector<std::uint8_t> bits, double rate)
    : width_(width), height_(height), bits_(std::move(bits)), rate_(rate) {
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionError("SamplingMask: bit count does not match extent");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t SamplingMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double SamplingMask::realized_rate() const {
  return bits_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(bits_.size());
}

double ProbMap::mean() const {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

SelectionOperator::SelectionOperator(const SamplingMask& mask) : total_(mask.pixels()) {
  indices_.reserve(mask.count());
  for (std::size_t p = 0; p < mask.pixels(); ++p) {
    if (mask[p]) indices_.push_back(static_cast<Eigen::Index>(p));
  }
}

SelectionOperator::SelectionOperator(std::vector<Eigen::Index> indices, std::size_t total_pixels)
    : indices_(std::move(indices)), total_(total_pixels) {
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    if (indices_[k] < 0 || static_cast<std::size_t>(indices_[k]) >= total_) {
      throw DimensionError("SelectionOperator: index out of range");
    }
    if (k > 0 && indices_[k] <= indices_[k - 1]) {
      throw DimensionError("SelectionOperator: indices must be strictly increasing");
    }
  }
}

Matrix mix(const Dictionary& dictionary, const Abundance& abundance) {
  if (dictionary.cols() != abundance.rows()) {
    throw DimensionError("mix: dictionary " + shape_str(dictionary) + " vs abundance " +
                         shape_str(abundance));
  }
  return dictionary * abundance;
}

Matrix subsample(const Matrix& full, const SelectionOperator& selection) {
  if (static_cast<std::size_t>(full.cols()) != selection.total()) {
    throw DimensionError("subsample: selection built for " + std::to_string(selection.total()) +
                         " pixels, matrix has " + std::to_string(full.cols()));
  }
  Matrix out(full.rows(), static_cast<Eigen::Index>(selection.kept()));
  const auto idx = selection.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = full.col(idx[k]);
  }
  return out;
}

Matrix subsample(const SpectralCube& cube, const SelectionOperator& selection) {
  return subsample(cube.matrix(), selection);
}

Matrix embed(const Matrix& sampled, const SelectionOperator& selection) {
  if (static_cast<std::size_t>(sampled.cols()) != selection.kept()) {
    throw DimensionError("embed: column count does not match selection");
  }
  Matrix out = Matrix::Zero(sampled.rows(), static_cast<Eigen::Index>(selection.total()));
  const auto idx = selection.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.col(idx[k]) = sampled.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

Matrix combine_visible_nonvisible(const Matrix& visible, const Matrix& nonvisible) {
  if (visible.rows() != nonvisible.rows() || visible.cols() != nonvisible.cols()) {
    throw DimensionError("combine_visible_nonvisible: " + shape_str(visible) + " vs " +
                         shape_str(nonvisible));
  }
  return visible + nonvisible;
}

Matrix clamp_unit(const Matrix& m) { return m.cwiseMax(0.0).cwiseMin(1.0); }

SpectralCube scale_to_unit(SpectralCube cube) {
  Matrix& m = cube.matrix();
  m = m.cwiseMax(0.0);
  const double peak = m.size() ? m.maxCoeff() : 0.0;
  if (peak > 1.0) m /= peak;
  return cube;
}

SpectralCube masked_cube(const SpectralCube& cube, const SamplingMask& mask) {
  if (static_cast<std::size_t>(cube.pixels()) != mask.pixels() || cube.width() != mask.width()) {
    throw DimensionError("masked_cube: mask and cube extents differ");
  }
  SpectralCube out = cube;
  for (std::size_t p = 0; p < mask.pixels(); ++p) {
    if (!mask[p]) out.matrix().col(static_cast<Eigen::Index>(p)).setZero();
  }
  return out;
}

}  // namespace scanweave
