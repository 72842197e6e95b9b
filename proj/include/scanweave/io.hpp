#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "scanweave/core.hpp"

namespace scanweave::io {

/// Little-endian scalar helpers shared by the binary formats.
void put_u32(std::ostream& out, std::uint32_t v);
std::uint32_t get_u32(std::istream& in);  ///< throws FormatError at end of file
void put_f32(std::ostream& out, double v);
double get_f32(std::istream& in);

/// SPCB cube file: "SPCB", u32 W, u32 H, u32 B (little endian), then W*H*B
/// little-endian f32 in row-major pixel order, band-major per pixel.
void write_spcb(std::ostream& out, const SpectralCube& cube);
void write_spcb(const std::filesystem::path& path, const SpectralCube& cube);
SpectralCube read_spcb(std::istream& in);
SpectralCube read_spcb(const std::filesystem::path& path);

enum class PbmEncoding { kPlain, kBinary };

/// PBM mask. Bit 1 (black) marks a sampled pixel. The commanded rate is not
/// part of the format; reading sets it to the realized rate.
void write_pbm(std::ostream& out, const SamplingMask& mask, PbmEncoding encoding = PbmEncoding::kBinary);
void write_pbm(const std::filesystem::path& path, const SamplingMask& mask,
               PbmEncoding encoding = PbmEncoding::kBinary);
SamplingMask read_pbm(std::istream& in);
SamplingMask read_pbm(const std::filesystem::path& path);

/// 8-bit PPM (P6). Values are clamped to [0,1] and rounded to 0..255.
void write_ppm(std::ostream& out, const SpectralCube& rgb);
void write_ppm(const std::filesystem::path& path, const SpectralCube& rgb);

/// Reads P6 (3 bands) or P5 (1 band) with maxval <= 255, scaled to [0,1].
SpectralCube read_pnm(std::istream& in);
SpectralCube read_pnm(const std::filesystem::path& path);

/// Every .ppm/.pgm file of a directory, sorted by file name.
std::vector<SpectralCube> read_image_directory(const std::filesystem::path& dir);

}  // namespace scanweave::io
