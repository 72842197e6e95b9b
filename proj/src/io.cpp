#include "scanweave/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "scanweave/error.hpp"

namespace scanweave::io {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

double get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return in;
}

// Netpbm header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (!std::isspace(ch)) break;
  }
  if (ch == EOF) throw FormatError("truncated netpbm header");
  tok.push_back(static_cast<char>(ch));
  while ((ch = in.peek()) != EOF && !std::isspace(ch) && ch != '#') tok.push_back(static_cast<char>(in.get()));
  return tok;
}

int header_int(std::istream& in) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw FormatError("bad netpbm header value: " + tok);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad netpbm header value: " + tok);
  }
}

}  // namespace

void write_spcb(std::ostream& out, const SpectralCube& cube) {
  out.write("SPCB", 4);
  put_u32(out, static_cast<std::uint32_t>(cube.width()));
  put_u32(out, static_cast<std::uint32_t>(cube.height()));
  put_u32(out, static_cast<std::uint32_t>(cube.bands()));
  const Matrix clamped = clamp_unit(cube.matrix());
  // Column-major storage of the bands x pixels matrix is the file order.
  for (Eigen::Index i = 0; i < clamped.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(clamped.data()[i])));
  }
  if (!out) throw FormatError("write failed");
}

void write_spcb(const std::filesystem::path& path, const SpectralCube& cube) {
  auto out = open_out(path);
  write_spcb(out, cube);
}

SpectralCube read_spcb(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "SPCB", 4) != 0) throw FormatError("not an SPCB cube");
  const std::uint32_t w = get_u32(in);
  const std::uint32_t h = get_u32(in);
  const std::uint32_t b = get_u32(in);
  const std::uint64_t count = static_cast<std::uint64_t>(w) * h * b;
  if (count > (std::uint64_t{1} << 32)) throw FormatError("SPCB cube too large");
  Matrix data(b, static_cast<Eigen::Index>(w) * h);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32(in));
    if (!std::isfinite(f)) throw FormatError("SPCB cube contains a non-finite value");
    data.data()[i] = f;
  }
  return scale_to_unit(SpectralCube(static_cast<int>(w), static_cast<int>(h), std::move(data)));
}

SpectralCube read_spcb(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_spcb(in);
}

void write_pbm(std::ostream& out, const SamplingMask& mask, PbmEncoding encoding) {
  const int w = mask.width();
  const int h = mask.height();
  if (encoding == PbmEncoding::kPlain) {
    out << "P1\n" << w << " " << h << "\n";
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        out << (mask.at(r, c) ? '1' : '0');
        out << ((c + 1 == w || (c + 1) % 35 == 0) ? '\n' : ' ');
      }
    }
  } else {
    out << "P4\n" << w << " " << h << "\n";
    const int row_bytes = (w + 7) / 8;
    std::vector<char> row(static_cast<std::size_t>(row_bytes));
    for (int r = 0; r < h; ++r) {
      std::fill(row.begin(), row.end(), 0);
      for (int c = 0; c < w; ++c) {
        if (mask.at(r, c)) row[static_cast<std::size_t>(c / 8)] |= static_cast<char>(0x80 >> (c % 8));
      }
      out.write(row.data(), row_bytes);
    }
  }
  if (!out) throw FormatError("write failed");
}

void write_pbm(const std::filesystem::path& path, const SamplingMask& mask, PbmEncoding encoding) {
  auto out = open_out(path);
  write_pbm(out, mask, encoding);
}

SamplingMask read_pbm(std::istream& in) {
  const std::string magic = header_token(in);
  if (magic != "P1" && magic != "P4") throw FormatError("not a PBM file (magic " + magic + ")");
  const int w = header_int(in);
  const int h = header_int(in);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  if (magic == "P1") {
    for (auto& bit : bits) {
      int ch;
      do {
        ch = in.get();
        if (ch == '#') {
          while ((ch = in.get()) != EOF && ch != '\n') {}
        }
      } while (ch != EOF && ch != '0' && ch != '1');
      if (ch == EOF) throw FormatError("truncated P1 raster");
      bit = ch == '1' ? 1 : 0;
    }
  } else {
    in.get();  // single whitespace after the header
    const int row_bytes = (w + 7) / 8;
    std::vector<unsigned char> row(static_cast<std::size_t>(row_bytes));
    for (int r = 0; r < h; ++r) {
      in.read(reinterpret_cast<char*>(row.data()), row_bytes);
      if (!in) throw FormatError("truncated P4 raster");
      for (int c = 0; c < w; ++c) {
        bits[static_cast<std::size_t>(r) * w + c] = (row[static_cast<std::size_t>(c / 8)] >> (7 - c % 8)) & 1;
      }
    }
  }
  SamplingMask probe(w, h, bits, 0.0);
  return SamplingMask(w, h, std::move(bits), probe.realized_rate());
}

SamplingMask read_pbm(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_pbm(in);
}

void write_ppm(std::ostream& out, const SpectralCube& rgb) {
  if (rgb.bands() != 3) throw DimensionError("write_ppm: expected 3 bands");
  out << "P6\n" << rgb.width() << " " << rgb.height() << "\n255\n";
  const Matrix& m = rgb.matrix();
  std::vector<char> buf(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double v = std::clamp(m.data()[i], 0.0, 1.0);
    buf[static_cast<std::size_t>(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed");
}

void write_ppm(const std::filesystem::path& path, const SpectralCube& rgb) {
  auto out = open_out(path);
  write_ppm(out, rgb);
}

SpectralCube read_pnm(std::istream& in) {
  const std::string magic = header_token(in);
  int bands = 0;
  if (magic == "P6") {
    bands = 3;
  } else if (magic == "P5") {
    bands = 1;
  } else {
    throw FormatError("unsupported netpbm magic " + magic);
  }
  const int w = header_int(in);
  const int h = header_int(in);
  const int maxval = header_int(in);
  if (maxval <= 0 || maxval > 255) throw FormatError("only 8-bit netpbm images are supported");
  in.get();
  const std::size_t count = static_cast<std::size_t>(w) * h * bands;
  std::vector<unsigned char> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
  if (!in) throw FormatError("truncated netpbm raster");
  Matrix data(bands, static_cast<Eigen::Index>(w) * h);
  for (std::size_t i = 0; i < count; ++i) data.data()[i] = raw[i] / static_cast<double>(maxval);
  return SpectralCube(w, h, std::move(data));
}

SpectralCube read_pnm(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_pnm(in);
}

std::vector<SpectralCube> read_image_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SpectralCube> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(read_pnm(f));
  return images;
}

}  // namespace scanweave::io
