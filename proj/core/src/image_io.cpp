#include "rdseg/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdseg {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what,
                       std::size_t offset) {
  throw std::runtime_error(path.string() + ": " + what + " at byte offset " +
                           std::to_string(offset));
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void dump(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void push_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kImgf32Magic[] = "IMGF32\n";
constexpr std::size_t kImgf32MagicLen = 7;

bool is_pgm(const std::vector<std::uint8_t>& b) {
  return b.size() >= 2 && b[0] == 'P' && b[1] == '5';
}

bool is_imgf32(const std::vector<std::uint8_t>& b) {
  return b.size() >= kImgf32MagicLen && std::memcmp(b.data(), kImgf32Magic, kImgf32MagicLen) == 0;
}

// PGM header token scanner; tracks the byte offset for diagnostics and skips
// '#' comments.
struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PgmHeader parse_pgm_header(const std::filesystem::path& path,
                           const std::vector<std::uint8_t>& b) {
  std::size_t pos = 2;  // past "P5"
  auto next_int = [&](const char* what) -> int {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) {
      fail(path, std::string("expected ") + what + " in PGM header", pos);
    }
    long value = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      value = value * 10 + (b[pos] - '0');
      if (value > 1'000'000'000) fail(path, std::string(what) + " out of range", pos);
      ++pos;
    }
    return static_cast<int>(value);
  };

  PgmHeader h;
  h.width = next_int("width");
  h.height = next_int("height");
  h.maxval = next_int("maxval");
  if (pos >= b.size() || !std::isspace(b[pos])) {
    fail(path, "expected single whitespace after maxval", pos);
  }
  ++pos;
  h.data_offset = pos;
  if (h.width < 1 || h.height < 1) fail(path, "non-positive PGM dimensions", 2);
  if (h.maxval < 1 || h.maxval > 65535) fail(path, "PGM maxval out of range", 2);
  return h;
}

Grid read_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  const PgmHeader h = parse_pgm_header(path, b);
  const std::size_t count = static_cast<std::size_t>(h.width) * h.height;
  const std::size_t sample_bytes = h.maxval > 255 ? 2 : 1;
  const std::size_t need = h.data_offset + count * sample_bytes;
  if (b.size() < need) fail(path, "truncated PGM payload", b.size());

  Grid g(h.height, h.width);
  const double inv = 1.0 / h.maxval;
  const std::uint8_t* p = b.data() + h.data_offset;
  if (sample_bytes == 1) {
    for (std::size_t i = 0; i < count; ++i) g.v[i] = p[i] * inv;
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      // 16-bit PGM samples are most-significant byte first.
      g.v[i] = ((static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1]) * inv;
    }
  }
  return g;
}

Grid read_imgf32(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  if (b.size() < kImgf32MagicLen + 8) fail(path, "truncated IMGF32 header", b.size());
  const std::uint32_t width = read_u32le(b.data() + kImgf32MagicLen);
  const std::uint32_t height = read_u32le(b.data() + kImgf32MagicLen + 4);
  if (width == 0 || height == 0 || width > 1u << 20 || height > 1u << 20) {
    fail(path, "implausible IMGF32 dimensions", kImgf32MagicLen);
  }
  const std::size_t count = static_cast<std::size_t>(width) * height;
  const std::size_t need = kImgf32MagicLen + 8 + count * 4;
  if (b.size() < need) fail(path, "truncated IMGF32 payload", b.size());

  Grid g(static_cast<int>(height), static_cast<int>(width));
  const std::uint8_t* p = b.data() + kImgf32MagicLen + 8;
  for (std::size_t i = 0; i < count; ++i) {
    g.v[i] = std::bit_cast<float>(read_u32le(p + 4 * i));
  }
  return g;
}

}  // namespace

Grid read_raster(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (is_pgm(bytes)) return read_pgm(path, bytes);
  if (is_imgf32(bytes)) return read_imgf32(path, bytes);
  fail(path, "unrecognized raster magic", 0);
}

namespace {

void write_pgm(const std::filesystem::path& path, const Grid& g, int maxval) {
  std::string header = "P5\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n" +
                       std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (double v : g.v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    const long q = std::lround(clamped * maxval);
    if (maxval > 255) {
      bytes.push_back(static_cast<std::uint8_t>((q >> 8) & 0xff));
      bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
    } else {
      bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
  }
  dump(path, bytes);
}

}  // namespace

void write_raster_pgm8(const std::filesystem::path& path, const Grid& g) {
  write_pgm(path, g, 255);
}

void write_raster_pgm16(const std::filesystem::path& path, const Grid& g) {
  write_pgm(path, g, 65535);
}

void write_raster_imgf32(const std::filesystem::path& path, const Grid& g) {
  std::vector<std::uint8_t> bytes(kImgf32Magic, kImgf32Magic + kImgf32MagicLen);
  push_u32le(bytes, static_cast<std::uint32_t>(g.w));
  push_u32le(bytes, static_cast<std::uint32_t>(g.h));
  for (double v : g.v) {
    push_u32le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  dump(path, bytes);
}

void write_raster(const std::filesystem::path& path, const Grid& g) {
  const auto ext = path.extension().string();
  if (ext == ".pgm") {
    write_raster_pgm8(path, g);
  } else if (ext == ".imgf32") {
    write_raster_imgf32(path, g);
  } else {
    throw std::runtime_error(path.string() + ": unsupported raster extension \"" + ext +
                             "\" (use .pgm or .imgf32)");
  }
}

Mask read_mask(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (!is_pgm(bytes)) fail(path, "mask is not a binary PGM", 0);
  const PgmHeader h = parse_pgm_header(path, bytes);
  if (h.maxval != 255) fail(path, "mask maxval must be 255", 2);
  const std::size_t count = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() < h.data_offset + count) fail(path, "truncated mask payload", bytes.size());

  Mask m(h.height, h.width);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t v = bytes[h.data_offset + i];
    if (v != 0 && v != 255) {
      fail(path, "nonbinary mask value " + std::to_string(v), h.data_offset + i);
    }
    m.v[i] = v == 255 ? 1 : 0;
  }
  return m;
}

void write_mask(const std::filesystem::path& path, const Mask& m) {
  std::string header = "P5\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (auto v : m.v) bytes.push_back(v ? 255 : 0);
  dump(path, bytes);
}

}  // namespace rdseg
