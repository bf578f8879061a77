#include "elvit/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace elvit {

namespace {

// exact axis-aligned box SDF, half-extents (bx, by)
double box_sdf(double x, double y, double bx, double by) {
  const double qx = std::fabs(x) - bx, qy = std::fabs(y) - by;
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

// equilateral triangle pointing up, circumradius-ish scale r
double triangle_sdf(double x, double y, double r) {
  const double k = std::sqrt(3.0);
  x = std::fabs(x) - r;
  y = -y + r / k;  // image y grows downward; flip so the apex points up
  if (x + k * y > 0.0) {
    const double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
    x = nx;
    y = ny;
  }
  x -= std::min(std::max(x, -2.0 * r), 0.0);
  return -std::sqrt(x * x + y * y) * (y > 0.0 ? 1.0 : -1.0);
}

uint32_t read_be32(const std::vector<char>& buf, size_t off) {
  return (static_cast<uint32_t>(static_cast<uint8_t>(buf[off])) << 24) |
         (static_cast<uint32_t>(static_cast<uint8_t>(buf[off + 1])) << 16) |
         (static_cast<uint32_t>(static_cast<uint8_t>(buf[off + 2])) << 8) |
         static_cast<uint32_t>(static_cast<uint8_t>(buf[off + 3]));
}

void write_be32(std::ofstream& out, uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_idx: cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void need_bytes(const std::vector<char>& buf, size_t want, const std::string& path,
                size_t offset) {
  if (buf.size() < want)
    throw std::runtime_error("load_idx: truncated file " + path + ": expected " +
                             std::to_string(want) + " bytes, got " + std::to_string(buf.size()) +
                             " (at byte " + std::to_string(offset) + ")");
}

}  // namespace

double shape_sdf(int64_t cls, double x, double y, double r) {
  switch (cls) {
    case 0:  // circle
      return std::sqrt(x * x + y * y) - r;
    case 1:  // square
      return box_sdf(x, y, 0.82 * r, 0.82 * r);
    case 2:  // triangle
      return triangle_sdf(x, y, r);
    case 3: {  // cross: union of two bars
      const double w = 0.35 * r;
      return std::min(box_sdf(x, y, r, w), box_sdf(x, y, w, r));
    }
    default:
      throw std::runtime_error("shape_sdf: unknown class " + std::to_string(cls));
  }
}

IdxRaw load_idx_raw(const std::string& images_path, const std::string& labels_path) {
  auto ibuf = read_file(images_path);
  need_bytes(ibuf, 16, images_path, 0);
  const uint32_t imagic = read_be32(ibuf, 0);
  if (imagic != 0x00000803u)
    throw std::runtime_error("load_idx: bad magic " + hex32(imagic) + " at byte 0 in " +
                             images_path + " (expected 0x00000803)");
  IdxRaw raw;
  raw.count = read_be32(ibuf, 4);
  raw.rows = read_be32(ibuf, 8);
  raw.cols = read_be32(ibuf, 12);
  const size_t ibytes = 16 + static_cast<size_t>(raw.count * raw.rows * raw.cols);
  need_bytes(ibuf, ibytes, images_path, 16);
  raw.pixels.assign(ibuf.begin() + 16, ibuf.begin() + static_cast<int64_t>(ibytes));

  auto lbuf = read_file(labels_path);
  need_bytes(lbuf, 8, labels_path, 0);
  const uint32_t lmagic = read_be32(lbuf, 0);
  if (lmagic != 0x00000801u)
    throw std::runtime_error("load_idx: bad magic " + hex32(lmagic) + " at byte 0 in " +
                             labels_path + " (expected 0x00000801)");
  const int64_t lcount = read_be32(lbuf, 4);
  if (lcount != raw.count)
    throw std::runtime_error("load_idx: image count " + std::to_string(raw.count) +
                             " does not match label count " + std::to_string(lcount));
  need_bytes(lbuf, 8 + static_cast<size_t>(lcount), labels_path, 8);
  raw.labels.assign(lbuf.begin() + 8, lbuf.begin() + 8 + lcount);
  return raw;
}

void write_idx(const IdxRaw& raw, const std::string& images_path,
               const std::string& labels_path) {
  std::ofstream iout(images_path, std::ios::binary);
  if (!iout) throw std::runtime_error("write_idx: cannot open " + images_path);
  write_be32(iout, 0x00000803u);
  write_be32(iout, static_cast<uint32_t>(raw.count));
  write_be32(iout, static_cast<uint32_t>(raw.rows));
  write_be32(iout, static_cast<uint32_t>(raw.cols));
  iout.write(reinterpret_cast<const char*>(raw.pixels.data()),
             static_cast<std::streamsize>(raw.pixels.size()));
  if (!iout) throw std::runtime_error("write_idx: write failed for " + images_path);

  std::ofstream lout(labels_path, std::ios::binary);
  if (!lout) throw std::runtime_error("write_idx: cannot open " + labels_path);
  write_be32(lout, 0x00000801u);
  write_be32(lout, static_cast<uint32_t>(raw.count));
  lout.write(reinterpret_cast<const char*>(raw.labels.data()),
             static_cast<std::streamsize>(raw.labels.size()));
  if (!lout) throw std::runtime_error("write_idx: write failed for " + labels_path);
}

}  // namespace elvit
