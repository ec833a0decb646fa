#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace perfcap {

/// One byte per pixel, 0 or 1; row-major.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), 0) {}

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool at(int x, int y) const { return data[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)] != 0; }
  /// Out-of-range pixels read as background.
  bool get(int x, int y) const { return inside(x, y) && at(x, y); }
  void set(int x, int y, bool v = true) {
    data[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)] = v ? 1 : 0;
  }
  long count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

/// 8-bit RGB, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, 0) {}

  const uint8_t* pixel(int x, int y) const { return &data[(static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3]; }
  uint8_t* pixel(int x, int y) { return &data[(static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3]; }
  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    uint8_t* p = pixel(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

/// Intersection over union; 1 when both masks are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);

namespace io {
/// PNG or binary PPM (P6), chosen by file signature.
RgbImage load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const RgbImage& img);
/// Any PNG; a pixel is foreground when its first channel exceeds 127.
BinaryMask load_mask(const std::filesystem::path& path);
/// 8-bit grayscale PNG with values 0/255.
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);
}  // namespace io

}  // namespace perfcap
