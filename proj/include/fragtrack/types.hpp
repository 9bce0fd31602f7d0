#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fragtrack {

// Images are indexed (row, col) = (y, x). Grayscale 8-bit for raw frames,
// float for anything downstream of normalization.
using GrayImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using ImageF = Eigen::ArrayXXf;
using MaskImage = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Vec2 = Eigen::Vector2d;

// Pixel coordinates packed as (y << 16) | x so that ascending key order is
// row-major scan order. Frames wider or taller than 65535 px are rejected at
// load time.
using PixelKey = std::uint32_t;

constexpr PixelKey pack_pixel(int x, int y) {
  return (static_cast<PixelKey>(y) << 16) | static_cast<PixelKey>(x);
}
constexpr int pixel_x(PixelKey k) { return static_cast<int>(k & 0xffffu); }
constexpr int pixel_y(PixelKey k) { return static_cast<int>(k >> 16); }

struct BoundingBox {
  int min_x = 0;
  int min_y = 0;
  int max_x = -1;  // inclusive
  int max_y = -1;  // inclusive

  int width() const { return max_x - min_x + 1; }
  int height() const { return max_y - min_y + 1; }
  double diagonal() const {
    const double w = width();
    const double h = height();
    return std::sqrt(w * w + h * h);
  }
  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
  void expand(int x, int y) {
    if (max_x < min_x) {
      min_x = max_x = x;
      min_y = max_y = y;
      return;
    }
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
};

// A connected set of acceptable pixels in one frame. `pixels` is sorted
// ascending (row-major scan order); `image` is the bounding-box crop of the
// frame with non-blob pixels zeroed, which makes blobs self-contained for
// the blob-stream format.
struct Blob {
  int frame = 0;
  std::vector<PixelKey> pixels;
  Vec2 centroid = Vec2::Zero();
  BoundingBox bbox;
  GrayImage image;

  int area() const { return static_cast<int>(pixels.size()); }
};

// Computes centroid and bbox from the pixel set; pixels must be non-empty.
void finalize_blob_geometry(Blob& blob);

// True iff the two pixel sets intersect. Both must be sorted ascending.
bool overlap(const Blob& a, const Blob& b);

struct SegmentationParams {
  int min_intensity = 0;
  int max_intensity = 255;
  int min_area = 1;
  int max_area = std::numeric_limits<int>::max();
  std::optional<MaskImage> roi;   // true = inside region of interest
  std::vector<Vec2> roi_polygon;  // rasterized into `roi` once dims are known
  bool subtract_background = false;
  int background_sample_stride = 50;
  double resolution_reduction = 1.0;  // in (0, 1]

  void validate() const;
};

// Rasterizes a polygon (vertices in pixel coordinates) into a mask of the
// given size using even-odd ray casting at pixel centers.
MaskImage make_polygon_mask(int width, int height,
                            const std::vector<Vec2>& polygon);

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fragtrack
