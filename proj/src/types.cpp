#include "fragtrack/types.hpp"

#include <algorithm>

namespace fragtrack {

void finalize_blob_geometry(Blob& blob) {
  if (blob.pixels.empty()) throw std::logic_error("blob with no pixels");
  std::sort(blob.pixels.begin(), blob.pixels.end());
  blob.pixels.erase(std::unique(blob.pixels.begin(), blob.pixels.end()),
                    blob.pixels.end());
  double sx = 0.0, sy = 0.0;
  blob.bbox = BoundingBox{};
  for (const PixelKey k : blob.pixels) {
    const int x = pixel_x(k);
    const int y = pixel_y(k);
    sx += x;
    sy += y;
    blob.bbox.expand(x, y);
  }
  const double n = static_cast<double>(blob.pixels.size());
  blob.centroid = Vec2(sx / n, sy / n);
}

bool overlap(const Blob& a, const Blob& b) {
  if (a.bbox.max_x >= a.bbox.min_x && b.bbox.max_x >= b.bbox.min_x) {
    if (a.bbox.max_x < b.bbox.min_x || b.bbox.max_x < a.bbox.min_x ||
        a.bbox.max_y < b.bbox.min_y || b.bbox.max_y < a.bbox.min_y)
      return false;
  }
  auto i = a.pixels.begin();
  auto j = b.pixels.begin();
  while (i != a.pixels.end() && j != b.pixels.end()) {
    if (*i == *j) return true;
    if (*i < *j)
      ++i;
    else
      ++j;
  }
  return false;
}

void SegmentationParams::validate() const {
  if (min_intensity > max_intensity)
    throw std::invalid_argument("min_intensity > max_intensity");
  if (min_area > max_area) throw std::invalid_argument("min_area > max_area");
  if (min_intensity < 0 || max_intensity > 255)
    throw std::invalid_argument("intensity thresholds outside 0..255");
  if (background_sample_stride < 1)
    throw std::invalid_argument("background_sample_stride < 1");
  if (!(resolution_reduction > 0.0 && resolution_reduction <= 1.0))
    throw std::invalid_argument("resolution_reduction outside (0, 1]");
}

MaskImage make_polygon_mask(int width, int height,
                            const std::vector<Vec2>& polygon) {
  MaskImage mask(height, width);
  mask.setConstant(false);
  if (polygon.size() < 3) return mask;
  const std::size_t n = polygon.size();
  for (int y = 0; y < height; ++y) {
    const double py = y + 0.0;
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.0;
      bool inside = false;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = polygon[i];
        const Vec2& b = polygon[j];
        if ((a.y() > py) != (b.y() > py)) {
          const double x_cross =
              (b.x() - a.x()) * (py - a.y()) / (b.y() - a.y()) + a.x();
          if (px < x_cross) inside = !inside;
        }
      }
      mask(y, x) = inside;
    }
  }
  return mask;
}

}  // namespace fragtrack
