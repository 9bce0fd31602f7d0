#include "fragtrack/imageprep.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_set>

namespace fragtrack {
namespace {

// Sample with bilinear interpolation; out-of-range reads give 0.
float sample_bilinear(const ImageF& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto at = [&img](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.cols() || yy >= img.rows()) return 0.0;
    return img(yy, xx);
  };
  const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                   fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
  return static_cast<float>(v);
}

// Principal-axis angle of the pixel cloud (population covariance).
// Empty on the equal-eigenvalue tie or degenerate clouds.
std::optional<double> principal_axis_angle(const std::vector<PixelKey>& pixels) {
  if (pixels.size() < 2) return std::nullopt;
  const double n = static_cast<double>(pixels.size());
  double mx = 0, my = 0;
  for (const PixelKey k : pixels) {
    mx += pixel_x(k);
    my += pixel_y(k);
  }
  mx /= n;
  my /= n;
  double cxx = 0, cyy = 0, cxy = 0;
  for (const PixelKey k : pixels) {
    const double dx = pixel_x(k) - mx;
    const double dy = pixel_y(k) - my;
    cxx += dx * dx;
    cyy += dy * dy;
    cxy += dx * dy;
  }
  cxx /= n;
  cyy /= n;
  cxy /= n;
  if (std::abs(cxy) <= 1e-12 && std::abs(cxx - cyy) <= 1e-12)
    return std::nullopt;
  return 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
}

}  // namespace

ImageF extract_masked_image(const ImageF& frame, const Blob& blob) {
  // Half-extent: farthest pixel from the centroid (Euclidean, so the content
  // stays inside under any rotation) plus the 2 px dilation halo and one
  // pixel of interpolation slack.
  double r = 0.0;
  for (const PixelKey k : blob.pixels) {
    const double dx = pixel_x(k) - blob.centroid.x();
    const double dy = pixel_y(k) - blob.centroid.y();
    r = std::max(r, std::sqrt(dx * dx + dy * dy));
  }
  const int half = static_cast<int>(std::ceil(r)) + 3;
  const int cx = static_cast<int>(std::lround(blob.centroid.x()));
  const int cy = static_cast<int>(std::lround(blob.centroid.y()));
  const int side = 2 * half + 1;

  // 5x5 dilation of the pixel set, membership tested per crop pixel.
  std::unordered_set<PixelKey> dilated;
  dilated.reserve(blob.pixels.size() * 8);
  for (const PixelKey k : blob.pixels) {
    const int px = pixel_x(k);
    const int py = pixel_y(k);
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        const int nx = px + dx;
        const int ny = py + dy;
        if (nx < 0 || ny < 0 || nx > 0xffff || ny > 0xffff) continue;
        dilated.insert(pack_pixel(nx, ny));
      }
  }

  ImageF crop(side, side);
  crop.setZero();
  for (int y = 0; y < side; ++y) {
    const int fy = cy - half + y;
    if (fy < 0 || fy >= frame.rows()) continue;
    for (int x = 0; x < side; ++x) {
      const int fx = cx - half + x;
      if (fx < 0 || fx >= frame.cols()) continue;
      if (dilated.count(pack_pixel(fx, fy))) crop(y, x) = frame(fy, fx);
    }
  }
  return crop;
}

NormalizedImage orient_and_crop(const ImageF& crop, const Blob& blob,
                                int target_side) {
  const std::optional<double> theta = principal_axis_angle(blob.pixels);
  const double rotation = theta ? M_PI / 4.0 - *theta : 0.0;
  NormalizedImage out;
  out.applied_rotation = rotation;
  out.values.resize(target_side, target_side);

  // Output pixel (i, j) maps back into the crop by the inverse rotation
  // about the crop center.
  const double c = std::cos(-rotation);
  const double s = std::sin(-rotation);
  const double crop_c = (crop.cols() - 1) / 2.0;
  const double out_c = (target_side - 1) / 2.0;
  for (int y = 0; y < target_side; ++y) {
    for (int x = 0; x < target_side; ++x) {
      const double dx = x - out_c;
      const double dy = y - out_c;
      const double sx = crop_c + c * dx - s * dy;
      const double sy = crop_c + s * dx + c * dy;
      out.values(y, x) = sample_bilinear(crop, sx, sy);
    }
  }
  return out;
}

void standardize(ImageF& image) {
  const double mean = image.cast<double>().mean();
  const double var =
      (image.cast<double>() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (sd <= 0.0) {
    image.setZero();
    return;
  }
  image = ((image.cast<double>() - mean) / sd).cast<float>();
}

ImageF resize_bilinear(const ImageF& in, int side) {
  if (in.rows() == side && in.cols() == side) return in;
  ImageF out(side, side);
  const double sy = static_cast<double>(in.rows()) / side;
  const double sx = static_cast<double>(in.cols()) / side;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      out(y, x) = sample_bilinear(in, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

int identification_image_side(
    const std::vector<const Blob*>& individual_blobs) {
  if (individual_blobs.empty())
    throw std::invalid_argument("no individual blobs to size images from");
  std::vector<double> diagonals;
  diagonals.reserve(individual_blobs.size());
  for (const Blob* b : individual_blobs) diagonals.push_back(b->bbox.diagonal());
  std::sort(diagonals.begin(), diagonals.end());
  const std::size_t n = diagonals.size();
  const double median = n % 2 == 1
                            ? diagonals[n / 2]
                            : 0.5 * (diagonals[n / 2 - 1] + diagonals[n / 2]);
  return static_cast<int>(std::lround(median / std::sqrt(2.0)));
}

int dcd_crop_side(const std::vector<const Blob*>& sure_crossing_blobs) {
  if (sure_crossing_blobs.empty())
    throw std::invalid_argument("no sure crossing blobs to size images from");
  int side = 0;
  for (const Blob* b : sure_crossing_blobs)
    side = std::max({side, b->bbox.width(), b->bbox.height()});
  return side;
}

NormalizedImage preprocess_identification(const ImageF& frame,
                                          const Blob& blob, int side) {
  const ImageF crop = extract_masked_image(frame, blob);
  NormalizedImage img = orient_and_crop(crop, blob, side);
  standardize(img.values);
  return img;
}

NormalizedImage preprocess_dcd(const ImageF& frame, const Blob& blob,
                               int crop_side) {
  const ImageF crop = extract_masked_image(frame, blob);
  NormalizedImage img = orient_and_crop(crop, blob, crop_side);
  img.values = resize_bilinear(img.values, kDcdImageSide);
  standardize(img.values);
  return img;
}

}  // namespace fragtrack
