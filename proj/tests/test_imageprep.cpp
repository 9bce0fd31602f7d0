#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fragtrack/imageprep.hpp"

using namespace fragtrack;

namespace {

Blob make_blob(const std::vector<std::pair<int, int>>& xy) {
  Blob b;
  for (const auto& [x, y] : xy) b.pixels.push_back(pack_pixel(x, y));
  finalize_blob_geometry(b);
  return b;
}

ImageF frame_with(const Blob& blob, int w, int h, float value) {
  ImageF frame(h, w);
  frame.setZero();
  for (const PixelKey k : blob.pixels) frame(pixel_y(k), pixel_x(k)) = value;
  return frame;
}

double blob_mass(const ImageF& img) { return img.cast<double>().sum(); }

}  // namespace

TEST_CASE("extract_masked_image keeps the dilated blob and zeroes the rest") {
  Blob b = make_blob({{10, 10}});
  ImageF frame(21, 21);
  frame.setConstant(50.0f);
  const ImageF crop = extract_masked_image(frame, b);
  // 5x5 dilation of a single pixel: 25 nonzero pixels.
  int nonzero = 0;
  for (int y = 0; y < crop.rows(); ++y)
    for (int x = 0; x < crop.cols(); ++x)
      if (crop(y, x) > 0.0f) ++nonzero;
  CHECK(nonzero == 25);
}

TEST_CASE("masking removes another blob outside the halo") {
  Blob b = make_blob({{5, 5}, {6, 5}});
  ImageF frame(12, 12);
  frame.setZero();
  frame(5, 5) = 80.0f;
  frame(5, 6) = 80.0f;
  frame(5, 10) = 70.0f;  // second blob, outside the 5x5 dilation of b
  const ImageF crop = extract_masked_image(frame, b);
  CHECK(blob_mass(crop) == doctest::Approx(160.0));
}

TEST_CASE("blob touching the frame edge is zero padded") {
  Blob b = make_blob({{0, 0}, {1, 0}, {0, 1}});
  ImageF frame(8, 8);
  frame.setConstant(100.0f);
  const ImageF crop = extract_masked_image(frame, b);
  CHECK(blob_mass(crop) > 0.0);
  // Pixels mapped from outside the frame are zero, not repeated.
  CHECK(crop(0, 0) == 0.0f);
}

TEST_CASE("horizontal bar rotates by +45 degrees") {
  std::vector<std::pair<int, int>> xy;
  for (int x = 2; x < 12; ++x) xy.push_back({x, 6});
  Blob bar = make_blob(xy);
  const ImageF frame = frame_with(bar, 16, 13, 90.0f);
  const ImageF crop = extract_masked_image(frame, bar);
  const NormalizedImage img = orient_and_crop(crop, bar, 15);
  CHECK(img.applied_rotation == doctest::Approx(M_PI / 4.0));
}

TEST_CASE("bar already at 45 degrees needs no rotation") {
  std::vector<std::pair<int, int>> xy;
  for (int i = 2; i < 11; ++i) xy.push_back({i, i});
  Blob bar = make_blob(xy);
  const ImageF frame = frame_with(bar, 14, 14, 90.0f);
  const ImageF crop = extract_masked_image(frame, bar);
  const NormalizedImage img = orient_and_crop(crop, bar, 15);
  CHECK(img.applied_rotation == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("disc with equal eigenvalues applies the zero-rotation tie rule") {
  std::vector<std::pair<int, int>> xy;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x)
      if (x * x + y * y <= 9) xy.push_back({8 + x, 8 + y});
  Blob disc = make_blob(xy);
  const ImageF frame = frame_with(disc, 17, 17, 90.0f);
  const ImageF crop = extract_masked_image(frame, disc);
  const NormalizedImage img = orient_and_crop(crop, disc, 17);
  CHECK(img.applied_rotation == 0.0);
}

TEST_CASE("rotation preserves mass within interpolation tolerance") {
  std::vector<std::pair<int, int>> xy;
  for (int x = 4; x < 14; ++x)
    for (int y = 8; y < 11; ++y) xy.push_back({x, y});
  Blob bar = make_blob(xy);
  const ImageF frame = frame_with(bar, 20, 20, 100.0f);
  const ImageF crop = extract_masked_image(frame, bar);
  const NormalizedImage img = orient_and_crop(crop, bar, 31);
  const double before = blob_mass(crop);
  const double after = blob_mass(img.values);
  CHECK(std::abs(after - before) <= 0.02 * 100.0 * bar.area());
}

TEST_CASE("standardize hits zero mean unit variance and is idempotent") {
  ImageF img(1, 2);
  img(0, 0) = 8.0f;
  img(0, 1) = 12.0f;
  standardize(img);
  CHECK(img(0, 0) == doctest::Approx(-1.0));
  CHECK(img(0, 1) == doctest::Approx(1.0));
  ImageF again = img;
  standardize(again);
  CHECK((again - img).abs().maxCoeff() < 1e-6);

  ImageF constant(3, 3);
  constant.setConstant(42.0f);
  standardize(constant);
  CHECK(constant.abs().maxCoeff() == 0.0f);
}

TEST_CASE("preprocessed images satisfy the standardization invariant") {
  std::vector<std::pair<int, int>> xy;
  for (int x = 3; x < 10; ++x)
    for (int y = 5; y < 8; ++y) xy.push_back({x, y});
  Blob blob = make_blob(xy);
  ImageF frame = frame_with(blob, 14, 14, 0.0f);
  for (const PixelKey k : blob.pixels)
    frame(pixel_y(k), pixel_x(k)) = 60.0f + pixel_x(k) * 3.0f;
  const NormalizedImage img = preprocess_identification(frame, blob, 12);
  const double mean = img.values.cast<double>().mean();
  const double var = (img.values.cast<double>() - mean).square().mean();
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-5);
}

TEST_CASE("identification side is the median diagonal over sqrt(2)") {
  // Diagonals 73.5 (paper zebrafish scale) -> side 52.
  std::vector<Blob> blobs;
  auto blob_with_bbox = [](int w, int h) {
    std::vector<std::pair<int, int>> xy;
    xy.push_back({0, 0});
    xy.push_back({w - 1, h - 1});
    Blob b;
    for (auto& [x, y] : xy) b.pixels.push_back(pack_pixel(x, y));
    finalize_blob_geometry(b);
    return b;
  };
  // bbox 52x52 has diagonal 73.5391; a single blob's median is itself.
  Blob zebra = blob_with_bbox(52, 52);
  std::vector<const Blob*> one{&zebra};
  CHECK(identification_image_side(one) == 52);

  Blob small = blob_with_bbox(11, 9);  // diagonal sqrt(121+81)=14.213
  std::vector<const Blob*> single{&small};
  CHECK(identification_image_side(single) == 10);
}

TEST_CASE("dcd images are always 40x40") {
  std::vector<std::pair<int, int>> xy;
  for (int x = 0; x < 9; ++x)
    for (int y = 0; y < 5; ++y) xy.push_back({x + 3, y + 3});
  Blob blob = make_blob(xy);
  const ImageF frame = frame_with(blob, 16, 12, 100.0f);
  const NormalizedImage img = preprocess_dcd(frame, blob, 9);
  CHECK(img.side() == 40);
}

TEST_CASE("preprocessing is deterministic") {
  std::vector<std::pair<int, int>> xy;
  for (int x = 3; x < 11; ++x) xy.push_back({x, 6});
  Blob blob = make_blob(xy);
  const ImageF frame = frame_with(blob, 14, 13, 77.0f);
  const NormalizedImage a = preprocess_identification(frame, blob, 11);
  const NormalizedImage b = preprocess_identification(frame, blob, 11);
  CHECK((a.values == b.values).all());
}
