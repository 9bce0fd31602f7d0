#pragma once

#include "fragtrack/types.hpp"

namespace fragtrack {

// A standardized square image ready for a classifier: zero mean and unit
// variance unless the constant-image guard fired, in which case all zeros.
struct NormalizedImage {
  ImageF values;               // side x side
  double applied_rotation = 0.0;  // radians
  int side() const { return static_cast<int>(values.rows()); }
};

// Square crop of the frame centered on the blob centroid, large enough to
// hold every blob pixel plus the dilation halo under any rotation. Pixels
// outside the 5x5-dilated blob are set to 0.
ImageF extract_masked_image(const ImageF& frame, const Blob& blob);

// Rotates the crop so the first principal axis of the blob's pixel cloud
// lies at pi/4 with the x axis, then center-crops (or zero-pads) to
// target_side. Equal-eigenvalue ties apply zero rotation.
NormalizedImage orient_and_crop(const ImageF& crop, const Blob& blob,
                                int target_side);

// (I - mean) / std; constant images map to all zeros.
void standardize(ImageF& image);

// Bilinear resize to side x side.
ImageF resize_bilinear(const ImageF& in, int side);

// round(median bounding-box diagonal / sqrt(2)) over individual blobs.
int identification_image_side(const std::vector<const Blob*>& individual_blobs);

// Square-crop side for crossing-detector inputs: the maximum of the largest
// bounding-box side over the sure crossing blobs. Inputs are then resized to
// kDcdImageSide x kDcdImageSide.
int dcd_crop_side(const std::vector<const Blob*>& sure_crossing_blobs);
constexpr int kDcdImageSide = 40;

// Full preprocessing for identification inputs: mask, orient, crop,
// standardize.
NormalizedImage preprocess_identification(const ImageF& frame,
                                          const Blob& blob, int side);

// Full preprocessing for crossing-detector inputs: mask, orient, crop at
// crop_side, resize to 40x40, standardize.
NormalizedImage preprocess_dcd(const ImageF& frame, const Blob& blob,
                               int crop_side);

}  // namespace fragtrack
