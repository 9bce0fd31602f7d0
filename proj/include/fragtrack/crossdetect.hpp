#pragma once

#include "fragtrack/blobgraph.hpp"
#include "fragtrack/classifier.hpp"

#include <variant>

namespace fragtrack {

// Crossing-detector label convention: class 0 = crossing, class 1 =
// individual, matching the one-hot encoding l_0 = [1,0] for crossings.
constexpr int kDcdCrossing = 0;
constexpr int kDcdIndividual = 1;

// Raised through the variant below when one sure class is empty and the
// detector cannot be trained.
struct DcdFallbackRequired {
  std::string reason;
};

struct DcdDatasetSpec {
  int max_per_class = 3000;  // subsample cap per class, seeded
  std::uint64_t seed = 0;
};

// Items for the crossing detector: preprocessed 40x40 images of the sure
// blobs, deduplicated by blob identity. Input pairs are (blob, frame
// provider image); preprocessing needs the frame the blob came from.
struct SureBlobImage {
  const Blob* blob = nullptr;
  NormalizedImage image;
};

std::variant<LabeledDataset, DcdFallbackRequired> build_dcd_dataset(
    const std::vector<NormalizedImage>& sure_individuals,
    const std::vector<NormalizedImage>& sure_crossings,
    const DcdDatasetSpec& spec);

// Either a trained binary classifier or the area-model fallback.
struct CrossingDetector {
  std::optional<ClassifierModel> model;
  AreaModel area;
  std::vector<std::string> warnings;

  bool uses_fallback() const { return !model.has_value(); }
};

CrossingDetector train_crossing_detector(
    const std::variant<LabeledDataset, DcdFallbackRequired>& dataset,
    const AreaModel& area, TrainConfig config);

// argmax of the two softmax outputs; exact ties count as individual. The
// fallback applies the area model.
BlobKind classify_blob_image(const CrossingDetector& detector,
                             const NormalizedImage& image, double blob_area);

}  // namespace fragtrack
