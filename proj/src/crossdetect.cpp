#include "fragtrack/crossdetect.hpp"

namespace fragtrack {

std::variant<LabeledDataset, DcdFallbackRequired> build_dcd_dataset(
    const std::vector<NormalizedImage>& sure_individuals,
    const std::vector<NormalizedImage>& sure_crossings,
    const DcdDatasetSpec& spec) {
  if (sure_crossings.empty())
    return DcdFallbackRequired{"no sure crossing images"};
  if (sure_individuals.empty())
    return DcdFallbackRequired{"no sure individual images"};

  Rng rng(derive_seed(spec.seed, 0xdcd0));
  auto pick = [&rng, &spec](std::size_t available) {
    const int n = static_cast<int>(available);
    if (n <= spec.max_per_class) {
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    std::vector<int> sampled =
        rng.sample_without_replacement(n, spec.max_per_class);
    std::sort(sampled.begin(), sampled.end());
    return sampled;
  };
  const std::vector<int> cross_idx = pick(sure_crossings.size());
  const std::vector<int> indiv_idx = pick(sure_individuals.size());

  LabeledDataset dataset;
  dataset.n_classes = 2;
  dataset.init(static_cast<int>(cross_idx.size() + indiv_idx.size()),
               kDcdImageSide);
  int row = 0;
  for (const int i : cross_idx)
    dataset.set_item(row++, sure_crossings[static_cast<std::size_t>(i)],
                     kDcdCrossing);
  for (const int i : indiv_idx)
    dataset.set_item(row++, sure_individuals[static_cast<std::size_t>(i)],
                     kDcdIndividual);
  return dataset;
}

CrossingDetector train_crossing_detector(
    const std::variant<LabeledDataset, DcdFallbackRequired>& dataset,
    const AreaModel& area, TrainConfig config) {
  CrossingDetector detector;
  detector.area = area;
  if (std::holds_alternative<DcdFallbackRequired>(dataset)) {
    detector.warnings.push_back(
        "crossing detector falls back to the area model: " +
        std::get<DcdFallbackRequired>(dataset).reason);
    return detector;
  }
  const LabeledDataset& data = std::get<LabeledDataset>(dataset);
  ClassifierModel model(data.side, 100, 2, derive_seed(config.seed, 0xdcd1));
  const TrainHistory history = train(model, data, config);
  if (history.outcome == StopReason::diverged) {
    detector.warnings.push_back(
        "crossing detector training diverged; falling back to the area model");
    return detector;
  }
  if (history.outcome == StopReason::epoch_cap)
    detector.warnings.push_back(
        "crossing detector training hit the epoch cap");
  detector.model = std::move(model);
  return detector;
}

BlobKind classify_blob_image(const CrossingDetector& detector,
                             const NormalizedImage& image, double blob_area) {
  if (detector.uses_fallback()) {
    return detector.area.is_individual(blob_area) ? BlobKind::individual
                                                  : BlobKind::crossing;
  }
  Eigen::MatrixXf batch(1, image.values.size());
  Eigen::Map<const Eigen::VectorXf> flat(image.values.data(),
                                         image.values.size());
  batch.row(0) = flat;
  const Eigen::MatrixXd probs = detector.model->predict(batch);
  // s1 > s2 means crossing; the tie goes to individual.
  return probs(0, kDcdCrossing) > probs(0, kDcdIndividual)
             ? BlobKind::crossing
             : BlobKind::individual;
}

}  // namespace fragtrack
