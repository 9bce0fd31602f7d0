#pragma once

#include "fragtrack/imageprep.hpp"
#include "fragtrack/rng.hpp"

#include <filesystem>

namespace fragtrack {

// Flattened image rows plus labels. Images are flattenings of side x side
// standardized crops.
struct LabeledDataset {
  Eigen::MatrixXf images;  // items x (side*side)
  Eigen::VectorXi labels;  // items
  int n_classes = 0;
  int side = 0;

  int size() const { return static_cast<int>(images.rows()); }
  Eigen::VectorXi class_counts() const;

  void init(int items, int image_side) {
    side = image_side;
    images.resize(items, image_side * image_side);
    labels.resize(items);
  }
  void set_item(int row, const NormalizedImage& image, int label) {
    Eigen::Map<const Eigen::VectorXf> flat(image.values.data(),
                                           image.values.size());
    images.row(row) = flat;
    labels(row) = label;
  }
  void set_item(int row, const Eigen::Ref<const Eigen::VectorXf>& flat,
                int label) {
    images.row(row) = flat;
    labels(row) = label;
  }
};

// w_i = 1 - |L_i| / sum_j |L_j|
Eigen::VectorXd class_weights(const LabeledDataset& dataset);

// Numerically stable softmax (max subtraction).
Eigen::VectorXd softmax(const Eigen::VectorXd& activations);

// -w * log(max(p_label, 1e-12))
double weighted_cross_entropy(const Eigen::VectorXd& probabilities, int label,
                              double class_weight);

struct TrainConfig;
struct TrainHistory;
class ClassifierModel;
TrainHistory train(ClassifierModel& model, const LabeledDataset& dataset,
                   const TrainConfig& config);

// Feature stage (fully connected 100-unit rectifier layer by default) and
// classification stage (linear + softmax) with independently reinitialized
// or frozen parameter sets.
class ClassifierModel {
 public:
  ClassifierModel() = default;  // empty shell; assign a trained model into it
  ClassifierModel(int input_side, int hidden_units, int n_classes,
                  std::uint64_t seed);

  int input_side() const { return input_side_; }
  int input_dim() const { return input_side_ * input_side_; }
  int hidden_units() const { return static_cast<int>(w1_.rows()); }
  int n_classes() const { return static_cast<int>(w2_.rows()); }

  // Rows of probabilities, one per input row.
  Eigen::MatrixXd predict(const Eigen::MatrixXf& batch) const;

  // Xavier reinitialization of the classification stage only.
  void reinit_classifier(std::uint64_t seed);

  // Feature stage parameters (read access for the freeze/reinit contracts).
  const Eigen::MatrixXd& feature_weights() const { return w1_; }
  const Eigen::VectorXd& feature_bias() const { return b1_; }
  const Eigen::MatrixXd& classifier_weights() const { return w2_; }
  const Eigen::VectorXd& classifier_bias() const { return b2_; }

  void save(const std::filesystem::path& path) const;
  static ClassifierModel load(const std::filesystem::path& path);

 private:
  friend TrainHistory train(ClassifierModel&, const LabeledDataset&,
                            const TrainConfig&);

  int input_side_ = 0;
  Eigen::MatrixXd w1_;  // hidden x dim
  Eigen::VectorXd b1_;  // hidden
  Eigen::MatrixXd w2_;  // classes x hidden
  Eigen::VectorXd b2_;  // classes
};

enum class Optimizer { sgd, adaptive_moments };

struct TrainConfig {
  double learning_rate = 0.005;
  int batch_size = 500;
  int max_epochs = 10000;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
  bool freeze_features = false;
  bool augment_rotated = true;  // duplicate training items rotated 180 degrees
  double validation_fraction = 0.1;
};

inline TrainConfig dcd_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 100;
  cfg.max_epochs = 100;
  cfg.optimizer = Optimizer::adaptive_moments;
  return cfg;
}

enum class StopReason {
  keep_going,
  overfit,
  plateau,
  perfect,
  zero_loss,
  epoch_cap,
  diverged,
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  Eigen::VectorXd val_class_accuracy;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  StopReason outcome = StopReason::keep_going;
  int size() const { return static_cast<int>(epochs.size()); }
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Eigen::VectorXd class_accuracy;
  std::vector<int> absent_classes;  // reported as accuracy 1.0
};

EvalResult evaluate(const ClassifierModel& model, const Eigen::MatrixXf& images,
                    const Eigen::VectorXi& labels,
                    const Eigen::VectorXd& weights);

// Stopping criteria over the validation-loss history, only consulted past
// epoch 10 (1-based). d(i) compares the loss at i against the mean of the
// previous 10 epochs.
StopReason stopping_check(const TrainHistory& history);

// Deterministic 90/10 split by a seeded permutation.
struct TrainValSplit {
  Eigen::MatrixXf train_images;
  Eigen::VectorXi train_labels;
  Eigen::MatrixXf val_images;
  Eigen::VectorXi val_labels;
};
TrainValSplit split_train_val(const LabeledDataset& dataset, double fraction,
                              std::uint64_t seed);

// train(): mini-batch training with per-item class weights; declared above
// ClassifierModel. The model is updated in place. Divergence reports
// StopReason::diverged and leaves the fallback decision to the caller.

// 180-degree rotation of a flattened square image (reverses the coefficient
// order).
Eigen::VectorXf rotate180_flat(const Eigen::VectorXf& flat);

}  // namespace fragtrack
