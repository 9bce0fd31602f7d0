#include "fragtrack/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fragtrack {
namespace {

constexpr char kCheckpointMagic[4] = {'F', 'T', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

Eigen::MatrixXd xavier_matrix(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v & 0xff),
                             static_cast<std::uint8_t>((v >> 8) & 0xff),
                             static_cast<std::uint8_t>((v >> 16) & 0xff),
                             static_cast<std::uint8_t>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_block(std::ostream& out, const double* data, std::size_t n) {
  // Little-endian hosts only; asserted at build time below.
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * sizeof(double)));
}

void read_f64_block(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(double)));
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

}  // namespace

Eigen::VectorXi LabeledDataset::class_counts() const {
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_classes);
  for (int i = 0; i < labels.size(); ++i) ++counts(labels(i));
  return counts;
}

Eigen::VectorXd class_weights(const LabeledDataset& dataset) {
  const Eigen::VectorXi counts = dataset.class_counts();
  const double total = static_cast<double>(counts.sum());
  Eigen::VectorXd w(dataset.n_classes);
  for (int i = 0; i < dataset.n_classes; ++i)
    w(i) = 1.0 - static_cast<double>(counts(i)) / total;
  return w;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& activations) {
  const double m = activations.maxCoeff();
  Eigen::VectorXd e = (activations.array() - m).exp();
  return e / e.sum();
}

double weighted_cross_entropy(const Eigen::VectorXd& probabilities, int label,
                              double class_weight) {
  return -class_weight * std::log(std::max(probabilities(label), 1e-12));
}

ClassifierModel::ClassifierModel(int input_side, int hidden_units,
                                 int n_classes, std::uint64_t seed)
    : input_side_(input_side) {
  Rng rng(derive_seed(seed, 0xfea7));
  const int dim = input_side * input_side;
  w1_ = xavier_matrix(hidden_units, dim, rng);
  b1_ = Eigen::VectorXd::Zero(hidden_units);
  w2_ = xavier_matrix(n_classes, hidden_units, rng);
  b2_ = Eigen::VectorXd::Zero(n_classes);
}

void ClassifierModel::reinit_classifier(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xc1a5));
  w2_ = xavier_matrix(n_classes(), hidden_units(), rng);
  b2_ = Eigen::VectorXd::Zero(n_classes());
}

Eigen::MatrixXd ClassifierModel::predict(const Eigen::MatrixXf& batch) const {
  const Eigen::MatrixXd x = batch.cast<double>();
  Eigen::MatrixXd h = (x * w1_.transpose()).rowwise() + b1_.transpose();
  h = h.cwiseMax(0.0);
  Eigen::MatrixXd a = (h * w2_.transpose()).rowwise() + b2_.transpose();
  for (int r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    a.row(r) = (a.row(r).array() - m).exp();
    a.row(r) /= a.row(r).sum();
  }
  return a;
}

void ClassifierModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(input_side_));
  write_u32(out, static_cast<std::uint32_t>(hidden_units()));
  write_u32(out, static_cast<std::uint32_t>(n_classes()));
  write_f64_block(out, w1_.data(), static_cast<std::size_t>(w1_.size()));
  write_f64_block(out, b1_.data(), static_cast<std::size_t>(b1_.size()));
  write_f64_block(out, w2_.data(), static_cast<std::size_t>(w2_.size()));
  write_f64_block(out, b2_.data(), static_cast<std::size_t>(b2_.size()));
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path.string() + ": not a model checkpoint");
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  const int side = static_cast<int>(read_u32(in));
  const int hidden = static_cast<int>(read_u32(in));
  const int classes = static_cast<int>(read_u32(in));
  ClassifierModel model;
  model.input_side_ = side;
  model.w1_.resize(hidden, side * side);
  model.b1_.resize(hidden);
  model.w2_.resize(classes, hidden);
  model.b2_.resize(classes);
  read_f64_block(in, model.w1_.data(), static_cast<std::size_t>(model.w1_.size()));
  read_f64_block(in, model.b1_.data(), static_cast<std::size_t>(model.b1_.size()));
  read_f64_block(in, model.w2_.data(), static_cast<std::size_t>(model.w2_.size()));
  read_f64_block(in, model.b2_.data(), static_cast<std::size_t>(model.b2_.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return model;
}

EvalResult evaluate(const ClassifierModel& model, const Eigen::MatrixXf& images,
                    const Eigen::VectorXi& labels,
                    const Eigen::VectorXd& weights) {
  if (images.rows() == 0) throw std::invalid_argument("empty evaluation set");
  const int n_classes = model.n_classes();
  const Eigen::MatrixXd probs = model.predict(images);
  EvalResult result;
  Eigen::VectorXi per_class_total = Eigen::VectorXi::Zero(n_classes);
  Eigen::VectorXi per_class_correct = Eigen::VectorXi::Zero(n_classes);
  double loss = 0.0;
  int correct = 0;
  for (int i = 0; i < images.rows(); ++i) {
    const int label = labels(i);
    Eigen::Index argmax;
    probs.row(i).maxCoeff(&argmax);
    ++per_class_total(label);
    if (static_cast<int>(argmax) == label) {
      ++correct;
      ++per_class_correct(label);
    }
    loss += -weights(label) * std::log(std::max(probs(i, label), 1e-12));
  }
  result.loss = loss / static_cast<double>(images.rows());
  result.accuracy = static_cast<double>(correct) / images.rows();
  result.class_accuracy.resize(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    if (per_class_total(c) == 0) {
      result.class_accuracy(c) = 1.0;
      result.absent_classes.push_back(c);
    } else {
      result.class_accuracy(c) =
          static_cast<double>(per_class_correct(c)) / per_class_total(c);
    }
  }
  return result;
}

StopReason stopping_check(const TrainHistory& history) {
  const int n = history.size();  // epochs are 1-based positions 1..n
  if (n <= 10) return StopReason::keep_going;
  auto loss = [&history](int epoch) {  // 1-based
    return history.epochs[static_cast<std::size_t>(epoch - 1)].val_loss;
  };
  auto d = [&](int epoch) {
    double mean = 0.0;
    for (int j = epoch - 10; j < epoch; ++j) mean += loss(j);
    return loss(epoch) - mean / 10.0;
  };

  // (a) overfitting: d positive for the last 5 epochs (all of which must be
  // past the first 10 so d is defined).
  if (n >= 15) {
    bool all_positive = true;
    for (int i = n - 4; i <= n; ++i)
      if (d(i) <= 0.0) {
        all_positive = false;
        break;
      }
    if (all_positive) return StopReason::overfit;
  }
  // (b) plateau
  const double current = loss(n);
  if (current > 0.0) {
    const double threshold =
        0.05 * std::pow(10.0, std::log10(current) - 1.0);
    if (std::abs(d(n)) < threshold) return StopReason::plateau;
  }
  // (c) class accuracy 1 on every class
  const Eigen::VectorXd& acc =
      history.epochs[static_cast<std::size_t>(n - 1)].val_class_accuracy;
  if (acc.size() > 0 && (acc.array() >= 1.0).all()) return StopReason::perfect;
  // (d) zero loss
  if (current == 0.0) return StopReason::zero_loss;
  return StopReason::keep_going;
}

TrainValSplit split_train_val(const LabeledDataset& dataset, double fraction,
                              std::uint64_t seed) {
  const int n = dataset.size();
  if (n < 10) throw std::invalid_argument("dataset too small to split");
  const int n_train = static_cast<int>(std::lround(n * fraction));
  if (n_train <= 0 || n_train >= n)
    throw std::invalid_argument("split leaves an empty train or val set");
  Rng rng(derive_seed(seed, 0x5917));
  const std::vector<int> perm = rng.permutation(n);
  TrainValSplit split;
  split.train_images.resize(n_train, dataset.images.cols());
  split.train_labels.resize(n_train);
  split.val_images.resize(n - n_train, dataset.images.cols());
  split.val_labels.resize(n - n_train);
  for (int i = 0; i < n_train; ++i) {
    split.train_images.row(i) = dataset.images.row(perm[static_cast<std::size_t>(i)]);
    split.train_labels(i) = dataset.labels(perm[static_cast<std::size_t>(i)]);
  }
  for (int i = n_train; i < n; ++i) {
    split.val_images.row(i - n_train) =
        dataset.images.row(perm[static_cast<std::size_t>(i)]);
    split.val_labels(i - n_train) = dataset.labels(perm[static_cast<std::size_t>(i)]);
  }
  return split;
}

Eigen::VectorXf rotate180_flat(const Eigen::VectorXf& flat) {
  return flat.reverse();
}

TrainHistory train(ClassifierModel& model, const LabeledDataset& dataset,
                   const TrainConfig& config) {
  if (dataset.n_classes > model.n_classes())
    throw std::invalid_argument("dataset has more classes than the model");
  if (dataset.images.cols() != model.input_dim())
    throw std::invalid_argument("dataset image size does not match the model");

  const Eigen::VectorXd weights = [&] {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(model.n_classes());
    const Eigen::VectorXd dw = class_weights(dataset);
    w.head(dataset.n_classes) = dw;
    return w;
  }();

  TrainValSplit split =
      split_train_val(dataset, 1.0 - config.validation_fraction, config.seed);

  // Orientation ambiguity: every training item also appears rotated by 180
  // degrees. Validation stays unrotated.
  Eigen::MatrixXf train_images;
  Eigen::VectorXi train_labels;
  if (config.augment_rotated) {
    const int n = static_cast<int>(split.train_images.rows());
    train_images.resize(2 * n, split.train_images.cols());
    train_labels.resize(2 * n);
    train_images.topRows(n) = split.train_images;
    train_labels.head(n) = split.train_labels;
    for (int i = 0; i < n; ++i) {
      train_images.row(n + i) = split.train_images.row(i).reverse();
      train_labels(n + i) = split.train_labels(i);
    }
  } else {
    train_images = std::move(split.train_images);
    train_labels = std::move(split.train_labels);
  }

  const int n_train = static_cast<int>(train_images.rows());
  const int batch = std::max(1, std::min(config.batch_size, n_train));

  // Adam state (unused for plain sgd).
  Eigen::MatrixXd m_w1, v_w1, m_w2, v_w2;
  Eigen::VectorXd m_b1, v_b1, m_b2, v_b2;
  if (config.optimizer == Optimizer::adaptive_moments) {
    m_w1 = Eigen::MatrixXd::Zero(model.w1_.rows(), model.w1_.cols());
    v_w1 = m_w1;
    m_w2 = Eigen::MatrixXd::Zero(model.w2_.rows(), model.w2_.cols());
    v_w2 = m_w2;
    m_b1 = Eigen::VectorXd::Zero(model.b1_.size());
    v_b1 = m_b1;
    m_b2 = Eigen::VectorXd::Zero(model.b2_.size());
    v_b2 = m_b2;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long adam_step = 0;

  TrainHistory history;
  Rng shuffle_rng(derive_seed(config.seed, 0x75a1));
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_loss_acc = 0.0;
    long train_items = 0;
    bool diverged = false;

    for (int start = 0; start < n_train && !diverged; start += batch) {
      const int b = std::min(batch, n_train - start);
      Eigen::MatrixXd x(b, train_images.cols());
      Eigen::VectorXi y(b);
      for (int i = 0; i < b; ++i) {
        x.row(i) =
            train_images.row(order[static_cast<std::size_t>(start + i)])
                .cast<double>();
        y(i) = train_labels(order[static_cast<std::size_t>(start + i)]);
      }

      Eigen::MatrixXd h_pre =
          (x * model.w1_.transpose()).rowwise() + model.b1_.transpose();
      Eigen::MatrixXd h = h_pre.cwiseMax(0.0);
      Eigen::MatrixXd a =
          (h * model.w2_.transpose()).rowwise() + model.b2_.transpose();
      Eigen::MatrixXd s(b, a.cols());
      for (int i = 0; i < b; ++i) {
        const double mx = a.row(i).maxCoeff();
        s.row(i) = (a.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }

      // Batch loss is the mean of the per-item weighted cross-entropies.
      Eigen::MatrixXd grad_a = s;
      for (int i = 0; i < b; ++i) {
        const int label = y(i);
        const double w = weights(label);
        train_loss_acc += -w * std::log(std::max(s(i, label), 1e-12));
        grad_a(i, label) -= 1.0;
        grad_a.row(i) *= w / static_cast<double>(b);
      }
      train_items += b;

      const Eigen::MatrixXd grad_w2 = grad_a.transpose() * h;
      const Eigen::VectorXd grad_b2 = grad_a.colwise().sum();
      Eigen::MatrixXd grad_h = grad_a * model.w2_;
      grad_h = (h_pre.array() > 0.0).select(grad_h, 0.0);
      const Eigen::MatrixXd grad_w1 = grad_h.transpose() * x;
      const Eigen::VectorXd grad_b1 = grad_h.colwise().sum();

      if (!grad_w2.allFinite() || !grad_w1.allFinite()) {
        diverged = true;
        break;
      }

      const double lr = config.learning_rate;
      if (config.optimizer == Optimizer::sgd) {
        model.w2_ -= lr * grad_w2;
        model.b2_ -= lr * grad_b2;
        if (!config.freeze_features) {
          model.w1_ -= lr * grad_w1;
          model.b1_ -= lr * grad_b1;
        }
      } else {
        ++adam_step;
        const double c1 = 1.0 - std::pow(kBeta1, adam_step);
        const double c2 = 1.0 - std::pow(kBeta2, adam_step);
        auto adam_update = [&](Eigen::MatrixXd& p, Eigen::MatrixXd& m,
                               Eigen::MatrixXd& v, const Eigen::MatrixXd& g) {
          m = kBeta1 * m + (1.0 - kBeta1) * g;
          v = kBeta2 * v.array().matrix() +
              (1.0 - kBeta2) * g.array().square().matrix();
          p.array() -=
              lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
        };
        auto adam_update_vec = [&](Eigen::VectorXd& p, Eigen::VectorXd& m,
                                   Eigen::VectorXd& v,
                                   const Eigen::VectorXd& g) {
          m = kBeta1 * m + (1.0 - kBeta1) * g;
          v = kBeta2 * v.array().matrix() +
              (1.0 - kBeta2) * g.array().square().matrix();
          p.array() -=
              lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
        };
        adam_update(model.w2_, m_w2, v_w2, grad_w2);
        adam_update_vec(model.b2_, m_b2, v_b2, grad_b2);
        if (!config.freeze_features) {
          adam_update(model.w1_, m_w1, v_w1, grad_w1);
          adam_update_vec(model.b1_, m_b1, v_b1, grad_b1);
        }
      }
    }

    if (diverged || !model.w1_.allFinite() || !model.w2_.allFinite()) {
      history.outcome = StopReason::diverged;
      return history;
    }

    const EvalResult val =
        evaluate(model, split.val_images, split.val_labels, weights);
    if (!std::isfinite(val.loss)) {
      history.outcome = StopReason::diverged;
      return history;
    }
    EpochStats stats;
    stats.train_loss = train_loss_acc / std::max<long>(1, train_items);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    stats.val_class_accuracy = val.class_accuracy;
    history.epochs.push_back(std::move(stats));

    const StopReason reason = stopping_check(history);
    if (reason != StopReason::keep_going) {
      history.outcome = reason;
      return history;
    }
  }
  history.outcome = StopReason::epoch_cap;
  return history;
}

}  // namespace fragtrack
