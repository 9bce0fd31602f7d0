#pragma once

#include "fragtrack/blobgraph.hpp"
#include "fragtrack/classifier.hpp"

#include <functional>

namespace fragtrack {

class CascadeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-fragment identification evidence: assignment frequencies, the P1 mass
// function (computed in shifted-exponent space), the certainty score, and
// the per-image argmax records backing it.
struct IdentityDistribution {
  Eigen::VectorXi frequencies;
  Eigen::VectorXd p1;
  double certainty = 0.0;
  Eigen::VectorXi image_argmax;
  Eigen::VectorXf image_score;  // softmax value at the argmax class
  Eigen::VectorXd p2;           // filled by residual identification
};

// P1(i) = 2^Λ(i) / sum_j 2^Λ(j), computed as 2^(Λ(i)-max) to stay finite for
// arbitrarily long fragments.
Eigen::VectorXd p1_from_frequencies(const Eigen::VectorXi& frequencies);

// cert(F) per the median-softmax contrast between the top two P1 identities.
double certainty_score(const Eigen::VectorXd& p1,
                       const Eigen::VectorXi& image_argmax,
                       const Eigen::VectorXf& image_score);

// Runs every image through the model and derives frequencies, P1 and cert.
IdentityDistribution identify_fragment(
    const ClassifierModel& model,
    const Eigen::Ref<const Eigen::MatrixXf>& images);

// Indices of the first and second maximum (ties resolved to lower index).
std::pair<int, int> top_two(const Eigen::VectorXd& values);

enum class IdentityState : std::uint8_t {
  unassigned,
  temporary,  // assigned outside accumulation (assessment or residual)
  fixed,      // accumulated; immutable for the rest of the cascade
  non_identifiable,
};

struct FragmentIdentity {
  IdentityState state = IdentityState::unassigned;
  int identity = -1;
  int accumulated_iteration = -1;
  IdentityDistribution dist;

  bool is_fixed() const { return state == IdentityState::fixed; }
  bool has_identity() const { return identity >= 0; }
};

// Everything the protocols need about the fragment structure; images are a
// single arena with per-fragment row ranges.
struct CascadeInput {
  int n_animals = 0;
  const std::vector<Fragment>* fragments = nullptr;  // individual fragments
  std::vector<GlobalFragment> globals;
  Eigen::MatrixXf images;                       // all individual images
  std::vector<std::pair<int, int>> fragment_rows;  // [begin, end) per fragment
  int image_side = 0;
  std::vector<std::vector<int>> coexisting;     // per fragment id

  int fragment_count() const {
    return static_cast<int>(fragment_rows.size());
  }
  int fragment_images(int id) const {
    return fragment_rows[static_cast<std::size_t>(id)].second -
           fragment_rows[static_cast<std::size_t>(id)].first;
  }
  Eigen::Ref<const Eigen::MatrixXf> fragment_image_rows(int id) const {
    const auto [begin, end] = fragment_rows[static_cast<std::size_t>(id)];
    return images.middleRows(begin, end - begin);
  }
};

// Coexistence lists from fragment spans (pairs sharing at least one frame).
std::vector<std::vector<int>> build_coexistence(
    const std::vector<Fragment>& fragments);

struct CascadeParams {
  double certainty_threshold = 0.1;
  double protocol1_coverage = 0.9995;
  double accumulation_target = 0.9995;
  double protocol2_success = 0.9;
  double partial_enable_fraction = 0.5;
  double pretrain_coverage = 0.95;
  int max_images_per_identity = 3000;
  int old_image_quota = 1800;
  int new_image_quota = 1200;
  int parachute_attempts = 3;
  int hidden_units = 100;
  TrainConfig train;  // identification defaults: sgd, batch 500, 10000 cap
  std::uint64_t seed = 1;
};

enum class ProtocolStatus : std::uint8_t {
  protocol1_done,
  protocol2_done,
  protocol3_done,
  degraded,
};

struct CascadeIterationLog {
  int protocol = 1;
  int iteration = 0;
  long images_accumulated = 0;
  double coverage = 0.0;
  int train_epochs = 0;
  double val_accuracy = 0.0;
};

struct ProtocolOutcome {
  ProtocolStatus status = ProtocolStatus::protocol1_done;
  ClassifierModel model;
  double coverage = 0.0;  // accumulated images / images in global fragments
  std::vector<std::string> warnings;
  std::vector<FragmentIdentity> identities;
  int seed_global = -1;  // index into CascadeInput::globals
  long total_global_images = 0;
  long images_accumulated = 0;
  std::vector<CascadeIterationLog> log;
  // Observed decision values, exposed for tests and reports.
  double protocol1_coverage_observed = -1.0;
  double protocol2_coverage_observed = -1.0;
  std::vector<double> protocol3_attempt_coverages;
};

// Score of a global fragment: the minimum distance travelled over its
// members. choose_first picks the argmax (tie: lower core frame).
std::vector<int> sort_globals_by_distance(const CascadeInput& input);
int choose_first_global_fragment(const CascadeInput& input);

struct GlobalAssessment {
  enum class Reason : std::uint8_t { ok, not_certain, non_consistent, not_unique };
  bool acceptable = false;
  Reason reason = Reason::ok;
  std::vector<std::pair<int, int>> temporary_ids;  // (fragment, identity)
};

// Quality check of one global fragment against the current assignment
// context (fragment -> identity for everything currently holding one).
GlobalAssessment assess_global_fragment(
    const CascadeInput& input, const GlobalFragment& global,
    const std::vector<FragmentIdentity>& states,
    const std::vector<int>& committed_identity, double certainty_threshold);

// The full training/identification cascade. Throws CascadeError on
// identification-training divergence or when no global fragment exists.
ProtocolOutcome run_cascade(const CascadeInput& input,
                            const CascadeParams& params);

}  // namespace fragtrack
