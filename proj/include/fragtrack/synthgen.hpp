#pragma once

#include "fragtrack/types.hpp"

#include <filesystem>
#include <map>

namespace fragtrack {

struct SynthConfig {
  int n_individuals = 10;
  int total_frames = 1000;
  double gamma_theta = 2000.0;  // scale
  double gamma_k = 0.5;         // shape
  int crossing_length = 3;      // frames; 0 disables crossings
  double body_length = 12.0;    // ellipse major axis, px
  double body_aspect = 0.5;     // minor/major
  double snr = 8.0;             // texture contrast over per-frame noise sigma
  double appearance_drift = 0.0;  // 0..1 blend towards a second template
  double max_step = 2.5;        // px per frame
  std::uint64_t seed = 1;

  void validate() const;
};

struct GroundTruthEntry {
  Vec2 centroid = Vec2::Zero();
  bool in_crossing = false;
  int blob_index = -1;  // index into the frame's emitted blob list
};

struct PlantedSegment {
  int start = 0;
  int end = 0;  // inclusive
  bool crossing = false;
};

struct GroundTruth {
  int n_individuals = 0;
  int total_frames = 0;
  double body_length = 0.0;
  // per frame, per individual
  std::vector<std::vector<GroundTruthEntry>> entries;
  // per individual: alternating individual / crossing segments
  std::vector<std::vector<PlantedSegment>> segments;

  void save(const std::filesystem::path& path) const;
  static GroundTruth load(const std::filesystem::path& path);
};

struct SyntheticVideo {
  std::vector<std::vector<Blob>> frames;
  int width = 0;
  int height = 0;
  GroundTruth truth;
};

// Individuals alternate gamma-length free runs and crossings with their
// nearest partner; each carries a fixed texture template (plus optional
// drift) blended with per-frame noise at the configured SNR. The emitted
// blob stream and ground truth are mutually consistent.
SyntheticVideo generate_synthetic_video(const SynthConfig& config);

// Renders the blob stream onto a white background, one PGM per frame.
void write_pgm_frames(const std::filesystem::path& directory,
                      const SyntheticVideo& video);

// Suggested segmentation thresholds for PGM renders of synthetic videos.
constexpr int kSynthMaxIntensity = 200;

struct ValidationMetrics {
  long images_validated = 0;
  long correct = 0;
  long misidentified = 0;
  long non_identified = 0;
  long cascade_images = 0;  // images of accumulated fragments in the span
  long cascade_correct = 0;

  double accuracy() const {
    return images_validated == 0
               ? 0.0
               : static_cast<double>(correct) / static_cast<double>(images_validated);
  }
  double misidentified_fraction() const {
    return images_validated == 0
               ? 0.0
               : static_cast<double>(misidentified) /
                     static_cast<double>(images_validated);
  }
  double non_identified_fraction() const {
    return images_validated == 0
               ? 0.0
               : static_cast<double>(non_identified) /
                     static_cast<double>(images_validated);
  }
  double cascade_accuracy() const {
    return cascade_images == 0
               ? 0.0
               : static_cast<double>(cascade_correct) /
                     static_cast<double>(cascade_images);
  }

  std::map<int, double> per_individual;  // ground-truth identity -> accuracy
};

// Inputs that validation needs from a finished tracking run.
struct TrackedResult {
  // Per frame, per blob index: assigned identity (0-based, -1 none) and
  // whether the blob sits in an accumulated fragment.
  std::vector<std::vector<int>> blob_identity;
  std::vector<std::vector<char>> blob_accumulated;
  // Result identity (0-based) -> position at a frame, used for matching.
  int map_frames = 0;
};

// Matches result identities to planted identities at the core frame of the
// first trained global fragment, then scores every ground-truth individual
// image inside [span_begin, span_end].
ValidationMetrics validation_metrics(const TrackedResult& result,
                                     const GroundTruth& truth, int span_begin,
                                     int span_end,
                                     const std::vector<int>& identity_map,
                                     const std::vector<int>& individuals = {});

// Builds the result-identity -> ground-truth-identity map by matching blob
// assignments at the given frame (typically the seed global's core).
std::vector<int> match_identities_at_frame(const TrackedResult& result,
                                           const GroundTruth& truth,
                                           int frame, int n_animals);

}  // namespace fragtrack
