#pragma once

#include "fragtrack/types.hpp"

#include <span>

namespace fragtrack {

struct AreaModel {
  double median_area = 0.0;  // m_A
  double sigma_area = 0.0;   // population standard deviation s_A
  double threshold_sigmas = 4.0;

  bool is_individual(double area) const {
    return std::abs(area - median_area) < threshold_sigmas * sigma_area;
  }
};

enum class BlobKind : std::uint8_t { individual, crossing };
enum class SureLabel : std::uint8_t { sure_individual, sure_crossing, ambiguous };

class NoCompleteFrame : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoGlobalFragment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fitted from frames whose blob count equals the declared animal count.
// Throws NoCompleteFrame (message carries the blob-count histogram) when no
// such frame exists.
AreaModel fit_area_model(const std::vector<std::vector<Blob>>& frames,
                         int n_animals, double threshold_sigmas = 4.0);

// Identifies a blob within its frame list.
struct BlobRef {
  int frame = 0;
  int index = 0;
  bool operator==(const BlobRef&) const = default;
};

// Overlap adjacency between consecutive frames: for each blob the previous
// (P_b) and next (N_b) overlapping blob indices.
class OverlapGraph {
 public:
  explicit OverlapGraph(const std::vector<std::vector<Blob>>& frames);

  std::span<const int> prev(int frame, int index) const {
    return {prev_[static_cast<std::size_t>(frame)][static_cast<std::size_t>(index)]};
  }
  std::span<const int> next(int frame, int index) const {
    return {next_[static_cast<std::size_t>(frame)][static_cast<std::size_t>(index)]};
  }
  int frame_count() const { return static_cast<int>(prev_.size()); }
  int blob_count(int frame) const {
    return static_cast<int>(prev_[static_cast<std::size_t>(frame)].size());
  }

  // Test support: build a graph from explicit edges (frame i index a) ->
  // (frame i+1 index b) without touching pixels.
  static OverlapGraph from_edges(
      const std::vector<int>& blobs_per_frame,
      const std::vector<std::array<int, 3>>& edges);  // {frame, from, to}

 private:
  OverlapGraph() = default;
  std::vector<std::vector<std::vector<int>>> prev_;
  std::vector<std::vector<std::vector<int>>> next_;
};

// Conservative labels used to train the crossing detector. A blob is a sure
// individual when the area model agrees, it lies on a 1-1 overlap chain, and
// walking that chain in either direction reaches no unresolved merge (past)
// or split (future) before the chain breaks. Sure crossings follow the two
// symmetric rule sets.
std::vector<std::vector<SureLabel>> mark_sure_images(
    const std::vector<std::vector<Blob>>& frames, const AreaModel& area,
    const OverlapGraph& graph);

// Maximal run of one-to-one overlapping same-kind blobs.
struct Fragment {
  int id = -1;
  BlobKind kind = BlobKind::individual;
  int start_frame = 0;
  int end_frame = 0;  // inclusive
  std::vector<BlobRef> blobs;
  std::vector<Vec2> centroids;

  int length() const { return static_cast<int>(blobs.size()); }
  bool coexists(const Fragment& other) const {
    return start_frame <= other.end_frame && other.start_frame <= end_frame;
  }
};

struct FragmentSet {
  std::vector<Fragment> individual;
  std::vector<Fragment> crossing;
  // Per blob: (kind, fragment id within its kind).
  std::vector<std::vector<std::pair<BlobKind, int>>> blob_fragment;
};

// Frame-major, then segmentation-order pass assigning fragment identifiers.
// Every blob ends up in exactly one fragment of its kind.
FragmentSet build_fragments(const std::vector<std::vector<Blob>>& frames,
                            const std::vector<std::vector<BlobKind>>& kinds,
                            const OverlapGraph& graph);

// A set of n individual fragments coexisting at the core frame; members are
// fragment ids. One global fragment per distinct member set, core = minimum
// frame where that set coexists in full.
struct GlobalFragment {
  std::vector<int> members;
  int core_frame = 0;
};

// Requires each member fragment to count at least min_images images.
std::vector<GlobalFragment> build_global_fragments(
    const std::vector<Fragment>& individual_fragments, int n_animals,
    int min_images = 3);

// Sum of Euclidean distances between consecutive centroids.
double distance_travelled(const Fragment& fragment);

// Smallest member image count of a global fragment. With min_speed > 0 only
// blobs moving at least that fast (px/frame, against the previous centroid)
// are counted, mirroring the speed-corrected image counting of the
// synthetic benchmark.
int min_images_in_global(const std::vector<Fragment>& fragments,
                         const GlobalFragment& global, double min_speed = 0.0);

}  // namespace fragtrack
