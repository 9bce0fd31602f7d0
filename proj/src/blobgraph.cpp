#include "fragtrack/blobgraph.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <sstream>

namespace fragtrack {

AreaModel fit_area_model(const std::vector<std::vector<Blob>>& frames,
                         int n_animals, double threshold_sigmas) {
  std::vector<double> areas;
  for (const auto& blobs : frames) {
    if (static_cast<int>(blobs.size()) != n_animals) continue;
    for (const Blob& b : blobs) areas.push_back(static_cast<double>(b.area()));
  }
  if (areas.empty()) {
    std::map<int, int> histogram;
    for (const auto& blobs : frames) ++histogram[static_cast<int>(blobs.size())];
    std::ostringstream msg;
    msg << "no frame with exactly " << n_animals
        << " blobs; blob-count histogram:";
    for (const auto& [count, freq] : histogram)
      msg << " " << count << "x" << freq;
    throw NoCompleteFrame(msg.str());
  }
  std::vector<double> sorted = areas;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1
                            ? sorted[n / 2]
                            : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = 0.0;
  for (const double a : areas) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const double a : areas) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);  // population variance
  AreaModel model;
  model.median_area = median;
  model.sigma_area = std::sqrt(var);
  model.threshold_sigmas = threshold_sigmas;
  return model;
}

OverlapGraph::OverlapGraph(const std::vector<std::vector<Blob>>& frames) {
  const std::size_t m = frames.size();
  prev_.resize(m);
  next_.resize(m);
  for (std::size_t f = 0; f < m; ++f) {
    prev_[f].resize(frames[f].size());
    next_[f].resize(frames[f].size());
  }
  for (std::size_t f = 0; f + 1 < m; ++f) {
    for (std::size_t i = 0; i < frames[f].size(); ++i) {
      for (std::size_t j = 0; j < frames[f + 1].size(); ++j) {
        if (overlap(frames[f][i], frames[f + 1][j])) {
          next_[f][i].push_back(static_cast<int>(j));
          prev_[f + 1][j].push_back(static_cast<int>(i));
        }
      }
    }
  }
}

OverlapGraph OverlapGraph::from_edges(
    const std::vector<int>& blobs_per_frame,
    const std::vector<std::array<int, 3>>& edges) {
  OverlapGraph g;
  g.prev_.resize(blobs_per_frame.size());
  g.next_.resize(blobs_per_frame.size());
  for (std::size_t f = 0; f < blobs_per_frame.size(); ++f) {
    g.prev_[f].resize(static_cast<std::size_t>(blobs_per_frame[f]));
    g.next_[f].resize(static_cast<std::size_t>(blobs_per_frame[f]));
  }
  for (const auto& [frame, from, to] : edges) {
    g.next_[static_cast<std::size_t>(frame)][static_cast<std::size_t>(from)]
        .push_back(to);
    g.prev_[static_cast<std::size_t>(frame) + 1][static_cast<std::size_t>(to)]
        .push_back(from);
  }
  return g;
}

namespace {

// Walks the 1-1 overlap chain backward from (frame, index). Returns true iff
// the walk ends on a merge (a chain blob with more than one predecessor)
// before the chain breaks at a split or at the start of the video.
bool past_chain_ends_on_merge(const OverlapGraph& g, int frame, int index) {
  auto p = g.prev(frame, index);
  while (p.size() == 1) {
    --frame;
    index = p[0];
    if (g.next(frame, index).size() > 1) return false;  // split resolves it
    p = g.prev(frame, index);
  }
  return p.size() > 1;
}

// Symmetric forward walk; true iff it ends on a split.
bool future_chain_ends_on_split(const OverlapGraph& g, int frame, int index) {
  auto n = g.next(frame, index);
  while (n.size() == 1) {
    ++frame;
    index = n[0];
    if (g.prev(frame, index).size() > 1) return false;  // merge caps the chain
    n = g.next(frame, index);
  }
  return n.size() > 1;
}

}  // namespace

std::vector<std::vector<SureLabel>> mark_sure_images(
    const std::vector<std::vector<Blob>>& frames, const AreaModel& area,
    const OverlapGraph& graph) {
  std::vector<std::vector<SureLabel>> labels(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    labels[f].assign(frames[f].size(), SureLabel::ambiguous);
    for (std::size_t i = 0; i < frames[f].size(); ++i) {
      const bool individual_area = area.is_individual(frames[f][i].area());
      const auto p = graph.prev(static_cast<int>(f), static_cast<int>(i));
      const auto n = graph.next(static_cast<int>(f), static_cast<int>(i));
      if (!individual_area && (p.size() > 1 || n.size() > 1)) {
        labels[f][i] = SureLabel::sure_crossing;
        continue;
      }
      if (p.size() != 1 || n.size() != 1) continue;
      const bool past_merge =
          past_chain_ends_on_merge(graph, static_cast<int>(f), static_cast<int>(i));
      const bool future_split = future_chain_ends_on_split(
          graph, static_cast<int>(f), static_cast<int>(i));
      if (individual_area && !past_merge && !future_split)
        labels[f][i] = SureLabel::sure_individual;
      else if (!individual_area && past_merge && future_split)
        labels[f][i] = SureLabel::sure_crossing;
    }
  }
  return labels;
}

FragmentSet build_fragments(const std::vector<std::vector<Blob>>& frames,
                            const std::vector<std::vector<BlobKind>>& kinds,
                            const OverlapGraph& graph) {
  FragmentSet set;
  set.blob_fragment.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    set.blob_fragment[f].assign(frames[f].size(),
                                {BlobKind::individual, -1});

  auto kind_of = [&kinds](int f, int i) {
    return kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
  };
  auto assigned = [&set](int f, int i) {
    return set.blob_fragment[static_cast<std::size_t>(f)]
                            [static_cast<std::size_t>(i)]
               .second >= 0;
  };

  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].size(); ++i) {
      if (assigned(static_cast<int>(f), static_cast<int>(i))) continue;
      const BlobKind kind = kind_of(static_cast<int>(f), static_cast<int>(i));
      std::vector<Fragment>& pool =
          kind == BlobKind::individual ? set.individual : set.crossing;
      Fragment frag;
      frag.id = static_cast<int>(pool.size());
      frag.kind = kind;
      int cf = static_cast<int>(f);
      int ci = static_cast<int>(i);
      for (;;) {
        set.blob_fragment[static_cast<std::size_t>(cf)]
                         [static_cast<std::size_t>(ci)] = {kind, frag.id};
        frag.blobs.push_back({cf, ci});
        frag.centroids.push_back(
            frames[static_cast<std::size_t>(cf)][static_cast<std::size_t>(ci)]
                .centroid);
        const auto n = graph.next(cf, ci);
        if (n.size() != 1) break;  // case 1: the chain ends here
        const int nf = cf + 1;
        const int ni = n[0];
        if (graph.prev(nf, ni).size() != 1) break;
        if (kind_of(nf, ni) != kind) break;
        cf = nf;
        ci = ni;
      }
      frag.start_frame = frag.blobs.front().frame;
      frag.end_frame = frag.blobs.back().frame;
      pool.push_back(std::move(frag));
    }
  }
  return set;
}

std::vector<GlobalFragment> build_global_fragments(
    const std::vector<Fragment>& individual_fragments, int n_animals,
    int min_images) {
  if (individual_fragments.empty()) return {};
  int last_frame = 0;
  for (const Fragment& f : individual_fragments)
    last_frame = std::max(last_frame, f.end_frame);

  // Fragments alive per frame via a start/end sweep.
  std::vector<std::vector<int>> starting(static_cast<std::size_t>(last_frame) + 1);
  std::vector<std::vector<int>> ending(static_cast<std::size_t>(last_frame) + 1);
  for (const Fragment& f : individual_fragments) {
    starting[static_cast<std::size_t>(f.start_frame)].push_back(f.id);
    ending[static_cast<std::size_t>(f.end_frame)].push_back(f.id);
  }

  std::vector<GlobalFragment> globals;
  std::map<std::vector<int>, std::size_t> seen;
  std::vector<int> alive;
  for (int frame = 0; frame <= last_frame; ++frame) {
    for (const int id : starting[static_cast<std::size_t>(frame)])
      alive.push_back(id);
    if (static_cast<int>(alive.size()) == n_animals) {
      bool long_enough = true;
      for (const int id : alive)
        if (individual_fragments[static_cast<std::size_t>(id)].length() <
            min_images) {
          long_enough = false;
          break;
        }
      if (long_enough) {
        std::vector<int> members = alive;
        std::sort(members.begin(), members.end());
        if (!seen.count(members)) {
          seen.emplace(members, globals.size());
          globals.push_back({members, frame});
        }
      }
    }
    for (const int id : ending[static_cast<std::size_t>(frame)])
      alive.erase(std::find(alive.begin(), alive.end(), id));
  }
  return globals;
}

double distance_travelled(const Fragment& fragment) {
  double total = 0.0;
  for (std::size_t i = 1; i < fragment.centroids.size(); ++i)
    total += (fragment.centroids[i] - fragment.centroids[i - 1]).norm();
  return total;
}

int min_images_in_global(const std::vector<Fragment>& fragments,
                         const GlobalFragment& global, double min_speed) {
  int min_images = std::numeric_limits<int>::max();
  for (const int id : global.members) {
    const Fragment& f = fragments[static_cast<std::size_t>(id)];
    int images = 0;
    if (min_speed <= 0.0) {
      images = f.length();
    } else {
      for (std::size_t i = 1; i < f.centroids.size(); ++i)
        if ((f.centroids[i] - f.centroids[i - 1]).norm() >= min_speed) ++images;
    }
    min_images = std::min(min_images, images);
  }
  return global.members.empty() ? 0 : min_images;
}

}  // namespace fragtrack
