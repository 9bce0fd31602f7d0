#include "fragtrack/postproc.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace fragtrack {

SpeedModel fit_speed_model(const std::vector<Fragment>& fragments,
                           double percentile) {
  std::vector<double> speeds;
  for (const Fragment& f : fragments)
    for (std::size_t i = 1; i < f.centroids.size(); ++i)
      speeds.push_back((f.centroids[i] - f.centroids[i - 1]).norm());
  if (speeds.empty())
    throw std::runtime_error("no fragment steps: speed model undefined");
  std::sort(speeds.begin(), speeds.end());
  const std::size_t n = speeds.size();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  SpeedModel model;
  model.v_max = speeds[std::clamp<std::size_t>(rank, 1, n) - 1];
  return model;
}

double boundary_speed(const Fragment& f1, const Fragment& f2) {
  if (f1.end_frame >= f2.start_frame)
    throw std::invalid_argument("fragments are not consecutive");
  const double d = (f2.centroids.front() - f1.centroids.back()).norm();
  return d / static_cast<double>(f2.start_frame - f1.end_frame);
}

namespace {

// Nearest identified fragment of the given identity strictly before /
// after the span of `frag`, by frame distance.
struct NeighbourIndex {
  const std::vector<Fragment>& fragments;
  const std::vector<FragmentIdentity>& states;

  const Fragment* previous(const Fragment& frag, int identity,
                           int exclude = -1) const {
    const Fragment* best = nullptr;
    for (const Fragment& other : fragments) {
      if (other.id == frag.id || other.id == exclude) continue;
      if (states[static_cast<std::size_t>(other.id)].identity != identity)
        continue;
      if (other.end_frame >= frag.start_frame) continue;
      if (!best || other.end_frame > best->end_frame) best = &other;
    }
    return best;
  }
  const Fragment* next(const Fragment& frag, int identity,
                       int exclude = -1) const {
    const Fragment* best = nullptr;
    for (const Fragment& other : fragments) {
      if (other.id == frag.id || other.id == exclude) continue;
      if (states[static_cast<std::size_t>(other.id)].identity != identity)
        continue;
      if (other.start_frame <= frag.end_frame) continue;
      if (!best || other.start_frame < best->start_frame) best = &other;
    }
    return best;
  }
};

}  // namespace

CorrectionStats correct_unrealistic(const std::vector<Fragment>& fragments,
                                    std::vector<FragmentIdentity>& states,
                                    const std::vector<std::vector<int>>& coexisting,
                                    const SpeedModel& speed, int n_animals,
                                    int core_frame,
                                    const PostprocParams& params) {
  CorrectionStats stats;
  const double limit = params.speed_factor * speed.v_max;
  NeighbourIndex index{fragments, states};

  auto immutable = [&](int frag) {
    const FragmentIdentity& st = states[static_cast<std::size_t>(frag)];
    if (st.is_fixed()) return true;
    if (st.state == IdentityState::temporary && st.dist.p2.size() > 0 &&
        st.dist.p2.maxCoeff() >= params.fixed_p2_threshold)
      return true;
    return false;
  };

  auto reidentify = [&](const Fragment& frag) {
    FragmentIdentity& st = states[static_cast<std::size_t>(frag.id)];
    // Available identities: everything not held by a coexisting fragment,
    // plus the fragment's own current identity.
    std::vector<bool> taken(static_cast<std::size_t>(n_animals), false);
    for (const int c : coexisting[static_cast<std::size_t>(frag.id)]) {
      const FragmentIdentity& cs = states[static_cast<std::size_t>(c)];
      if (cs.has_identity()) taken[static_cast<std::size_t>(cs.identity)] = true;
    }
    std::vector<int> available;
    for (int i = 0; i < n_animals; ++i)
      if (!taken[static_cast<std::size_t>(i)] || i == st.identity)
        available.push_back(i);

    if (available.size() == 1) {
      if (st.identity != available[0]) ++stats.reidentified;
      st.identity = available[0];
      st.state = IdentityState::temporary;
      return;
    }

    const double rho = frag.length() > 1
                           ? 1.0 / static_cast<double>(frag.length())
                           : 1.0 / static_cast<double>(n_animals);
    std::vector<int> candidates;  // C = Q ∩ S
    std::vector<double> candidate_speed;
    for (const int i : available) {
      if (st.dist.p2.size() == 0 || st.dist.p2(i) <= rho) continue;  // Q gate
      // S gate: prospective boundary speeds under identity i.
      const Fragment* prev = index.previous(frag, i, frag.id);
      const Fragment* next = index.next(frag, i, frag.id);
      double worst = 0.0;
      if (prev) worst = std::max(worst, boundary_speed(*prev, frag));
      if (next) worst = std::max(worst, boundary_speed(frag, *next));
      if (worst > limit) continue;
      candidates.push_back(i);
      candidate_speed.push_back(worst);
    }
    const int old_identity = st.identity;
    if (candidates.empty()) {
      st.identity = -1;
      st.state = IdentityState::non_identifiable;
      ++stats.unidentified;
      return;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
      if (candidate_speed[i] < candidate_speed[best]) best = i;
    st.identity = candidates[best];
    st.state = IdentityState::temporary;
    if (st.identity != old_identity) ++stats.reidentified;
  };

  auto visit = [&](const Fragment& frag) {
    FragmentIdentity& st = states[static_cast<std::size_t>(frag.id)];
    if (!st.has_identity()) return;
    const Fragment* prev = index.previous(frag, st.identity);
    const Fragment* next = index.next(frag, st.identity);
    if (!prev && !next) return;
    const double s_prev = prev ? boundary_speed(*prev, frag) : 0.0;
    const double s_next = next ? boundary_speed(frag, *next) : 0.0;
    const bool bad_prev = s_prev > limit;
    const bool bad_next = s_next > limit;
    if (!bad_prev && !bad_next) return;

    if (bad_prev && bad_next) {
      // Case 1: the fragment disagrees with both neighbours. Reidentify it
      // when a neighbour is trusted outright or both neighbours are
      // themselves consistently anchored further out.
      bool anchored = immutable(prev->id) || immutable(next->id);
      if (!anchored) {
        const Fragment* pp =
            index.previous(*prev, states[static_cast<std::size_t>(prev->id)].identity);
        const Fragment* nn =
            index.next(*next, states[static_cast<std::size_t>(next->id)].identity);
        const bool prev_ok = !pp || boundary_speed(*pp, *prev) <= limit;
        const bool next_ok = !nn || boundary_speed(*next, *nn) <= limit;
        anchored = prev_ok && next_ok;
      }
      if (anchored && !immutable(frag.id)) reidentify(frag);
    } else if (bad_prev) {
      // Case 2: only the past boundary is unrealistic.
      if (immutable(prev->id)) {
        if (!immutable(frag.id)) reidentify(frag);
      } else {
        reidentify(*prev);
      }
    } else {
      // Case 3: symmetric to case 2.
      if (immutable(next->id)) {
        if (!immutable(frag.id)) reidentify(frag);
      } else {
        reidentify(*next);
      }
    }
  };

  // First the fragments ending before the core of the first trained global
  // fragment, walking backwards from it; then the rest, walking forward.
  std::vector<int> before, after;
  for (const Fragment& f : fragments)
    (f.end_frame < core_frame ? before : after).push_back(f.id);
  std::sort(before.begin(), before.end(), [&fragments](int a, int b) {
    return fragments[static_cast<std::size_t>(a)].end_frame >
           fragments[static_cast<std::size_t>(b)].end_frame;
  });
  std::sort(after.begin(), after.end(), [&fragments](int a, int b) {
    return fragments[static_cast<std::size_t>(a)].start_frame <
           fragments[static_cast<std::size_t>(b)].start_frame;
  });
  for (const int f : before) visit(fragments[static_cast<std::size_t>(f)]);
  for (const int f : after) visit(fragments[static_cast<std::size_t>(f)]);
  return stats;
}

std::vector<PixelKey> erode_pixels(const std::vector<PixelKey>& pixels) {
  std::unordered_set<PixelKey> set(pixels.begin(), pixels.end());
  std::vector<PixelKey> out;
  for (const PixelKey k : pixels) {
    const int x = pixel_x(k);
    const int y = pixel_y(k);
    bool keep = x > 0 && y > 0;
    for (int dy = -1; dy <= 1 && keep; ++dy)
      for (int dx = -1; dx <= 1 && keep; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (!set.count(pack_pixel(x + dx, y + dy))) keep = false;
      }
    if (keep) out.push_back(k);
  }
  return out;
}

std::vector<std::vector<PixelKey>> pixel_components(
    const std::vector<PixelKey>& pixels) {
  std::unordered_map<PixelKey, int> label;
  label.reserve(pixels.size());
  for (const PixelKey k : pixels) label.emplace(k, -1);
  std::vector<std::vector<PixelKey>> components;
  std::vector<PixelKey> stack;
  for (const PixelKey seed : pixels) {
    if (label[seed] >= 0) continue;
    const int id = static_cast<int>(components.size());
    components.emplace_back();
    stack.clear();
    stack.push_back(seed);
    label[seed] = id;
    while (!stack.empty()) {
      const PixelKey k = stack.back();
      stack.pop_back();
      components[static_cast<std::size_t>(id)].push_back(k);
      const int x = pixel_x(k);
      const int y = pixel_y(k);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || ny[d] < 0) continue;
        const PixelKey nk = pack_pixel(nx[d], ny[d]);
        auto it = label.find(nk);
        if (it == label.end() || it->second >= 0) continue;
        it->second = id;
        stack.push_back(nk);
      }
    }
  }
  return components;
}

namespace {

Vec2 centroid_of(const std::vector<PixelKey>& pixels) {
  double sx = 0, sy = 0;
  for (const PixelKey k : pixels) {
    sx += pixel_x(k);
    sy += pixel_y(k);
  }
  const double n = static_cast<double>(pixels.size());
  return Vec2(sx / n, sy / n);
}

int overlap_count(const std::vector<PixelKey>& sorted_a,
                  const std::vector<PixelKey>& sorted_b) {
  int count = 0;
  auto i = sorted_a.begin();
  auto j = sorted_b.begin();
  while (i != sorted_a.end() && j != sorted_b.end()) {
    if (*i == *j) {
      ++count;
      ++i;
      ++j;
    } else if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return count;
}

struct Reference {
  int identity = -1;
  std::vector<PixelKey> pixels;  // sorted
  Vec2 centroid = Vec2::Zero();
};

// One directional sweep over a crossing fragment, propagating references
// from the adjacent identified individual blobs.
void sweep_crossing(const Fragment& crossing,
                    const std::vector<std::vector<Blob>>& frames,
                    const FragmentSet& set,
                    const std::vector<FragmentIdentity>& states,
                    double step_limit, int erosion_passes, bool forward,
                    CrossingPoints& points,
                    std::vector<std::map<int, char>>& resolved) {
  const int count = crossing.length();
  std::vector<Reference> refs;

  auto adjacent_individuals = [&](int frame_of_blob, const Blob& blob,
                                  bool preceding) {
    std::vector<Reference> found;
    const int adj = preceding ? frame_of_blob - 1 : frame_of_blob + 1;
    if (adj < 0 || adj >= static_cast<int>(frames.size())) return found;
    const auto& adj_blobs = frames[static_cast<std::size_t>(adj)];
    for (std::size_t i = 0; i < adj_blobs.size(); ++i) {
      const auto [kind, frag_id] =
          set.blob_fragment[static_cast<std::size_t>(adj)][i];
      if (kind != BlobKind::individual || frag_id < 0) continue;
      const FragmentIdentity& st = states[static_cast<std::size_t>(frag_id)];
      if (!st.has_identity()) continue;
      if (!overlap(adj_blobs[i], blob)) continue;
      found.push_back({st.identity, adj_blobs[i].pixels, adj_blobs[i].centroid});
    }
    return found;
  };

  for (int step = 0; step < count; ++step) {
    const int pos = forward ? step : count - 1 - step;
    const BlobRef ref = crossing.blobs[static_cast<std::size_t>(pos)];
    const Blob& blob =
        frames[static_cast<std::size_t>(ref.frame)][static_cast<std::size_t>(ref.index)];

    // Entering identities from the adjacent frame merge into the reference
    // pool (handles crossings fed by several individuals).
    for (Reference& r : adjacent_individuals(ref.frame, blob, forward)) {
      bool known = false;
      for (const Reference& existing : refs)
        if (existing.identity == r.identity) {
          known = true;
          break;
        }
      if (!known) refs.push_back(std::move(r));
    }
    if (refs.empty()) continue;

    // Erode until the blob splits; a blob that never splits is left to the
    // interpolation fallback.
    std::vector<PixelKey> eroded = blob.pixels;
    std::vector<std::vector<PixelKey>> parts;
    for (int pass = 0; pass < erosion_passes; ++pass) {
      std::vector<PixelKey> next = erode_pixels(eroded);
      if (next.empty()) break;
      eroded = std::move(next);
      parts = pixel_components(eroded);
      if (parts.size() >= 2) break;
    }
    if (parts.size() < 2) continue;
    for (auto& p : parts) std::sort(p.begin(), p.end());

    // Greedy overlap linking, one part per identity.
    struct Link {
      int part;
      std::size_t ref;
      int score;
    };
    std::vector<Link> links;
    for (std::size_t p = 0; p < parts.size(); ++p)
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const int score = overlap_count(parts[p], refs[r].pixels);
        if (score > 0) links.push_back({static_cast<int>(p), r, score});
      }
    std::sort(links.begin(), links.end(), [](const Link& a, const Link& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.part != b.part) return a.part < b.part;
      return a.ref < b.ref;
    });
    std::vector<char> part_used(parts.size(), 0);
    std::vector<char> ref_used(refs.size(), 0);
    std::vector<std::pair<int, int>> assignment;  // (part, ref)
    for (const Link& l : links) {
      if (part_used[static_cast<std::size_t>(l.part)] || ref_used[l.ref]) continue;
      part_used[static_cast<std::size_t>(l.part)] = 1;
      ref_used[l.ref] = 1;
      assignment.emplace_back(l.part, static_cast<int>(l.ref));
    }
    // Remaining parts: nearest unclaimed reference centroid within the
    // speed gate.
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (part_used[p]) continue;
      const Vec2 c = centroid_of(parts[p]);
      int best_ref = -1;
      double best_d = step_limit;
      for (std::size_t r = 0; r < refs.size(); ++r) {
        if (ref_used[r]) continue;
        const double d = (refs[r].centroid - c).norm();
        if (d <= best_d) {
          best_d = d;
          best_ref = static_cast<int>(r);
        }
      }
      if (best_ref >= 0) {
        part_used[p] = 1;
        ref_used[static_cast<std::size_t>(best_ref)] = 1;
        assignment.emplace_back(static_cast<int>(p), best_ref);
      }
    }

    for (const auto& [p, r] : assignment) {
      const int identity = refs[static_cast<std::size_t>(r)].identity;
      const Vec2 c = centroid_of(parts[static_cast<std::size_t>(p)]);
      auto& mark = resolved[static_cast<std::size_t>(identity)];
      if (!mark.count(ref.frame)) {
        mark.emplace(ref.frame, 1);
        points[static_cast<std::size_t>(identity)][ref.frame] = c;
      }
      refs[static_cast<std::size_t>(r)].pixels = parts[static_cast<std::size_t>(p)];
      refs[static_cast<std::size_t>(r)].centroid = c;
    }
  }
}

}  // namespace

CrossingPoints resolve_crossings(const std::vector<std::vector<Blob>>& frames,
                                 const FragmentSet& set,
                                 const std::vector<FragmentIdentity>& states,
                                 const SpeedModel& speed, int n_animals,
                                 const PostprocParams& params) {
  CrossingPoints points(static_cast<std::size_t>(n_animals));
  std::vector<std::map<int, char>> resolved(static_cast<std::size_t>(n_animals));
  const double step_limit = params.speed_factor * speed.v_max;
  for (const Fragment& crossing : set.crossing) {
    sweep_crossing(crossing, frames, set, states, step_limit,
                   params.erosion_passes, true, points, resolved);
    sweep_crossing(crossing, frames, set, states, step_limit,
                   params.erosion_passes, false, points, resolved);
  }
  return points;
}

Trajectories assemble_trajectories(int frame_count, int n_animals,
                                   const std::vector<Fragment>& fragments,
                                   const std::vector<FragmentIdentity>& states,
                                   const CrossingPoints& crossing_points) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Trajectories t;
  t.x_without = Eigen::MatrixXd::Constant(frame_count, n_animals, nan);
  t.y_without = Eigen::MatrixXd::Constant(frame_count, n_animals, nan);

  for (const Fragment& f : fragments) {
    const FragmentIdentity& st = states[static_cast<std::size_t>(f.id)];
    if (!st.has_identity()) continue;
    for (std::size_t i = 0; i < f.blobs.size(); ++i) {
      const int frame = f.blobs[i].frame;
      if (!std::isnan(t.x_without(frame, st.identity)))
        throw std::logic_error(
            "identity assigned to two fragments at one frame");
      t.x_without(frame, st.identity) = f.centroids[i].x();
      t.y_without(frame, st.identity) = f.centroids[i].y();
    }
  }

  t.x_with = t.x_without;
  t.y_with = t.y_without;
  for (int id = 0; id < n_animals; ++id) {
    if (static_cast<std::size_t>(id) < crossing_points.size()) {
      for (const auto& [frame, c] : crossing_points[static_cast<std::size_t>(id)]) {
        if (std::isnan(t.x_with(frame, id))) {
          t.x_with(frame, id) = c.x();
          t.y_with(frame, id) = c.y();
        }
      }
    }
    // Interior gaps: linear interpolation; ends: hold the nearest value.
    int prev = -1;
    for (int f = 0; f < frame_count; ++f) {
      if (std::isnan(t.x_with(f, id))) continue;
      if (prev >= 0 && f - prev > 1) {
        const double span = static_cast<double>(f - prev);
        for (int g = prev + 1; g < f; ++g) {
          const double a = static_cast<double>(g - prev) / span;
          t.x_with(g, id) = (1 - a) * t.x_with(prev, id) + a * t.x_with(f, id);
          t.y_with(g, id) = (1 - a) * t.y_with(prev, id) + a * t.y_with(f, id);
        }
      } else if (prev < 0 && f > 0) {
        for (int g = 0; g < f; ++g) {
          t.x_with(g, id) = t.x_with(f, id);
          t.y_with(g, id) = t.y_with(f, id);
        }
      }
      prev = f;
    }
    if (prev >= 0 && prev < frame_count - 1) {
      for (int g = prev + 1; g < frame_count; ++g) {
        t.x_with(g, id) = t.x_with(prev, id);
        t.y_with(g, id) = t.y_with(prev, id);
      }
    }
  }
  return t;
}

double estimated_accuracy(const std::vector<Fragment>& fragments,
                          const std::vector<FragmentIdentity>& states) {
  double weighted = 0.0;
  long total = 0;
  for (const Fragment& f : fragments) {
    const FragmentIdentity& st = states[static_cast<std::size_t>(f.id)];
    if (!st.has_identity()) continue;
    const double p2 = st.is_fixed()
                          ? 1.0
                          : (st.dist.p2.size() > 0 ? st.dist.p2(st.identity) : 1.0);
    weighted += p2 * f.length();
    total += f.length();
  }
  return total == 0 ? 0.0 : weighted / static_cast<double>(total);
}

void write_trajectories_csv(const std::filesystem::path& path,
                            const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& y) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "frame,identity,x,y\n";
  char buffer[64];
  for (int f = 0; f < x.rows(); ++f) {
    for (int id = 0; id < x.cols(); ++id) {
      out << f << "," << id + 1 << ",";
      if (std::isnan(x(f, id))) {
        out << ",";
      } else {
        std::snprintf(buffer, sizeof(buffer), "%.3f,%.3f", x(f, id), y(f, id));
        out << buffer;
      }
      out << "\n";
    }
  }
}

}  // namespace fragtrack
