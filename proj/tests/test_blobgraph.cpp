#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fragtrack/blobgraph.hpp"
#include "fragtrack/rng.hpp"

using namespace fragtrack;

namespace {

// Frames of blobs laid out on disjoint pixel rows ("lanes"): blob k in frame
// f covers lane pixels chosen so that requested overlaps (and only those)
// hold between consecutive frames.
struct GraphBuilder {
  std::vector<int> blobs_per_frame;
  std::vector<std::array<int, 3>> edges;  // frame, from, to

  OverlapGraph graph() const { return OverlapGraph::from_edges(blobs_per_frame, edges); }
};

std::vector<std::vector<Blob>> lane_frames(const GraphBuilder& g) {
  // Each blob gets a private pixel; additionally every edge (f, a, b) adds a
  // shared pixel between the two blobs so pixel overlap reproduces the edge
  // list exactly. Lanes are y = edge index; private pixels at y = 1000+.
  std::vector<std::vector<Blob>> frames(g.blobs_per_frame.size());
  for (std::size_t f = 0; f < g.blobs_per_frame.size(); ++f)
    frames[f].resize(static_cast<std::size_t>(g.blobs_per_frame[f]));
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t i = 0; i < frames[f].size(); ++i) {
      frames[f][i].frame = static_cast<int>(f);
      frames[f][i].pixels.push_back(
          pack_pixel(static_cast<int>(i), 1000 + static_cast<int>(f % 2)));
    }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [f, a, b] = g.edges[e];
    const PixelKey shared = pack_pixel(static_cast<int>(e), static_cast<int>(f % 2));
    frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(a)]
        .pixels.push_back(shared);
    frames[static_cast<std::size_t>(f) + 1][static_cast<std::size_t>(b)]
        .pixels.push_back(shared);
  }
  for (auto& frame : frames)
    for (Blob& b : frame) finalize_blob_geometry(b);
  return frames;
}

// Literal chain-finder: links (a in frame f) -> (b in frame f+1) iff
// N_a = {b}, P_b = {a} and both share the kind; fragments are the maximal
// chains, numbered in frame-major discovery order.
struct BruteFragments {
  std::vector<std::vector<std::pair<int, int>>> individual;  // (frame, index)
  std::vector<std::vector<std::pair<int, int>>> crossing;
};

BruteFragments brute_force_fragments(
    const std::vector<std::vector<BlobKind>>& kinds, const OverlapGraph& g) {
  const int m = g.frame_count();
  auto linked = [&](int f, int i, int& out_next) {
    const auto n = g.next(f, i);
    if (n.size() != 1) return false;
    if (g.prev(f + 1, n[0]).size() != 1) return false;
    if (kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)] !=
        kinds[static_cast<std::size_t>(f) + 1][static_cast<std::size_t>(n[0])])
      return false;
    out_next = n[0];
    return true;
  };
  std::vector<std::vector<bool>> used(static_cast<std::size_t>(m));
  for (int f = 0; f < m; ++f)
    used[static_cast<std::size_t>(f)].assign(
        static_cast<std::size_t>(g.blob_count(f)), false);
  BruteFragments out;
  for (int f = 0; f < m; ++f)
    for (int i = 0; i < g.blob_count(f); ++i) {
      if (used[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)]) continue;
      std::vector<std::pair<int, int>> chain;
      int cf = f, ci = i;
      for (;;) {
        used[static_cast<std::size_t>(cf)][static_cast<std::size_t>(ci)] = true;
        chain.emplace_back(cf, ci);
        int next;
        if (cf + 1 >= m || !linked(cf, ci, next)) break;
        cf = cf + 1;
        ci = next;
      }
      if (kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)] ==
          BlobKind::individual)
        out.individual.push_back(std::move(chain));
      else
        out.crossing.push_back(std::move(chain));
    }
  return out;
}

Fragment make_fragment(int id, int start, const std::vector<Vec2>& centroids) {
  Fragment f;
  f.id = id;
  f.start_frame = start;
  f.end_frame = start + static_cast<int>(centroids.size()) - 1;
  f.centroids = centroids;
  for (int i = 0; i < static_cast<int>(centroids.size()); ++i)
    f.blobs.push_back({start + i, 0});
  return f;
}

}  // namespace

TEST_CASE("area model from complete frames") {
  // Areas {98,100,100,102}: median 100, population sigma sqrt(2).
  std::vector<std::vector<Blob>> frames(2);
  auto blob_of_area = [](int frame, int x0, int area) {
    Blob b;
    b.frame = frame;
    for (int k = 0; k < area; ++k) b.pixels.push_back(pack_pixel(x0 + k, frame));
    finalize_blob_geometry(b);
    return b;
  };
  frames[0].push_back(blob_of_area(0, 0, 98));
  frames[0].push_back(blob_of_area(0, 200, 100));
  frames[1].push_back(blob_of_area(1, 0, 100));
  frames[1].push_back(blob_of_area(1, 200, 102));
  const AreaModel model = fit_area_model(frames, 2);
  CHECK(model.median_area == doctest::Approx(100.0));
  CHECK(model.sigma_area == doctest::Approx(std::sqrt(2.0)));
  CHECK(model.is_individual(104.0));   // |4| < 5.657
  CHECK_FALSE(model.is_individual(106.0));  // |6| > 5.657

  AreaModel degenerate;
  degenerate.median_area = 100.0;
  degenerate.sigma_area = 0.0;
  CHECK_FALSE(degenerate.is_individual(100.0));  // strict inequality
}

TEST_CASE("fit_area_model raises with a histogram when no frame is complete") {
  std::vector<std::vector<Blob>> frames(3);
  Blob b;
  b.pixels = {pack_pixel(0, 0)};
  finalize_blob_geometry(b);
  frames[0].push_back(b);
  frames[1].push_back(b);
  frames[1].push_back(b);
  frames[1].push_back(b);
  try {
    fit_area_model(frames, 2);
    FAIL("expected NoCompleteFrame");
  } catch (const NoCompleteFrame& e) {
    const std::string msg = e.what();
    CHECK(msg.find("histogram") != std::string::npos);
    CHECK(msg.find("0x1") != std::string::npos);  // one empty frame
    CHECK(msg.find("3x1") != std::string::npos);
    CHECK(msg.find("1x1") != std::string::npos);
  }
}

// Shared scenario: a,b (f0) -> c,d (f1) -> X (f2) -> Y (f3) -> Z (f4) ->
// e,f (f5). Lane areas: a,b,e,f = 2; c,d,Y = 3; X,Z = 4.
namespace {
GraphBuilder merge_split_scenario() {
  GraphBuilder g;
  g.blobs_per_frame = {2, 2, 1, 1, 1, 2};
  g.edges = {{0, 0, 0}, {0, 1, 1}, {1, 0, 0}, {1, 1, 0},
             {2, 0, 0}, {3, 0, 0}, {4, 0, 0}, {4, 0, 1}};
  return g;
}
}  // namespace

TEST_CASE("sure image rules on a resolved merge") {
  const auto frames = lane_frames(merge_split_scenario());
  const OverlapGraph graph(frames);
  AreaModel area;
  area.median_area = 2.0;
  area.sigma_area = 0.3;  // individual iff area in (0.8, 3.2)
  const auto labels = mark_sure_images(frames, area, graph);

  // c sits on a clean 1-1 chain: past ends at the video start, future ends
  // at the merge into X, which caps the evidence window.
  CHECK(labels[1][0] == SureLabel::sure_individual);
  CHECK(labels[1][1] == SureLabel::sure_individual);
  // a has no predecessor at all: condition (b) fails.
  CHECK(labels[0][0] == SureLabel::ambiguous);
  // X merges two blobs and is oversized: rule 1 sure crossing. Z splits.
  CHECK(labels[2][0] == SureLabel::sure_crossing);
  CHECK(labels[4][0] == SureLabel::sure_crossing);
  // Y looks like an individual by area but its past history ends on the
  // unresolved merge at X: ambiguous.
  CHECK(labels[3][0] == SureLabel::ambiguous);
}

TEST_CASE("individual-area blob with a split downstream is ambiguous") {
  // U (f0) -> W (f1) -> V (f2) -> e,f (f3); W has individual area, V splits.
  GraphBuilder g;
  g.blobs_per_frame = {1, 1, 1, 2};
  g.edges = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {2, 0, 1}};
  const auto frames = lane_frames(g);
  const OverlapGraph graph(frames);
  AreaModel area;
  area.median_area = 2.0;
  area.sigma_area = 0.3;  // U=2, W=3 individual; V=4 crossing
  const auto labels = mark_sure_images(frames, area, graph);
  CHECK(labels[1][0] == SureLabel::ambiguous);
  CHECK(labels[2][0] == SureLabel::sure_crossing);  // rule 1 via the split
}

TEST_CASE("sure crossing rule 2 fires between a merge and a split") {
  const auto frames = lane_frames(merge_split_scenario());
  const OverlapGraph graph(frames);
  AreaModel area;
  area.median_area = 2.0;
  area.sigma_area = 0.2;  // individual iff area in (1.2, 2.8): Y(3) is not
  const auto labels = mark_sure_images(frames, area, graph);
  // Y: crossing by area, 1-1 links, some past blob with |P|>1 and some
  // future blob with |N|>1.
  CHECK(labels[3][0] == SureLabel::sure_crossing);
  // c has the same area but a clean past: neither rule applies.
  CHECK(labels[1][0] == SureLabel::ambiguous);
}

TEST_CASE("fragments match the toy merge scenario") {
  // 2 animals merging at frame 5 into one crossing blob for 3 frames, then
  // splitting: 4 individual fragments + 1 crossing fragment of 3 blobs.
  GraphBuilder g;
  g.blobs_per_frame = {2, 2, 2, 2, 2, 1, 1, 1, 2, 2};
  g.edges = {{0, 0, 0}, {0, 1, 1}, {1, 0, 0}, {1, 1, 1}, {2, 0, 0}, {2, 1, 1},
             {3, 0, 0}, {3, 1, 1}, {4, 0, 0}, {4, 1, 0}, {5, 0, 0}, {6, 0, 0},
             {7, 0, 0}, {7, 0, 1}, {8, 0, 0}, {8, 1, 1}};
  const auto frames = lane_frames(g);
  const OverlapGraph graph(frames);
  std::vector<std::vector<BlobKind>> kinds(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    kinds[f].assign(frames[f].size(), BlobKind::individual);
  kinds[5][0] = kinds[6][0] = kinds[7][0] = BlobKind::crossing;

  const FragmentSet set = build_fragments(frames, kinds, graph);
  CHECK(set.individual.size() == 4);
  REQUIRE(set.crossing.size() == 1);
  CHECK(set.crossing[0].length() == 3);
  CHECK(set.crossing[0].start_frame == 5);
  CHECK(set.crossing[0].end_frame == 7);

  // Partition: every blob in exactly one fragment.
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t i = 0; i < frames[f].size(); ++i)
      CHECK(set.blob_fragment[f][i].second >= 0);
}

TEST_CASE("a blob with two successors ends its fragment") {
  GraphBuilder g;
  g.blobs_per_frame = {1, 2};
  g.edges = {{0, 0, 0}, {0, 0, 1}};
  const auto frames = lane_frames(g);
  const OverlapGraph graph(frames);
  std::vector<std::vector<BlobKind>> kinds(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    kinds[f].assign(frames[f].size(), BlobKind::individual);
  const FragmentSet set = build_fragments(frames, kinds, graph);
  CHECK(set.individual.size() == 3);
  CHECK(set.individual[0].length() == 1);
}

TEST_CASE("single animal with no crossing yields one fragment") {
  GraphBuilder g;
  g.blobs_per_frame = std::vector<int>(10, 1);
  for (int f = 0; f < 9; ++f) g.edges.push_back({f, 0, 0});
  const auto frames = lane_frames(g);
  const OverlapGraph graph(frames);
  std::vector<std::vector<BlobKind>> kinds(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    kinds[f].assign(frames[f].size(), BlobKind::individual);
  const FragmentSet set = build_fragments(frames, kinds, graph);
  REQUIRE(set.individual.size() == 1);
  CHECK(set.individual[0].length() == 10);
}

TEST_CASE("fragmentation equals the literal chain-finder on random graphs") {
  Rng rng(20240811);
  for (int trial = 0; trial < 60; ++trial) {
    const int frames_n = 5 + static_cast<int>(rng.below(60));
    const int max_blobs = 1 + static_cast<int>(rng.below(6));
    GraphBuilder g;
    g.blobs_per_frame.resize(static_cast<std::size_t>(frames_n));
    for (int f = 0; f < frames_n; ++f)
      g.blobs_per_frame[static_cast<std::size_t>(f)] =
          1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_blobs)));
    for (int f = 0; f + 1 < frames_n; ++f) {
      const int a_count = g.blobs_per_frame[static_cast<std::size_t>(f)];
      const int b_count = g.blobs_per_frame[static_cast<std::size_t>(f) + 1];
      for (int a = 0; a < a_count; ++a)
        for (int b = 0; b < b_count; ++b)
          if (rng.uniform() < 0.35) g.edges.push_back({f, a, b});
    }
    const auto frames = lane_frames(g);
    const OverlapGraph graph(frames);
    std::vector<std::vector<BlobKind>> kinds(frames.size());
    Rng kind_rng(derive_seed(99, static_cast<std::uint64_t>(trial)));
    for (std::size_t f = 0; f < frames.size(); ++f) {
      kinds[f].resize(frames[f].size());
      for (std::size_t i = 0; i < frames[f].size(); ++i)
        kinds[f][i] = kind_rng.uniform() < 0.7 ? BlobKind::individual
                                               : BlobKind::crossing;
    }

    const FragmentSet set = build_fragments(frames, kinds, graph);
    const BruteFragments brute = brute_force_fragments(kinds, graph);

    REQUIRE(set.individual.size() == brute.individual.size());
    REQUIRE(set.crossing.size() == brute.crossing.size());
    for (std::size_t k = 0; k < brute.individual.size(); ++k) {
      const Fragment& mine = set.individual[k];
      REQUIRE(mine.blobs.size() == brute.individual[k].size());
      for (std::size_t j = 0; j < mine.blobs.size(); ++j) {
        CHECK(mine.blobs[j].frame == brute.individual[k][j].first);
        CHECK(mine.blobs[j].index == brute.individual[k][j].second);
      }
    }
    for (std::size_t k = 0; k < brute.crossing.size(); ++k) {
      const Fragment& mine = set.crossing[k];
      REQUIRE(mine.blobs.size() == brute.crossing[k].size());
      for (std::size_t j = 0; j < mine.blobs.size(); ++j)
        CHECK(mine.blobs[j].frame == brute.crossing[k][j].first);
    }
  }
}

TEST_CASE("global fragments from coexistence intervals") {
  std::vector<Fragment> fragments;
  // n=2. A spans [0,9], B [0,4], C [6,9]: globals {A,B} core 0, {A,C} core 6.
  fragments.push_back(make_fragment(0, 0, std::vector<Vec2>(10, Vec2(0, 0))));
  fragments.push_back(make_fragment(1, 0, std::vector<Vec2>(5, Vec2(1, 1))));
  fragments.push_back(make_fragment(2, 6, std::vector<Vec2>(4, Vec2(2, 2))));
  const auto globals = build_global_fragments(fragments, 2);
  REQUIRE(globals.size() == 2);
  CHECK(globals[0].core_frame == 0);
  CHECK(globals[0].members == std::vector<int>{0, 1});
  CHECK(globals[1].core_frame == 6);
  CHECK(globals[1].members == std::vector<int>{0, 2});
}

TEST_CASE("short members exclude the interval from global fragments") {
  std::vector<Fragment> fragments;
  fragments.push_back(make_fragment(0, 0, std::vector<Vec2>(10, Vec2(0, 0))));
  fragments.push_back(make_fragment(1, 2, std::vector<Vec2>(2, Vec2(1, 1))));
  CHECK(build_global_fragments(fragments, 2).empty());
}

TEST_CASE("two full-span fragments give one global with core 0") {
  std::vector<Fragment> fragments;
  fragments.push_back(make_fragment(0, 0, std::vector<Vec2>(10, Vec2(0, 0))));
  fragments.push_back(make_fragment(1, 0, std::vector<Vec2>(10, Vec2(1, 1))));
  const auto globals = build_global_fragments(fragments, 2);
  REQUIRE(globals.size() == 1);
  CHECK(globals[0].core_frame == 0);
}

TEST_CASE("distance travelled sums consecutive centroid distances") {
  Fragment f = make_fragment(0, 0, {Vec2(0, 0), Vec2(3, 4), Vec2(3, 10)});
  CHECK(distance_travelled(f) == doctest::Approx(11.0));
  Fragment single = make_fragment(1, 0, {Vec2(5, 5)});
  CHECK(distance_travelled(single) == 0.0);
  Fragment still = make_fragment(2, 0, {Vec2(1, 1), Vec2(1, 1), Vec2(1, 1)});
  CHECK(distance_travelled(still) == 0.0);
}

TEST_CASE("graph edge reciprocity on random pixel blobs") {
  Rng rng(7);
  std::vector<std::vector<Blob>> frames(6);
  for (int f = 0; f < 6; ++f) {
    const int count = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < count; ++i) {
      Blob b;
      b.frame = f;
      const int cx = static_cast<int>(rng.below(30));
      const int cy = static_cast<int>(rng.below(30));
      for (int dx = 0; dx < 3; ++dx)
        for (int dy = 0; dy < 3; ++dy)
          b.pixels.push_back(pack_pixel(cx + dx, cy + dy));
      finalize_blob_geometry(b);
      frames[static_cast<std::size_t>(f)].push_back(std::move(b));
    }
  }
  const OverlapGraph graph(frames);
  for (int f = 0; f + 1 < 6; ++f)
    for (int i = 0; i < graph.blob_count(f); ++i)
      for (const int j : graph.next(f, i)) {
        const auto p = graph.prev(f + 1, j);
        CHECK(std::find(p.begin(), p.end(), i) != p.end());
      }
}
