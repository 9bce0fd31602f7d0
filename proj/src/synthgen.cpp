#include "fragtrack/synthgen.hpp"

#include "fragtrack/ingest.hpp"
#include "fragtrack/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace fragtrack {
namespace {

using nlohmann::json;

constexpr double kMinSeparationBl = 1.3;   // body lengths between free animals
constexpr double kCrossingTrigger = 1.5;   // approach distance starting a crossing
constexpr double kCrossingOffsetBl = 0.3;  // half-distance of the merged pair
constexpr double kExitOffsetBl = 0.75;

// Smooth per-individual texture over body coordinates in [-1, 1]^2.
struct Texture {
  static constexpr int kWaves = 4;
  double amp[kWaves], px[kWaves], py[kWaves], phase[kWaves];

  static Texture random(Rng& rng) {
    Texture t;
    for (int w = 0; w < kWaves; ++w) {
      t.amp[w] = rng.uniform(0.5, 1.0);
      t.px[w] = rng.uniform(0.5, 2.5);
      t.py[w] = rng.uniform(0.5, 2.5);
      t.phase[w] = rng.uniform(0.0, 2.0 * M_PI);
    }
    return t;
  }

  double value(double u, double v) const {
    double acc = 0.0, norm = 0.0;
    for (int w = 0; w < kWaves; ++w) {
      acc += amp[w] * std::cos(M_PI * (px[w] * u + py[w] * v) + phase[w]);
      norm += amp[w];
    }
    return acc / norm;  // in [-1, 1]
  }
};

enum class Mode { free_run, wanting, approaching, crossing };

struct Individual {
  Vec2 pos = Vec2::Zero();
  double heading = 0.0;
  Mode mode = Mode::free_run;
  int run_left = 0;
  int crossing_left = 0;
  int partner = -1;
  Vec2 crossing_axis = Vec2::UnitX();
  Texture texture_a, texture_b;
  int segment_start = 0;
};

struct EllipseSpec {
  Vec2 center;
  double angle;
  double a, b;  // semi-axes
  const Individual* who;
  int individual;
};

}  // namespace

void SynthConfig::validate() const {
  if (n_individuals < 2) throw std::invalid_argument("n_individuals must be >= 2");
  if (total_frames < 1) throw std::invalid_argument("total_frames must be >= 1");
  if (gamma_theta <= 0.0 || gamma_k <= 0.0)
    throw std::invalid_argument("gamma parameters must be positive");
  if (crossing_length < 0)
    throw std::invalid_argument("crossing_length must be >= 0");
  if (body_length < 4.0)
    throw std::invalid_argument("body_length must be at least 4 px");
  if (snr <= 0.0) throw std::invalid_argument("snr must be positive");
  if (appearance_drift < 0.0 || appearance_drift > 1.0)
    throw std::invalid_argument("appearance_drift must be in [0, 1]");
  if (crossing_length > 0 && n_individuals < 2)
    throw std::invalid_argument("crossings need at least two individuals");
}

SyntheticVideo generate_synthetic_video(const SynthConfig& config) {
  config.validate();
  const int n = config.n_individuals;
  const double bl = config.body_length;
  const int cells = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double spacing = 5.0 * bl;
  const double margin = 1.5 * bl;
  const int side = static_cast<int>(std::ceil(cells * spacing + 2 * margin));

  Rng sim(derive_seed(config.seed, 0x51u));
  std::vector<Individual> animals(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Individual& a = animals[static_cast<std::size_t>(i)];
    const int gx = i % cells;
    const int gy = i / cells;
    a.pos = Vec2(margin + (gx + 0.5) * spacing, margin + (gy + 0.5) * spacing);
    a.heading = sim.uniform(0.0, 2.0 * M_PI);
    a.run_left = std::max(1, static_cast<int>(std::ceil(
                                 sim.gamma(config.gamma_k, config.gamma_theta))));
    Rng tex(derive_seed(config.seed, 0x7e00u + static_cast<std::uint64_t>(i)));
    a.texture_a = Texture::random(tex);
    a.texture_b = Texture::random(tex);
  }

  SyntheticVideo video;
  video.width = side;
  video.height = side;
  video.truth.n_individuals = n;
  video.truth.total_frames = config.total_frames;
  video.truth.body_length = bl;
  video.truth.entries.resize(static_cast<std::size_t>(config.total_frames));
  video.truth.segments.resize(static_cast<std::size_t>(n));
  video.frames.resize(static_cast<std::size_t>(config.total_frames));

  auto clamp_pos = [&](Vec2 p) {
    p.x() = std::clamp(p.x(), margin, side - margin);
    p.y() = std::clamp(p.y(), margin, side - margin);
    return p;
  };
  // Separation rules keep separate blobs pixel-disjoint: a free ellipse
  // reaches 0.5 BL from its center, a crossing blob 0.8 BL from its anchor.
  auto too_close = [&](int self, const Vec2& p) {
    const int partner = animals[static_cast<std::size_t>(self)].partner;
    for (int j = 0; j < n; ++j) {
      if (j == self || j == partner) continue;
      const Individual& other = animals[static_cast<std::size_t>(j)];
      const double required =
          other.mode == Mode::crossing ? 2.2 * bl : kMinSeparationBl * bl;
      if ((other.pos - p).norm() < required) return true;
    }
    return false;
  };
  // A crossing may only form where its blob stays clear of everyone else.
  auto formation_safe = [&](const Vec2& mid, int self, int partner) {
    for (int j = 0; j < n; ++j) {
      if (j == self || j == partner) continue;
      const Individual& other = animals[static_cast<std::size_t>(j)];
      const double required = other.mode == Mode::crossing ? 3.6 * bl : 2.2 * bl;
      if ((other.pos - mid).norm() < required) return false;
    }
    return true;
  };

  for (int frame = 0; frame < config.total_frames; ++frame) {
    // Expired runs queue up for a crossing.
    if (config.crossing_length > 0) {
      for (int i = 0; i < n; ++i) {
        Individual& a = animals[static_cast<std::size_t>(i)];
        if (a.mode == Mode::free_run && a.run_left <= 0) a.mode = Mode::wanting;
      }
      // Pair the nearest waiting individuals.
      std::vector<int> wanting;
      for (int i = 0; i < n; ++i)
        if (animals[static_cast<std::size_t>(i)].mode == Mode::wanting)
          wanting.push_back(i);
      while (wanting.size() >= 2) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 1;
        for (std::size_t x = 0; x < wanting.size(); ++x)
          for (std::size_t y = x + 1; y < wanting.size(); ++y) {
            const double d = (animals[static_cast<std::size_t>(wanting[x])].pos -
                              animals[static_cast<std::size_t>(wanting[y])].pos)
                                 .norm();
            if (d < best) {
              best = d;
              bi = x;
              bj = y;
            }
          }
        const int i = wanting[bi];
        const int j = wanting[bj];
        animals[static_cast<std::size_t>(i)].mode = Mode::approaching;
        animals[static_cast<std::size_t>(i)].partner = j;
        animals[static_cast<std::size_t>(j)].mode = Mode::approaching;
        animals[static_cast<std::size_t>(j)].partner = i;
        wanting.erase(wanting.begin() + static_cast<std::ptrdiff_t>(bj));
        wanting.erase(wanting.begin() + static_cast<std::ptrdiff_t>(bi));
      }
    }

    // Movement.
    for (int i = 0; i < n; ++i) {
      Individual& a = animals[static_cast<std::size_t>(i)];
      switch (a.mode) {
        case Mode::free_run:
        case Mode::wanting: {
          a.heading += sim.normal(0.0, 0.35);
          const double step = config.max_step * sim.uniform(0.4, 1.0);
          Vec2 proposal =
              clamp_pos(a.pos + step * Vec2(std::cos(a.heading), std::sin(a.heading)));
          bool placed = false;
          for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
            if (!too_close(i, proposal)) {
              placed = true;
              break;
            }
            a.heading += M_PI / 3.0 + sim.uniform(0.0, 0.3);
            proposal = clamp_pos(a.pos + step * Vec2(std::cos(a.heading),
                                                     std::sin(a.heading)));
          }
          if (placed) a.pos = proposal;
          if (a.mode == Mode::free_run) --a.run_left;
          break;
        }
        case Mode::approaching: {
          if (a.partner < i) break;  // the pair moves once, driven by the lower id
          Individual& b = animals[static_cast<std::size_t>(a.partner)];
          const Vec2 gap = b.pos - a.pos;
          const double dist = gap.norm();
          if (dist > kCrossingTrigger * bl) {
            const Vec2 dir = gap / dist;
            const double step =
                std::min(config.max_step, (dist - kCrossingTrigger * bl) / 2.0 + 0.1);
            Vec2 pa = clamp_pos(a.pos + step * dir);
            Vec2 pb = clamp_pos(b.pos - step * dir);
            if (!too_close(i, pa)) a.pos = pa;
            if (!too_close(a.partner, pb)) b.pos = pb;
          }
          const Vec2 mid = 0.5 * (a.pos + b.pos);
          if ((b.pos - a.pos).norm() <= kCrossingTrigger * bl &&
              formation_safe(mid, i, a.partner)) {
            Vec2 axis = (b.pos - a.pos);
            axis = axis.norm() > 1e-9 ? Vec2(axis / axis.norm()) : Vec2::UnitX();
            a.mode = Mode::crossing;
            b.mode = Mode::crossing;
            a.crossing_left = config.crossing_length;
            b.crossing_left = config.crossing_length;
            a.crossing_axis = -axis;
            b.crossing_axis = axis;
            a.pos = mid;
            b.pos = mid;
            // Close the individual segments at the previous frame.
            video.truth.segments[static_cast<std::size_t>(i)].push_back(
                {a.segment_start, frame - 1, false});
            video.truth.segments[static_cast<std::size_t>(a.partner)].push_back(
                {b.segment_start, frame - 1, false});
            a.segment_start = frame;
            b.segment_start = frame;
          } else if ((b.pos - a.pos).norm() <= kCrossingTrigger * bl) {
            // Hovering until the neighbourhood clears; small random drift so
            // near-deadlocks relax.
            const Vec2 jig(sim.normal(0.0, 0.3 * config.max_step),
                           sim.normal(0.0, 0.3 * config.max_step));
            const Vec2 pa = clamp_pos(a.pos + jig);
            const Vec2 pb = clamp_pos(b.pos + jig);
            if (!too_close(i, pa) && !too_close(a.partner, pb)) {
              a.pos = pa;
              b.pos = pb;
            }
          }
          break;
        }
        case Mode::crossing: {
          if (a.partner < i) break;
          Individual& b = animals[static_cast<std::size_t>(a.partner)];
          --a.crossing_left;
          --b.crossing_left;
          if (a.crossing_left <= 0) {
            // This frame already renders them apart again.
            const Vec2 mid = a.pos;
            const Vec2 u = a.crossing_axis;
            a.pos = mid + kExitOffsetBl * bl * u;
            b.pos = mid - kExitOffsetBl * bl * u;
            a.heading = std::atan2(u.y(), u.x()) + sim.normal(0.0, 0.3);
            b.heading = std::atan2(-u.y(), -u.x()) + sim.normal(0.0, 0.3);
            a.mode = Mode::free_run;
            b.mode = Mode::free_run;
            a.run_left = std::max(1, static_cast<int>(std::ceil(sim.gamma(
                                         config.gamma_k, config.gamma_theta))));
            b.run_left = std::max(1, static_cast<int>(std::ceil(sim.gamma(
                                         config.gamma_k, config.gamma_theta))));
            video.truth.segments[static_cast<std::size_t>(i)].push_back(
                {a.segment_start, frame - 1, true});
            video.truth.segments[static_cast<std::size_t>(a.partner)].push_back(
                {b.segment_start, frame - 1, true});
            a.segment_start = frame;
            b.segment_start = frame;
            a.partner = -1;
            b.partner = -1;
          } else {
            const Vec2 drift(sim.normal(0.0, 0.3), sim.normal(0.0, 0.3));
            const Vec2 mid = clamp_pos(a.pos + drift);
            if (formation_safe(mid, i, a.partner)) {
              a.pos = mid;
              b.pos = mid;
            }
          }
          break;
        }
      }
    }

    // Rasterize.
    auto& truth_row = video.truth.entries[static_cast<std::size_t>(frame)];
    truth_row.resize(static_cast<std::size_t>(n));
    const double noise_sigma = 55.0 / config.snr;
    const double tau =
        config.total_frames > 1
            ? config.appearance_drift *
                  (static_cast<double>(frame) / (config.total_frames - 1))
            : 0.0;

    struct Piece {
      EllipseSpec spec;
      int crossing_partner;  // -1 for separate individuals
    };
    std::vector<Piece> pieces;
    std::vector<char> handled(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      if (handled[static_cast<std::size_t>(i)]) continue;
      Individual& a = animals[static_cast<std::size_t>(i)];
      const double jitter = 1.0 + sim.uniform(-0.04, 0.04);
      if (a.mode == Mode::crossing && a.partner >= 0) {
        Individual& b = animals[static_cast<std::size_t>(a.partner)];
        handled[static_cast<std::size_t>(i)] = 1;
        handled[static_cast<std::size_t>(a.partner)] = 1;
        const double angle =
            std::atan2(a.crossing_axis.y(), a.crossing_axis.x());
        const Vec2 ca = a.pos + kCrossingOffsetBl * bl * a.crossing_axis;
        const Vec2 cb = b.pos + kCrossingOffsetBl * bl * b.crossing_axis;
        const double jb = 1.0 + sim.uniform(-0.04, 0.04);
        pieces.push_back({{ca, angle, jitter * bl / 2.0,
                           jitter * bl * config.body_aspect / 2.0, &a, i},
                          a.partner});
        pieces.push_back({{cb, angle, jb * bl / 2.0,
                           jb * bl * config.body_aspect / 2.0, &b, a.partner},
                          i});
        truth_row[static_cast<std::size_t>(i)].centroid = ca;
        truth_row[static_cast<std::size_t>(i)].in_crossing = true;
        truth_row[static_cast<std::size_t>(a.partner)].centroid = cb;
        truth_row[static_cast<std::size_t>(a.partner)].in_crossing = true;
      } else {
        handled[static_cast<std::size_t>(i)] = 1;
        pieces.push_back({{a.pos, a.heading, jitter * bl / 2.0,
                           jitter * bl * config.body_aspect / 2.0, &a, i},
                          -1});
        truth_row[static_cast<std::size_t>(i)].centroid = a.pos;
        truth_row[static_cast<std::size_t>(i)].in_crossing = false;
      }
    }

    // Paint each piece into a shared canvas region; touching pieces of a
    // crossing merge into one connected blob.
    std::vector<Blob> blobs;
    std::vector<int> piece_blob(pieces.size(), -1);
    std::vector<char> piece_done(pieces.size(), 0);
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      if (piece_done[p]) continue;
      std::vector<std::size_t> group{p};
      piece_done[p] = 1;
      if (pieces[p].crossing_partner >= 0) {
        for (std::size_t q = p + 1; q < pieces.size(); ++q)
          if (!piece_done[q] &&
              pieces[q].spec.individual == pieces[p].crossing_partner) {
            group.push_back(q);
            piece_done[q] = 1;
            break;
          }
      }
      Blob blob;
      blob.frame = frame;
      std::vector<float> values;
      for (const std::size_t g : group) {
        const EllipseSpec& e = pieces[g].spec;
        const Individual& who = *e.who;
        const double c = std::cos(e.angle), s = std::sin(e.angle);
        const int x0 = std::max(0, static_cast<int>(std::floor(e.center.x() - e.a - 1)));
        const int x1 = std::min(side - 1, static_cast<int>(std::ceil(e.center.x() + e.a + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(e.center.y() - e.a - 1)));
        const int y1 = std::min(side - 1, static_cast<int>(std::ceil(e.center.y() + e.a + 1)));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - e.center.x();
            const double dy = y - e.center.y();
            const double u = (dx * c + dy * s) / e.a;
            const double v = (-dx * s + dy * c) / e.b;
            if (u * u + v * v > 1.0) continue;
            const double base =
                (1.0 - tau) * who.texture_a.value(u, v) +
                tau * who.texture_b.value(u, v);
            const double value = 90.0 + 55.0 * base + sim.normal(0.0, noise_sigma);
            blob.pixels.push_back(pack_pixel(x, y));
            values.push_back(static_cast<float>(std::clamp(value, 5.0, 190.0)));
          }
      }
      // Deduplicate pixels painted by both halves of a crossing.
      std::vector<std::size_t> order(blob.pixels.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&blob](std::size_t a, std::size_t b) {
        return blob.pixels[a] < blob.pixels[b];
      });
      std::vector<PixelKey> pixels;
      std::vector<float> vals;
      for (const std::size_t o : order) {
        if (!pixels.empty() && pixels.back() == blob.pixels[o]) continue;
        pixels.push_back(blob.pixels[o]);
        vals.push_back(values[o]);
      }
      blob.pixels = std::move(pixels);
      finalize_blob_geometry(blob);
      blob.image.resize(blob.bbox.height(), blob.bbox.width());
      blob.image.setZero();
      for (std::size_t k = 0; k < blob.pixels.size(); ++k) {
        const int bx = pixel_x(blob.pixels[k]) - blob.bbox.min_x;
        const int by = pixel_y(blob.pixels[k]) - blob.bbox.min_y;
        blob.image(by, bx) = static_cast<std::uint8_t>(
            std::clamp<long>(std::lround(vals[k]), 0, 255));
      }
      const int blob_index = static_cast<int>(blobs.size());
      for (const std::size_t g : group)
        piece_blob[g] = blob_index;
      blobs.push_back(std::move(blob));
    }

    // Emit in scan order and map ground truth to blob indices.
    std::vector<int> emit_order(blobs.size());
    std::iota(emit_order.begin(), emit_order.end(), 0);
    std::sort(emit_order.begin(), emit_order.end(), [&blobs](int a, int b) {
      return blobs[static_cast<std::size_t>(a)].pixels.front() <
             blobs[static_cast<std::size_t>(b)].pixels.front();
    });
    std::vector<int> new_index(blobs.size());
    std::vector<Blob> sorted;
    sorted.reserve(blobs.size());
    for (std::size_t k = 0; k < emit_order.size(); ++k) {
      new_index[static_cast<std::size_t>(emit_order[k])] = static_cast<int>(k);
      sorted.push_back(std::move(blobs[static_cast<std::size_t>(emit_order[k])]));
    }
    for (std::size_t p = 0; p < pieces.size(); ++p)
      truth_row[static_cast<std::size_t>(pieces[p].spec.individual)].blob_index =
          new_index[static_cast<std::size_t>(piece_blob[p])];
    video.frames[static_cast<std::size_t>(frame)] = std::move(sorted);
  }

  // Close the trailing segments.
  for (int i = 0; i < n; ++i) {
    Individual& a = animals[static_cast<std::size_t>(i)];
    if (a.segment_start <= config.total_frames - 1)
      video.truth.segments[static_cast<std::size_t>(i)].push_back(
          {a.segment_start, config.total_frames - 1,
           a.mode == Mode::crossing});
  }
  return video;
}

void write_pgm_frames(const std::filesystem::path& directory,
                      const SyntheticVideo& video) {
  std::filesystem::create_directories(directory);
  const int digits = 6;
  for (std::size_t f = 0; f < video.frames.size(); ++f) {
    GrayImage frame(video.height, video.width);
    frame.setConstant(255);
    for (const Blob& b : video.frames[f])
      for (const PixelKey k : b.pixels)
        frame(pixel_y(k), pixel_x(k)) =
            b.image(pixel_y(k) - b.bbox.min_y, pixel_x(k) - b.bbox.min_x);
    std::string name = std::to_string(f);
    name.insert(0, static_cast<std::size_t>(digits) - std::min<std::size_t>(
                       static_cast<std::size_t>(digits), name.size()),
                '0');
    write_pgm(directory / (name + ".pgm"), frame);
  }
}

void GroundTruth::save(const std::filesystem::path& path) const {
  json root;
  root["n_individuals"] = n_individuals;
  root["total_frames"] = total_frames;
  root["body_length"] = body_length;
  json jframes = json::array();
  for (const auto& row : entries) {
    json jrow = json::array();
    for (const GroundTruthEntry& e : row)
      jrow.push_back({{"x", e.centroid.x()},
                      {"y", e.centroid.y()},
                      {"crossing", e.in_crossing},
                      {"blob", e.blob_index}});
    jframes.push_back(std::move(jrow));
  }
  root["frames"] = std::move(jframes);
  json jsegments = json::array();
  for (const auto& list : segments) {
    json jlist = json::array();
    for (const PlantedSegment& s : list)
      jlist.push_back({{"start", s.start}, {"end", s.end}, {"crossing", s.crossing}});
    jsegments.push_back(std::move(jlist));
  }
  root["segments"] = std::move(jsegments);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << root.dump() << "\n";
}

GroundTruth GroundTruth::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json root;
  in >> root;
  GroundTruth truth;
  truth.n_individuals = root.at("n_individuals").get<int>();
  truth.total_frames = root.at("total_frames").get<int>();
  truth.body_length = root.at("body_length").get<double>();
  for (const json& jrow : root.at("frames")) {
    std::vector<GroundTruthEntry> row;
    for (const json& je : jrow) {
      GroundTruthEntry e;
      e.centroid = Vec2(je.at("x").get<double>(), je.at("y").get<double>());
      e.in_crossing = je.at("crossing").get<bool>();
      e.blob_index = je.at("blob").get<int>();
      row.push_back(e);
    }
    truth.entries.push_back(std::move(row));
  }
  for (const json& jlist : root.at("segments")) {
    std::vector<PlantedSegment> list;
    for (const json& js : jlist)
      list.push_back({js.at("start").get<int>(), js.at("end").get<int>(),
                      js.at("crossing").get<bool>()});
    truth.segments.push_back(std::move(list));
  }
  return truth;
}

std::vector<int> match_identities_at_frame(const TrackedResult& result,
                                           const GroundTruth& truth, int frame,
                                           int n_animals) {
  std::vector<int> map(static_cast<std::size_t>(n_animals), -1);
  const auto& row = truth.entries.at(static_cast<std::size_t>(frame));
  for (int i = 0; i < static_cast<int>(row.size()); ++i) {
    const GroundTruthEntry& e = row[static_cast<std::size_t>(i)];
    if (e.in_crossing || e.blob_index < 0) continue;
    const int assigned =
        result.blob_identity[static_cast<std::size_t>(frame)]
                            [static_cast<std::size_t>(e.blob_index)];
    if (assigned >= 0 && assigned < n_animals)
      map[static_cast<std::size_t>(assigned)] = i;
  }
  return map;
}

ValidationMetrics validation_metrics(const TrackedResult& result,
                                     const GroundTruth& truth, int span_begin,
                                     int span_end,
                                     const std::vector<int>& identity_map,
                                     const std::vector<int>& individuals) {
  if (span_begin > span_end || span_begin < 0 ||
      span_end >= truth.total_frames)
    throw std::invalid_argument("validation span is empty or out of range");
  ValidationMetrics metrics;
  std::map<int, long> per_total, per_correct;
  const std::set<int> chosen(individuals.begin(), individuals.end());
  for (int frame = span_begin; frame <= span_end; ++frame) {
    const auto& row = truth.entries[static_cast<std::size_t>(frame)];
    for (int i = 0; i < static_cast<int>(row.size()); ++i) {
      const GroundTruthEntry& e = row[static_cast<std::size_t>(i)];
      if (e.in_crossing || e.blob_index < 0) continue;
      ++metrics.images_validated;
      const int assigned =
          result.blob_identity[static_cast<std::size_t>(frame)]
                              [static_cast<std::size_t>(e.blob_index)];
      const int mapped =
          assigned >= 0 && assigned < static_cast<int>(identity_map.size())
              ? identity_map[static_cast<std::size_t>(assigned)]
              : -1;
      const bool accumulated =
          result.blob_accumulated[static_cast<std::size_t>(frame)]
                                 [static_cast<std::size_t>(e.blob_index)] != 0;
      const bool correct = mapped == i;
      if (assigned < 0)
        ++metrics.non_identified;
      else if (correct)
        ++metrics.correct;
      else
        ++metrics.misidentified;
      if (accumulated) {
        ++metrics.cascade_images;
        if (correct) ++metrics.cascade_correct;
      }
      if (!chosen.empty() && chosen.count(i)) {
        ++per_total[i];
        if (correct) ++per_correct[i];
      }
    }
  }
  for (const auto& [id, total] : per_total)
    metrics.per_individual[id] =
        total == 0 ? 0.0
                   : static_cast<double>(per_correct[id]) /
                         static_cast<double>(total);
  return metrics;
}

}  // namespace fragtrack
