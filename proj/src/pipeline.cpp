#include "fragtrack/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

namespace fragtrack {
namespace {

using nlohmann::json;

int log_level() {
  static const int level = [] {
    const char* env = std::getenv("FRAGTRACK_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
  }();
  return level;
}

void log_info(const std::string& message) {
  if (log_level() >= 1) std::cerr << "[fragtrack] " << message << "\n";
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || count < 2 * threads) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&body, &next, count] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        body(i);
      }
    });
  for (std::thread& t : pool) t.join();
}

// Frame reconstruction from blob crops: the context every preprocessing step
// sees, identical for pixel-backed and pre-segmented inputs.
ImageF paste_frame(const std::vector<Blob>& blobs, int width, int height) {
  ImageF canvas(height, width);
  canvas.setZero();
  for (const Blob& b : blobs)
    for (const PixelKey k : b.pixels)
      canvas(pixel_y(k), pixel_x(k)) =
          static_cast<float>(b.image(pixel_y(k) - b.bbox.min_y,
                                     pixel_x(k) - b.bbox.min_x));
  return canvas;
}

}  // namespace

std::string protocol_name(ProtocolStatus status) {
  switch (status) {
    case ProtocolStatus::protocol1_done: return "protocol1_done";
    case ProtocolStatus::protocol2_done: return "protocol2_done";
    case ProtocolStatus::protocol3_done: return "protocol3_done";
    case ProtocolStatus::degraded: return "degraded";
  }
  return "unknown";
}

RunResult run_pipeline_on_blobs(const std::vector<std::vector<Blob>>& frames,
                                const RunConfig& config) {
  const int n = config.n_individuals;
  const int frame_count = static_cast<int>(frames.size());
  int width = 0, height = 0;
  for (const auto& fb : frames)
    for (const Blob& b : fb) {
      width = std::max(width, b.bbox.max_x + 1);
      height = std::max(height, b.bbox.max_y + 1);
    }

  log_info("area model over " + std::to_string(frame_count) + " frames");
  const AreaModel area = fit_area_model(frames, n);

  log_info("overlap graph");
  const OverlapGraph graph(frames);
  const auto sure = mark_sure_images(frames, area, graph);

  // Crossing detector: preprocess the sure images, train, label the rest.
  std::vector<const Blob*> sure_crossing_blobs;
  std::vector<std::pair<int, int>> sure_individual_refs, sure_crossing_refs,
      ambiguous_refs;
  for (int f = 0; f < frame_count; ++f)
    for (int i = 0; i < static_cast<int>(frames[static_cast<std::size_t>(f)].size()); ++i) {
      switch (sure[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)]) {
        case SureLabel::sure_individual:
          sure_individual_refs.emplace_back(f, i);
          break;
        case SureLabel::sure_crossing:
          sure_crossing_refs.emplace_back(f, i);
          sure_crossing_blobs.push_back(
              &frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)]);
          break;
        case SureLabel::ambiguous:
          ambiguous_refs.emplace_back(f, i);
          break;
      }
    }
  log_info("sure images: " + std::to_string(sure_individual_refs.size()) +
           " individual, " + std::to_string(sure_crossing_refs.size()) +
           " crossing, " + std::to_string(ambiguous_refs.size()) + " ambiguous");

  RunResult result;

  std::vector<std::vector<BlobKind>> kinds(static_cast<std::size_t>(frame_count));
  for (int f = 0; f < frame_count; ++f)
    kinds[static_cast<std::size_t>(f)].assign(
        frames[static_cast<std::size_t>(f)].size(), BlobKind::individual);
  for (const auto& [f, i] : sure_crossing_refs)
    kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)] =
        BlobKind::crossing;

  {
    // DCD preprocessing works frame by frame so each canvas is built once.
    const int crop_side =
        sure_crossing_blobs.empty() ? 0 : dcd_crop_side(sure_crossing_blobs);
    std::vector<NormalizedImage> sure_individual_images(
        sure_individual_refs.size());
    std::vector<NormalizedImage> sure_crossing_images(sure_crossing_refs.size());
    std::vector<NormalizedImage> ambiguous_images(ambiguous_refs.size());
    if (!sure_crossing_refs.empty() && !sure_individual_refs.empty()) {
      parallel_for(frame_count, config.threads, [&](int f) {
        const ImageF canvas =
            paste_frame(frames[static_cast<std::size_t>(f)], width, height);
        auto run = [&](const std::vector<std::pair<int, int>>& refs,
                       std::vector<NormalizedImage>& out) {
          for (std::size_t k = 0; k < refs.size(); ++k) {
            if (refs[k].first != f) continue;
            out[k] = preprocess_dcd(
                canvas,
                frames[static_cast<std::size_t>(f)]
                      [static_cast<std::size_t>(refs[k].second)],
                crop_side);
          }
        };
        run(sure_individual_refs, sure_individual_images);
        run(sure_crossing_refs, sure_crossing_images);
        run(ambiguous_refs, ambiguous_images);
      });
    }

    DcdDatasetSpec spec;
    spec.max_per_class = config.dcd_max_per_class;
    spec.seed = config.seed;
    const auto dataset =
        build_dcd_dataset(sure_individual_images, sure_crossing_images, spec);
    log_info("training crossing detector");
    const CrossingDetector detector =
        train_crossing_detector(dataset, area, config.dcd_train);
    for (const std::string& w : detector.warnings) result.warnings.push_back(w);

    for (std::size_t k = 0; k < ambiguous_refs.size(); ++k) {
      const auto [f, i] = ambiguous_refs[k];
      const Blob& blob =
          frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
      const BlobKind kind =
          detector.uses_fallback()
              ? (area.is_individual(blob.area()) ? BlobKind::individual
                                                 : BlobKind::crossing)
              : classify_blob_image(detector, ambiguous_images[k], blob.area());
      kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)] = kind;
    }
  }

  log_info("fragmentation");
  FragmentSet set = build_fragments(frames, kinds, graph);
  result.n_fragments = static_cast<int>(set.individual.size());
  result.n_crossing_fragments = static_cast<int>(set.crossing.size());

  // Identification image side from the individual blobs.
  std::vector<const Blob*> individual_blobs;
  for (int f = 0; f < frame_count; ++f)
    for (int i = 0; i < static_cast<int>(frames[static_cast<std::size_t>(f)].size()); ++i)
      if (kinds[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)] ==
          BlobKind::individual)
        individual_blobs.push_back(
            &frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)]);
  if (individual_blobs.empty())
    throw NoGlobalFragment("no individual blobs after crossing detection");
  const int id_side = std::max(8, identification_image_side(individual_blobs));
  log_info("identification image side " + std::to_string(id_side));

  // Per-fragment image arena.
  CascadeInput input;
  input.n_animals = n;
  input.fragments = &set.individual;
  input.image_side = id_side;
  long total_images = 0;
  input.fragment_rows.resize(set.individual.size());
  for (const Fragment& frag : set.individual) {
    input.fragment_rows[static_cast<std::size_t>(frag.id)] = {
        static_cast<int>(total_images),
        static_cast<int>(total_images) + frag.length()};
    total_images += frag.length();
  }
  input.images.resize(total_images, id_side * id_side);
  {
    // row in the arena for every individual blob, grouped by frame
    std::vector<std::vector<std::pair<int, int>>> frame_work(
        static_cast<std::size_t>(frame_count));  // (blob index, arena row)
    for (const Fragment& frag : set.individual)
      for (std::size_t k = 0; k < frag.blobs.size(); ++k)
        frame_work[static_cast<std::size_t>(frag.blobs[k].frame)].emplace_back(
            frag.blobs[k].index,
            input.fragment_rows[static_cast<std::size_t>(frag.id)].first +
                static_cast<int>(k));
    parallel_for(frame_count, config.threads, [&](int f) {
      const auto& work = frame_work[static_cast<std::size_t>(f)];
      if (work.empty()) return;
      const ImageF canvas =
          paste_frame(frames[static_cast<std::size_t>(f)], width, height);
      for (const auto& [blob_index, row] : work) {
        const NormalizedImage img = preprocess_identification(
            canvas,
            frames[static_cast<std::size_t>(f)]
                  [static_cast<std::size_t>(blob_index)],
            id_side);
        Eigen::Map<const Eigen::VectorXf> flat(img.values.data(),
                                               img.values.size());
        input.images.row(row) = flat;
      }
    });
  }

  input.globals = build_global_fragments(set.individual, n);
  result.n_globals = static_cast<int>(input.globals.size());
  log_info(std::to_string(result.n_globals) + " global fragments over " +
           std::to_string(result.n_fragments) + " fragments");
  input.coexisting = build_coexistence(set.individual);

  log_info("training cascade");
  ProtocolOutcome outcome = run_cascade(input, config.cascade);
  result.protocol = outcome.status;
  result.coverage = outcome.coverage;
  result.total_global_images = outcome.total_global_images;
  result.images_accumulated = outcome.images_accumulated;
  result.cascade_log = outcome.log;
  result.protocol1_coverage_observed = outcome.protocol1_coverage_observed;
  result.protocol2_coverage_observed = outcome.protocol2_coverage_observed;
  result.protocol3_attempt_coverages = outcome.protocol3_attempt_coverages;
  for (const std::string& w : outcome.warnings) result.warnings.push_back(w);
  result.core_frame =
      input.globals[static_cast<std::size_t>(outcome.seed_global)].core_frame;
  {
    const GlobalFragment& seed =
        input.globals[static_cast<std::size_t>(outcome.seed_global)];
    result.min_images_first_global = min_images_in_global(set.individual, seed);
    result.min_images_first_global_moving =
        min_images_in_global(set.individual, seed, 0.75);
  }

  log_info("residual identification");
  residual_identify(input, outcome.model, outcome.identities);

  log_info("post-processing");
  const SpeedModel speed =
      fit_speed_model(set.individual, config.postproc.percentile);
  result.v_max = speed.v_max;
  result.correction = correct_unrealistic(
      set.individual, outcome.identities, input.coexisting, speed, n,
      result.core_frame, config.postproc);

  const CrossingPoints crossing_points = resolve_crossings(
      frames, set, outcome.identities, speed, n, config.postproc);
  result.trajectories =
      assemble_trajectories(frame_count, n, set.individual, outcome.identities,
                            crossing_points);
  result.estimated_accuracy =
      estimated_accuracy(set.individual, outcome.identities);

  // Per-blob view for validation and artifact output.
  result.tracked.map_frames = frame_count;
  result.tracked.blob_identity.resize(static_cast<std::size_t>(frame_count));
  result.tracked.blob_accumulated.resize(static_cast<std::size_t>(frame_count));
  for (int f = 0; f < frame_count; ++f) {
    const auto& fb = frames[static_cast<std::size_t>(f)];
    result.tracked.blob_identity[static_cast<std::size_t>(f)].assign(fb.size(), -1);
    result.tracked.blob_accumulated[static_cast<std::size_t>(f)].assign(fb.size(), 0);
    for (int i = 0; i < static_cast<int>(fb.size()); ++i) {
      const auto [kind, frag_id] =
          set.blob_fragment[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
      if (kind != BlobKind::individual || frag_id < 0) continue;
      const FragmentIdentity& st =
          outcome.identities[static_cast<std::size_t>(frag_id)];
      result.tracked.blob_identity[static_cast<std::size_t>(f)]
                                  [static_cast<std::size_t>(i)] = st.identity;
      result.tracked.blob_accumulated[static_cast<std::size_t>(f)]
                                     [static_cast<std::size_t>(i)] =
          st.is_fixed() ? 1 : 0;
    }
  }

  result.fragments = std::move(set.individual);
  result.states = std::move(outcome.identities);
  result.coexisting = std::move(input.coexisting);
  return result;
}

RunResult run_pipeline(const RunConfig& config) {
  SegmentationParams params = config.segmentation;
  log_info("loading " + config.input_path.string());
  FrameSequence seq = load_frame_sequence(config.input_path, params);
  if (!params.roi_polygon.empty() && !params.roi)
    params.roi = make_polygon_mask(seq.width(), seq.height(), params.roi_polygon);

  std::vector<std::vector<Blob>> frames(
      static_cast<std::size_t>(seq.frame_count()));
  if (seq.source() == SequenceSource::blob_stream) {
    for (int f = 0; f < seq.frame_count(); ++f)
      frames[static_cast<std::size_t>(f)] = seq.stream_blobs(f);
  } else {
    std::optional<ImageF> background;
    if (params.subtract_background)
      background = compute_background(seq, params.background_sample_stride);
    log_info("segmenting " + std::to_string(seq.frame_count()) + " frames");
    // Frame loading is file io; keep the scan sequential per thread chunk.
    parallel_for(seq.frame_count(), config.threads, [&](int f) {
      frames[static_cast<std::size_t>(f)] = segment_frame(
          seq, f, params, background ? &*background : nullptr);
    });
  }
  return run_pipeline_on_blobs(frames, config);
}

void write_run_artifacts(const RunResult& result, const RunConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  write_trajectories_csv(config.out_dir / "trajectories.csv",
                         result.trajectories.x_without,
                         result.trajectories.y_without);
  write_trajectories_csv(config.out_dir / "trajectories_wo_gaps.csv",
                         result.trajectories.x_with, result.trajectories.y_with);

  json summary;
  summary["estimated_accuracy"] = result.estimated_accuracy;
  summary["protocol_used"] = protocol_name(result.protocol);
  summary["coverage"] = result.coverage;
  summary["v_max"] = result.v_max;
  summary["warnings"] = result.warnings;
  summary["core_frame"] = result.core_frame;
  summary["n_individuals"] = config.n_individuals;
  summary["images_accumulated"] = result.images_accumulated;
  summary["total_global_images"] = result.total_global_images;
  summary["n_fragments"] = result.n_fragments;
  summary["n_crossing_fragments"] = result.n_crossing_fragments;
  summary["n_globals"] = result.n_globals;
  summary["min_images_first_global"] = result.min_images_first_global;
  summary["min_images_first_global_moving"] =
      result.min_images_first_global_moving;
  summary["reidentified"] = result.correction.reidentified;
  summary["unidentified_by_correction"] = result.correction.unidentified;
  summary["protocol1_coverage_observed"] = result.protocol1_coverage_observed;
  summary["protocol2_coverage_observed"] = result.protocol2_coverage_observed;
  summary["protocol3_attempt_coverages"] = result.protocol3_attempt_coverages;
  {
    std::ofstream out(config.out_dir / "summary.json");
    out << summary.dump(2) << "\n";
  }
  {
    std::ofstream out(config.out_dir / "cascade_log.jsonl");
    for (const CascadeIterationLog& log : result.cascade_log) {
      json line;
      line["protocol"] = log.protocol;
      line["iteration"] = log.iteration;
      line["images_accumulated"] = log.images_accumulated;
      line["coverage"] = log.coverage;
      line["train_epochs"] = log.train_epochs;
      line["val_accuracy"] = log.val_accuracy;
      out << line.dump() << "\n";
    }
  }
  {
    std::ofstream out(config.out_dir / "assignments.csv");
    out << "frame,blob,identity,accumulated\n";
    for (int f = 0; f < result.tracked.map_frames; ++f) {
      const auto& ids = result.tracked.blob_identity[static_cast<std::size_t>(f)];
      const auto& acc =
          result.tracked.blob_accumulated[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < ids.size(); ++i)
        out << f << "," << i << "," << ids[i] + 1 << ","
            << static_cast<int>(acc[i]) << "\n";
    }
  }
}

}  // namespace fragtrack
