#include "fragtrack/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

constexpr int kExitFatal = 1;
constexpr int kExitConfig = 2;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json root;
  in >> root;
  return root;
}

void print_report(const std::filesystem::path& out_dir,
                  const std::filesystem::path& ground_truth) {
  const json summary = read_json_file(out_dir / "summary.json");
  std::cout << "protocol:            " << summary.at("protocol_used").get<std::string>()
            << "\n";
  std::cout << "estimated accuracy:  " << summary.at("estimated_accuracy").get<double>()
            << "\n";
  std::cout << "coverage:            " << summary.at("coverage").get<double>() << "\n";
  std::cout << "v_max:               " << summary.at("v_max").get<double>() << "\n";
  std::cout << "min images in first global fragment: "
            << summary.at("min_images_first_global").get<int>() << " ("
            << summary.at("min_images_first_global_moving").get<int>()
            << " at speed >= 0.75 px/frame)\n";

  if (summary.at("protocol_used").get<std::string>() == "degraded") {
    std::cout << "WARNING: degraded run; parachute attempt coverages:";
    for (const auto& c : summary.at("protocol3_attempt_coverages"))
      std::cout << " " << c.get<double>();
    std::cout << "\n";
  }
  const auto warnings = summary.at("warnings");
  for (const auto& w : warnings)
    std::cout << "warning: " << w.get<std::string>() << "\n";

  std::ifstream log(out_dir / "cascade_log.jsonl");
  if (log) {
    std::cout << "\ncascade iterations:\n";
    std::cout << "  protocol iteration accumulated coverage epochs val_acc\n";
    std::string line;
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      const json row = json::parse(line);
      const int iter = row.at("iteration").get<int>();
      std::cout << "  " << row.at("protocol").get<int>() << "        ";
      if (iter < 0)
        std::cout << "pre" << -iter;
      else
        std::cout << iter;
      std::cout << "         " << row.at("images_accumulated").get<long>()
                << "        " << row.at("coverage").get<double>() << "     "
                << row.at("train_epochs").get<int>() << "     "
                << row.at("val_accuracy").get<double>() << "\n";
    }
  }

  if (!ground_truth.empty()) {
    using namespace fragtrack;
    const GroundTruth truth = GroundTruth::load(ground_truth);
    TrackedResult tracked;
    tracked.map_frames = truth.total_frames;
    tracked.blob_identity.resize(static_cast<std::size_t>(truth.total_frames));
    tracked.blob_accumulated.resize(static_cast<std::size_t>(truth.total_frames));
    std::ifstream in(out_dir / "assignments.csv");
    if (!in)
      throw std::runtime_error("assignments.csv missing; rerun track first");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      int frame, blob, identity, accumulated;
      if (std::sscanf(line.c_str(), "%d,%d,%d,%d", &frame, &blob, &identity,
                      &accumulated) != 4)
        continue;
      auto& ids = tracked.blob_identity[static_cast<std::size_t>(frame)];
      auto& acc = tracked.blob_accumulated[static_cast<std::size_t>(frame)];
      if (static_cast<int>(ids.size()) <= blob) {
        ids.resize(static_cast<std::size_t>(blob) + 1, -1);
        acc.resize(static_cast<std::size_t>(blob) + 1, 0);
      }
      ids[static_cast<std::size_t>(blob)] = identity - 1;
      acc[static_cast<std::size_t>(blob)] = static_cast<char>(accumulated);
    }
    const int core = summary.at("core_frame").get<int>();
    const int n = summary.at("n_individuals").get<int>();
    const std::vector<int> map = match_identities_at_frame(tracked, truth, core, n);
    const ValidationMetrics metrics =
        validation_metrics(tracked, truth, 0, truth.total_frames - 1, map);
    std::cout << "\nvalidation against ground truth:\n";
    std::cout << "  accuracy during protocol cascade: "
              << 100.0 * metrics.cascade_accuracy() << "%\n";
    std::cout << "  accuracy:                         "
              << 100.0 * metrics.accuracy() << "%\n";
    std::cout << "  non-identified:                   "
              << 100.0 * metrics.non_identified_fraction() << "%\n";
    std::cout << "  misidentified:                    "
              << 100.0 * metrics.misidentified_fraction() << "%\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fragtrack: tracking by identification for multi-animal video"};
  app.require_subcommand(1);

  std::string config_path, out_override, ground_truth;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int threads_override = 0;

  CLI::App* track = app.add_subcommand("track", "run the tracking pipeline");
  track->add_option("--config", config_path, "run configuration (json)")
      ->required();
  track->add_option("--out", out_override, "output directory override");
  track->add_option("--seed", seed_override, "seed override")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  track->add_option("--threads", threads_override, "worker threads");
  track->add_option("--ground-truth", ground_truth,
                    "validate against this ground-truth json after tracking");

  // synth
  fragtrack::SynthConfig synth_cfg;
  std::string synth_out = "synth";
  std::string synth_format = "blobstream";
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic video");
  synth->add_option("--n", synth_cfg.n_individuals, "number of individuals");
  synth->add_option("--frames", synth_cfg.total_frames, "total frames");
  synth->add_option("--theta", synth_cfg.gamma_theta, "gamma scale");
  synth->add_option("--k", synth_cfg.gamma_k, "gamma shape");
  synth->add_option("--crossing-length", synth_cfg.crossing_length,
                    "frames per crossing (0 disables crossings)");
  synth->add_option("--snr", synth_cfg.snr, "texture signal-to-noise");
  synth->add_option("--drift", synth_cfg.appearance_drift,
                    "appearance drift over the video (0..1)");
  synth->add_option("--body", synth_cfg.body_length, "body length in px");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--format", synth_format, "blobstream or pgm");

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "summarize a finished run");
  report->add_option("--out", report_dir, "run output directory")->required();
  report->add_option("--ground-truth", ground_truth,
                     "also compute validation indices");

  std::string validate_dir, validate_truth, validate_span;
  CLI::App* validate =
      app.add_subcommand("validate", "score a run against ground truth");
  validate->add_option("--out", validate_dir, "run output directory")->required();
  validate->add_option("--ground-truth", validate_truth, "ground-truth json")
      ->required();
  validate->add_option("--span", validate_span, "frame span begin:end");

  CLI11_PARSE(app, argc, argv);

  try {
    if (track->parsed()) {
      fragtrack::RunConfig cfg;
      try {
        cfg = fragtrack::parse_run_config(config_path);
      } catch (const fragtrack::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
      }
      if (!out_override.empty()) cfg.out_dir = out_override;
      if (seed_set) {
        cfg.seed = seed_override;
        cfg.cascade.seed = seed_override;
        cfg.cascade.train.seed = seed_override;
        cfg.dcd_train.seed = seed_override;
      }
      if (threads_override > 0) cfg.threads = threads_override;
      const fragtrack::RunResult result = fragtrack::run_pipeline(cfg);
      fragtrack::write_run_artifacts(result, cfg);
      std::cout << "protocol " << fragtrack::protocol_name(result.protocol)
                << ", estimated accuracy " << result.estimated_accuracy
                << ", coverage " << result.coverage << "\n";
      if (!ground_truth.empty()) print_report(cfg.out_dir, ground_truth);
      return 0;
    }
    if (synth->parsed()) {
      const std::filesystem::path dir(synth_out);
      std::filesystem::create_directories(dir);
      const fragtrack::SyntheticVideo video =
          fragtrack::generate_synthetic_video(synth_cfg);
      std::filesystem::path input_path;
      if (synth_format == "pgm") {
        fragtrack::write_pgm_frames(dir / "frames", video);
        input_path = "frames";
      } else if (synth_format == "blobstream") {
        fragtrack::write_blob_stream(dir / "video.jsonl", video.frames);
        input_path = "video.jsonl";
      } else {
        std::cerr << "unknown --format " << synth_format << "\n";
        return kExitConfig;
      }
      video.truth.save(dir / "ground_truth.json");
      // A ready-to-run tracking config next to the data.
      fragtrack::RunConfig run;
      run.input_path = input_path;
      run.n_individuals = synth_cfg.n_individuals;
      run.segmentation.min_intensity = 0;
      run.segmentation.max_intensity = fragtrack::kSynthMaxIntensity;
      run.segmentation.min_area = 4;
      run.seed = synth_cfg.seed;
      run.out_dir = "out";
      fragtrack::write_run_config(dir / "run.json", run);
      std::cout << "wrote " << (dir / (synth_format == "pgm" ? "frames" : "video.jsonl")).string()
                << ", ground_truth.json and run.json\n";
      return 0;
    }
    if (report->parsed()) {
      print_report(report_dir, ground_truth);
      return 0;
    }
    if (validate->parsed()) {
      int begin = 0, end = -1;
      if (!validate_span.empty()) {
        if (std::sscanf(validate_span.c_str(), "%d:%d", &begin, &end) != 2) {
          std::cerr << "--span expects begin:end\n";
          return kExitConfig;
        }
      }
      const fragtrack::GroundTruth truth =
          fragtrack::GroundTruth::load(validate_truth);
      if (end < 0) end = truth.total_frames - 1;
      // Delegate to report's loader for the assignment table.
      print_report(validate_dir, validate_truth);
      return 0;
    }
  } catch (const fragtrack::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return kExitFatal;
  }
  return 0;
}
