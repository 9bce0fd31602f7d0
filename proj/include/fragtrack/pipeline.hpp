#pragma once

#include "fragtrack/config.hpp"
#include "fragtrack/crossdetect.hpp"
#include "fragtrack/ingest.hpp"
#include "fragtrack/postproc.hpp"
#include "fragtrack/residual.hpp"
#include "fragtrack/synthgen.hpp"

namespace fragtrack {

struct RunResult {
  ProtocolStatus protocol = ProtocolStatus::protocol1_done;
  double coverage = 0.0;
  double estimated_accuracy = 0.0;
  double v_max = 0.0;
  int core_frame = 0;
  long total_global_images = 0;
  long images_accumulated = 0;
  int n_fragments = 0;
  int n_crossing_fragments = 0;
  int n_globals = 0;
  int min_images_first_global = 0;
  int min_images_first_global_moving = 0;
  CorrectionStats correction;
  std::vector<std::string> warnings;
  std::vector<CascadeIterationLog> cascade_log;
  double protocol1_coverage_observed = -1.0;
  double protocol2_coverage_observed = -1.0;
  std::vector<double> protocol3_attempt_coverages;

  Trajectories trajectories;
  TrackedResult tracked;
  // Final identity (0-based, -1 unidentified) and accumulated flag per
  // individual fragment, plus spans, for invariant checks.
  std::vector<Fragment> fragments;
  std::vector<FragmentIdentity> states;
  std::vector<std::vector<int>> coexisting;
};

// Full pipeline on pre-segmented per-frame blobs (the blob-stream path and
// the synthetic in-memory path).
RunResult run_pipeline_on_blobs(const std::vector<std::vector<Blob>>& frames,
                                const RunConfig& config);

// Full pipeline from config.input_path (PGM directory, raw file or blob
// stream).
RunResult run_pipeline(const RunConfig& config);

// trajectories.csv, trajectories_wo_gaps.csv, summary.json,
// cascade_log.jsonl, assignments.csv
void write_run_artifacts(const RunResult& result, const RunConfig& config);

std::string protocol_name(ProtocolStatus status);

}  // namespace fragtrack
