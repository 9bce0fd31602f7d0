#pragma once

#include "fragtrack/cascade.hpp"
#include "fragtrack/postproc.hpp"
#include "fragtrack/types.hpp"

#include <filesystem>

namespace fragtrack {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON document drives a run: input, segmentation, training, cascade
// thresholds (paper defaults) and post-processing knobs.
struct RunConfig {
  std::filesystem::path input_path;
  int n_individuals = 0;
  SegmentationParams segmentation;
  CascadeParams cascade;
  TrainConfig dcd_train;
  int dcd_max_per_class = 3000;
  PostprocParams postproc;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  int threads = 1;
};

RunConfig parse_run_config(const std::filesystem::path& json_path);
RunConfig parse_run_config_text(const std::string& json_text,
                                const std::filesystem::path& base_dir);
void write_run_config(const std::filesystem::path& path, const RunConfig&);

}  // namespace fragtrack
