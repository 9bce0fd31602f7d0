#include "fragtrack/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace fragtrack {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& what) {
  throw ConfigError("config." + key + ": " + what);
}

const json* find(const json& parent, const std::string& key) {
  auto it = parent.find(key);
  return it == parent.end() ? nullptr : &*it;
}

template <typename T>
void read_number(const json& parent, const std::string& path,
                 const std::string& key, T& out) {
  const json* v = find(parent, key);
  if (!v) return;
  if (!v->is_number()) fail(path + key, "expected a number");
  out = v->get<T>();
}

void read_bool(const json& parent, const std::string& path,
               const std::string& key, bool& out) {
  const json* v = find(parent, key);
  if (!v) return;
  if (!v->is_boolean()) fail(path + key, "expected a boolean");
  out = v->get<bool>();
}

}  // namespace

RunConfig parse_run_config_text(const std::string& json_text,
                                const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: expected a JSON object");

  RunConfig cfg;
  cfg.cascade.train.batch_size = 500;
  cfg.cascade.train.max_epochs = 10000;
  cfg.cascade.train.optimizer = Optimizer::sgd;
  cfg.dcd_train = dcd_train_config();

  const json* input = find(root, "input");
  if (!input || !input->is_object()) fail("input", "required object missing");
  const json* path = find(*input, "path");
  if (!path || !path->is_string()) fail("input.path", "required string missing");
  cfg.input_path = base_dir / std::filesystem::path(path->get<std::string>());
  const json* n = find(*input, "n_individuals");
  if (!n || !n->is_number_integer())
    fail("input.n_individuals", "required integer missing");
  cfg.n_individuals = n->get<int>();
  if (cfg.n_individuals < 1)
    fail("input.n_individuals", "must be at least 1");

  if (const json* seg = find(root, "segmentation")) {
    if (!seg->is_object()) fail("segmentation", "expected an object");
    const std::string p = "segmentation.";
    read_number(*seg, p, "min_intensity", cfg.segmentation.min_intensity);
    read_number(*seg, p, "max_intensity", cfg.segmentation.max_intensity);
    read_number(*seg, p, "min_area", cfg.segmentation.min_area);
    read_number(*seg, p, "max_area", cfg.segmentation.max_area);
    read_bool(*seg, p, "subtract_background", cfg.segmentation.subtract_background);
    read_number(*seg, p, "background_sample_stride",
                cfg.segmentation.background_sample_stride);
    read_number(*seg, p, "resolution_reduction",
                cfg.segmentation.resolution_reduction);
    if (const json* roi = find(*seg, "roi_polygon")) {
      if (!roi->is_array() || roi->size() < 3)
        fail(p + "roi_polygon", "expected an array of at least 3 [x,y] pairs");
      std::vector<Vec2> polygon;
      for (const json& jp : *roi) {
        if (!jp.is_array() || jp.size() != 2)
          fail(p + "roi_polygon", "expected [x,y] pairs");
        polygon.emplace_back(jp.at(0).get<double>(), jp.at(1).get<double>());
      }
      // Mask rasterization happens at load time once dimensions are known;
      // stash the polygon through the params.
      cfg.segmentation.roi_polygon = std::move(polygon);
    }
    try {
      cfg.segmentation.validate();
    } catch (const std::invalid_argument& e) {
      fail("segmentation", e.what());
    }
  }

  if (const json* training = find(root, "training")) {
    if (!training->is_object()) fail("training", "expected an object");
    const std::string p = "training.";
    read_number(*training, p, "learning_rate", cfg.cascade.train.learning_rate);
    read_number(*training, p, "id_batch_size", cfg.cascade.train.batch_size);
    read_number(*training, p, "id_max_epochs", cfg.cascade.train.max_epochs);
    read_number(*training, p, "dcd_batch_size", cfg.dcd_train.batch_size);
    read_number(*training, p, "dcd_max_epochs", cfg.dcd_train.max_epochs);
    read_number(*training, p, "hidden_units", cfg.cascade.hidden_units);
    read_number(*training, p, "dcd_max_per_class", cfg.dcd_max_per_class);
    if (const json* opt = find(*training, "id_optimizer")) {
      const std::string name = opt->get<std::string>();
      if (name == "sgd")
        cfg.cascade.train.optimizer = Optimizer::sgd;
      else if (name == "adaptive_moments")
        cfg.cascade.train.optimizer = Optimizer::adaptive_moments;
      else
        fail(p + "id_optimizer", "expected sgd or adaptive_moments");
    }
    if (cfg.cascade.train.learning_rate <= 0.0)
      fail(p + "learning_rate", "must be positive");
    if (cfg.cascade.train.batch_size < 1)
      fail(p + "id_batch_size", "must be at least 1");
  }

  if (const json* cascade = find(root, "cascade")) {
    if (!cascade->is_object()) fail("cascade", "expected an object");
    const std::string p = "cascade.";
    read_number(*cascade, p, "certainty_threshold",
                cfg.cascade.certainty_threshold);
    read_number(*cascade, p, "protocol1_coverage", cfg.cascade.protocol1_coverage);
    read_number(*cascade, p, "accumulation_target",
                cfg.cascade.accumulation_target);
    read_number(*cascade, p, "protocol2_success", cfg.cascade.protocol2_success);
    read_number(*cascade, p, "partial_enable_fraction",
                cfg.cascade.partial_enable_fraction);
    read_number(*cascade, p, "pretrain_coverage", cfg.cascade.pretrain_coverage);
    read_number(*cascade, p, "max_images_per_identity",
                cfg.cascade.max_images_per_identity);
    read_number(*cascade, p, "old_image_quota", cfg.cascade.old_image_quota);
    read_number(*cascade, p, "new_image_quota", cfg.cascade.new_image_quota);
    read_number(*cascade, p, "parachute_attempts", cfg.cascade.parachute_attempts);
  }

  if (const json* post = find(root, "postproc")) {
    if (!post->is_object()) fail("postproc", "expected an object");
    const std::string p = "postproc.";
    read_number(*post, p, "speed_percentile", cfg.postproc.percentile);
    read_number(*post, p, "speed_factor", cfg.postproc.speed_factor);
    read_number(*post, p, "fixed_p2_threshold", cfg.postproc.fixed_p2_threshold);
    read_number(*post, p, "erosion_passes", cfg.postproc.erosion_passes);
  }

  read_number(root, "", "seed", cfg.seed);
  cfg.cascade.seed = cfg.seed;
  cfg.cascade.train.seed = cfg.seed;
  cfg.dcd_train.seed = cfg.seed;
  read_number(root, "", "threads", cfg.threads);
  if (cfg.threads < 1) fail("threads", "must be at least 1");
  if (const json* out = find(root, "output")) {
    if (!out->is_string()) fail("output", "expected a string");
    cfg.out_dir = base_dir / std::filesystem::path(out->get<std::string>());
  }
  return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ConfigError("cannot open config file " + json_path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config_text(text, json_path.parent_path());
}

void write_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  json root;
  root["input"] = {{"path", cfg.input_path.string()},
                   {"n_individuals", cfg.n_individuals}};
  root["segmentation"] = {
      {"min_intensity", cfg.segmentation.min_intensity},
      {"max_intensity", cfg.segmentation.max_intensity},
      {"min_area", cfg.segmentation.min_area},
      {"max_area", cfg.segmentation.max_area},
      {"subtract_background", cfg.segmentation.subtract_background},
      {"background_sample_stride", cfg.segmentation.background_sample_stride},
      {"resolution_reduction", cfg.segmentation.resolution_reduction}};
  root["training"] = {{"learning_rate", cfg.cascade.train.learning_rate},
                      {"id_batch_size", cfg.cascade.train.batch_size},
                      {"id_max_epochs", cfg.cascade.train.max_epochs},
                      {"dcd_batch_size", cfg.dcd_train.batch_size},
                      {"dcd_max_epochs", cfg.dcd_train.max_epochs},
                      {"hidden_units", cfg.cascade.hidden_units},
                      {"dcd_max_per_class", cfg.dcd_max_per_class}};
  root["cascade"] = {
      {"certainty_threshold", cfg.cascade.certainty_threshold},
      {"protocol1_coverage", cfg.cascade.protocol1_coverage},
      {"accumulation_target", cfg.cascade.accumulation_target},
      {"protocol2_success", cfg.cascade.protocol2_success},
      {"partial_enable_fraction", cfg.cascade.partial_enable_fraction},
      {"pretrain_coverage", cfg.cascade.pretrain_coverage},
      {"max_images_per_identity", cfg.cascade.max_images_per_identity},
      {"old_image_quota", cfg.cascade.old_image_quota},
      {"new_image_quota", cfg.cascade.new_image_quota},
      {"parachute_attempts", cfg.cascade.parachute_attempts}};
  root["postproc"] = {{"speed_percentile", cfg.postproc.percentile},
                      {"speed_factor", cfg.postproc.speed_factor},
                      {"fixed_p2_threshold", cfg.postproc.fixed_p2_threshold},
                      {"erosion_passes", cfg.postproc.erosion_passes}};
  root["seed"] = cfg.seed;
  root["threads"] = cfg.threads;
  root["output"] = cfg.out_dir.string();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << root.dump(2) << "\n";
}

}  // namespace fragtrack
