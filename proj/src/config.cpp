#include "atmgcn/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "atmgcn/errors.hpp"

namespace atmgcn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_type(const std::string& key, const char* expected, const json& v) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got " + v.dump());
}

std::size_t as_size(const std::string& key, const json& v) {
  if (!v.is_number_unsigned()) bad_type(key, "a non-negative integer", v);
  return v.get<std::size_t>();
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) bad_type(key, "a number", v);
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad_type(key, "true or false", v);
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad_type(key, "a string", v);
  return v.get<std::string>();
}

std::vector<double> as_doubles(const std::string& key, const json& v) {
  if (!v.is_array()) bad_type(key, "an array of numbers", v);
  std::vector<double> out;
  for (const json& x : v) out.push_back(as_double(key, x));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"preset", [](RunConfig& c, auto& k, auto& v) { c.preset = as_string(k, v); }},
      {"manifest", [](RunConfig& c, auto& k, auto& v) { c.manifest = as_string(k, v); }},
      {"jobs", [](RunConfig& c, auto& k, auto& v) { c.jobs = as_size(k, v); }},
      {"variant",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           c.model.variant = parse_variant(as_string(k, v));
         } catch (const UsageError& e) {
           throw ConfigError("config key 'variant': " + std::string(e.what()));
         }
       }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = as_size(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = as_size(k, v); }},
      {"lr0", [](RunConfig& c, auto& k, auto& v) { c.train.lr0 = as_double(k, v); }},
      {"lr_decay", [](RunConfig& c, auto& k, auto& v) { c.train.lr_decay = as_double(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = as_size(k, v); }},
      {"focal_gamma", [](RunConfig& c, auto& k, auto& v) { c.train.focal_gamma = as_double(k, v); }},
      {"focal_alpha", [](RunConfig& c, auto& k, auto& v) { c.train.focal_alpha = as_doubles(k, v); }},
      {"weight_decay",
       [](RunConfig& c, auto& k, auto& v) { c.train.adamw.weight_decay = as_double(k, v); }},
      {"augment_crop", [](RunConfig& c, auto& k, auto& v) { c.train.augment.crop = as_bool(k, v); }},
      {"augment_jitter",
       [](RunConfig& c, auto& k, auto& v) { c.train.augment.jitter = as_bool(k, v); }},
      {"height",
       [](RunConfig& c, auto& k, auto& v) { c.model.encoder.height = c.data.height = as_size(k, v); }},
      {"width",
       [](RunConfig& c, auto& k, auto& v) { c.model.encoder.width = c.data.width = as_size(k, v); }},
      {"channels",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.encoder.channels = c.data.channels = as_size(k, v);
       }},
      {"clip_length",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.clip_length = c.data.target_length = as_size(k, v);
       }},
      {"downsample_hz", [](RunConfig& c, auto& k, auto& v) { c.data.downsample_hz = as_double(k, v); }},
      {"patch_size", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.patch_size = as_size(k, v); }},
      {"motion_dim", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.motion_dim = as_size(k, v); }},
      {"heads", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.heads = as_size(k, v); }},
      {"mlp_hidden", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.mlp_hidden = as_size(k, v); }},
      {"blocks", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.blocks = as_size(k, v); }},
      {"gcn_layers", [](RunConfig& c, auto& k, auto& v) { c.model.gcn_layers = as_size(k, v); }},
      {"gcn_dim", [](RunConfig& c, auto& k, auto& v) { c.model.gcn_dim = as_size(k, v); }},
      {"window", [](RunConfig& c, auto& k, auto& v) { c.model.window = as_size(k, v); }},
      {"tau", [](RunConfig& c, auto& k, auto& v) { c.model.weighting.tau = as_double(k, v); }},
      {"lambda_local",
       [](RunConfig& c, auto& k, auto& v) { c.model.weighting.lambda_local = as_double(k, v); }},
      {"lambda_global",
       [](RunConfig& c, auto& k, auto& v) { c.model.weighting.lambda_global = as_double(k, v); }},
      {"forgetting_rates",
       [](RunConfig& c, auto& k, auto& v) { c.model.forgetting_rates = as_doubles(k, v); }},
      {"residual", [](RunConfig& c, auto& k, auto& v) { c.model.residual = as_bool(k, v); }},
      {"local_self_loops",
       [](RunConfig& c, auto& k, auto& v) { c.model.local_self_loops = as_bool(k, v); }},
      {"num_classes", [](RunConfig& c, auto& k, auto& v) { c.model.num_classes = as_size(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (preset != "small" && preset != "large") {
    throw ConfigError("config key 'preset': expected small or large, got '" + preset + "'");
  }
  if (jobs < 1) throw ConfigError("config key 'jobs': must be >= 1");
  if (data.height != model.encoder.height || data.width != model.encoder.width ||
      data.channels != model.encoder.channels || data.target_length != model.clip_length) {
    throw ConfigError("config: preprocessing and model frame geometry disagree");
  }
  model.validate();
  train.validate();
  if (!train.focal_alpha.empty() && train.focal_alpha.size() != model.num_classes) {
    throw ConfigError("config key 'focal_alpha': needs " + std::to_string(model.num_classes) +
                      " entries, got " + std::to_string(train.focal_alpha.size()));
  }
}

void apply_preset(RunConfig& config, const std::string& preset) {
  if (preset == "small") {
    config.model.encoder.blocks = 2;
    config.model.gcn_layers = 2;
    config.model.window = 1;
    config.data.downsample_hz = 30.0;
  } else if (preset == "large") {
    config.model.encoder.blocks = 4;
    config.model.gcn_layers = 4;
    config.model.window = 2;
    config.data.downsample_hz = 0.0;
  } else {
    throw ConfigError("config key 'preset': expected small or large, got '" + preset + "'");
  }
  config.preset = preset;
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["manifest"] = c.manifest;
  j["jobs"] = c.jobs;
  j["variant"] = std::string(variant_name(c.model.variant));
  j["seed"] = c.train.seed;
  j["epochs"] = c.train.epochs;
  j["lr0"] = c.train.lr0;
  j["lr_decay"] = c.train.lr_decay;
  j["batch_size"] = c.train.batch_size;
  j["focal_gamma"] = c.train.focal_gamma;
  j["focal_alpha"] = c.train.focal_alpha;
  j["weight_decay"] = c.train.adamw.weight_decay;
  j["augment_crop"] = c.train.augment.crop;
  j["augment_jitter"] = c.train.augment.jitter;
  j["height"] = c.model.encoder.height;
  j["width"] = c.model.encoder.width;
  j["channels"] = c.model.encoder.channels;
  j["clip_length"] = c.model.clip_length;
  j["downsample_hz"] = c.data.downsample_hz;
  j["patch_size"] = c.model.encoder.patch_size;
  j["motion_dim"] = c.model.encoder.motion_dim;
  j["heads"] = c.model.encoder.heads;
  j["mlp_hidden"] = c.model.encoder.mlp_hidden;
  j["blocks"] = c.model.encoder.blocks;
  j["gcn_layers"] = c.model.gcn_layers;
  j["gcn_dim"] = c.model.gcn_dim;
  j["window"] = c.model.window;
  j["tau"] = c.model.weighting.tau;
  j["lambda_local"] = c.model.weighting.lambda_local;
  j["lambda_global"] = c.model.weighting.lambda_global;
  j["forgetting_rates"] = c.model.forgetting_rates;
  j["residual"] = c.model.residual;
  j["local_self_loops"] = c.model.local_self_loops;
  j["num_classes"] = c.model.num_classes;
  return j;
}

void merge_json(RunConfig& config, const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(config, key, value);
  }
}

RunConfig resolve_config(const std::optional<fs::path>& file, const ConfigOverrides& overrides) {
  json from_file = json::object();
  if (file) {
    from_file = read_json_file(*file);
    if (!from_file.is_object()) throw ConfigError("config: top level must be a JSON object");
  }
  std::string preset = "small";
  if (from_file.contains("preset")) preset = as_string("preset", from_file["preset"]);
  if (overrides.preset) preset = *overrides.preset;

  RunConfig c;
  apply_preset(c, preset);
  from_file.erase("preset");
  merge_json(c, from_file);
  if (overrides.variant) {
    try {
      c.model.variant = parse_variant(*overrides.variant);
    } catch (const UsageError& e) {
      throw ConfigError("config key 'variant': " + std::string(e.what()));
    }
  }
  if (overrides.seed) c.train.seed = *overrides.seed;
  if (overrides.jobs) c.jobs = *overrides.jobs;
  if (overrides.manifest) c.manifest = *overrides.manifest;
  c.validate();
  return c;
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  RunConfig c;
  merge_json(c, j);
  c.validate();
  return c;
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

SyntheticSpec synthetic_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec: top level must be a JSON object");
  SyntheticSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_subjects") s.num_subjects = as_size(key, v);
    else if (key == "clips_per_subject") s.clips_per_subject = as_size(key, v);
    else if (key == "num_classes") s.num_classes = as_size(key, v);
    else if (key == "height") s.height = as_size(key, v);
    else if (key == "width") s.width = as_size(key, v);
    else if (key == "clip_length") s.clip_length = as_size(key, v);
    else if (key == "amplitude") s.amplitude = as_double(key, v);
    else if (key == "noise") s.noise = as_double(key, v);
    else if (key == "fps") s.fps = as_double(key, v);
    else if (key == "seed") s.seed = as_size(key, v);
    else throw ConfigError("synthetic spec: unknown key '" + key + "'");
  }
  return s;
}

json to_json(const SyntheticSpec& s) {
  return {{"num_subjects", s.num_subjects}, {"clips_per_subject", s.clips_per_subject},
          {"num_classes", s.num_classes},   {"height", s.height},
          {"width", s.width},               {"clip_length", s.clip_length},
          {"amplitude", s.amplitude},       {"noise", s.noise},
          {"fps", s.fps},                   {"seed", s.seed}};
}

json to_json(const Metrics& m) {
  json per_class = json::array();
  for (const ClassCounts& k : m.per_class) {
    per_class.push_back({{"tp", k.tp}, {"fp", k.fp}, {"fn", k.fn}, {"n", k.n}});
  }
  return {{"uf1", m.uf1},
          {"uar", m.uar},
          {"acc", m.acc},
          {"confusion", m.confusion},
          {"per_class", per_class}};
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"lr", r.lr},   {"loss", r.loss},
          {"uf1", r.uf1},     {"uar", r.uar}, {"acc", r.acc}};
}

json history_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const EpochRecord& r : history) out.push_back(to_json(r));
  return out;
}

namespace {

json aggregate_json(const Aggregate& a) { return {{"uf1", a.uf1}, {"uar", a.uar}, {"acc", a.acc}}; }

}  // namespace

json loso_report_json(const LosoReport& report, const RunConfig& config) {
  json folds = json::array();
  for (const FoldReport& f : report.folds) {
    folds.push_back({{"subject", f.subject},
                     {"train_size", f.train_size},
                     {"test_size", f.test_size},
                     {"test", to_json(f.test)},
                     {"train", to_json(f.train)}});
  }
  return {{"variant", std::string(variant_name(config.model.variant))},
          {"config", to_json(config)},
          {"folds", folds},
          {"subject_mean", aggregate_json(report.subject_mean)},
          {"pooled", aggregate_json(report.pooled)},
          {"train_mean", aggregate_json(report.train_mean)}};
}

json loso_history_json(const LosoReport& report) {
  json out = json::object();
  for (const FoldReport& f : report.folds) out[f.subject] = history_json(f.history);
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open " + tmp.string() + " for writing");
    os << contents;
    if (!os) throw InputError("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace atmgcn
