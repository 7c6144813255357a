// atmgcn: synthesize data, train, evaluate, run LOSO and inspect a model.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "atmgcn/config.hpp"
#include "atmgcn/errors.hpp"

using namespace atmgcn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  const char* env = std::getenv("ATMGCN_LOG");
  if (!env) return Level::info;
  const std::string v = env;
  if (v == "error" || v == "quiet") return Level::error;
  if (v == "warn") return Level::warn;
  if (v == "debug") return Level::debug;
  return Level::info;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct CommonFlags {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> preset;
  std::optional<std::size_t> jobs;
  std::optional<std::string> manifest;

  ConfigOverrides overrides() const {
    return {preset, variant, seed, jobs, manifest};
  }
  RunConfig resolve() const {
    std::optional<fs::path> file;
    if (config) file = *config;
    return resolve_config(file, overrides());
  }
};

const std::vector<std::string> kVariantNames{"full", "no_gcn", "no_motion", "no_atm"};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_model_flags) {
  cmd->add_option("--out", f.out, "Output directory (all artifacts land here)")->required();
  cmd->add_option("--seed", f.seed, "Random seed");
  if (!with_model_flags) return;
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--manifest", f.manifest, "Dataset manifest.csv (overrides config)");
  cmd->add_option("--preset", f.preset, "Model size preset")->check(CLI::IsMember({"small", "large"}));
  cmd->add_option("--jobs", f.jobs, "Folds to run concurrently")->check(CLI::PositiveNumber);
}

void echo_config(const RunConfig& c) { std::cout << dump_config(c) << std::flush; }

std::vector<FrameSequence> load_data(const RunConfig& c) {
  if (c.manifest.empty()) {
    throw ConfigError("config key 'manifest': a dataset manifest is required");
  }
  const DatasetManifest m = load_manifest(c.manifest);
  if (m.rows.empty()) throw ValidationError("manifest " + c.manifest + " has no rows");
  log(Level::info, "loading " + std::to_string(m.rows.size()) + " clips from " + c.manifest);
  return load_dataset(m, c.data);
}

std::string fmt(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

int run_synth(const std::optional<std::string>& spec_path, const CommonFlags& f) {
  SyntheticSpec spec;
  if (spec_path) spec = synthetic_spec_from_json(read_json_file(*spec_path));
  if (f.seed) spec.seed = *f.seed;
  spec.validate();
  std::cout << to_json(spec).dump(2) << "\n" << std::flush;
  const DatasetManifest m = synthesize(spec, f.out);
  write_json_atomic(fs::path(f.out) / "synth_spec.json", to_json(spec));
  log(Level::info, "wrote " + std::to_string(m.rows.size()) + " clips to " + f.out);
  return 0;
}

int run_train(const CommonFlags& f) {
  const RunConfig c = f.resolve();
  echo_config(c);
  const auto data = load_data(c);
  const fs::path out = f.out;
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(c.train, c.model, data, [&](const EpochRecord& e) {
    log(Level::info, "epoch " + std::to_string(e.epoch) + " lr " + fmt(e.lr * 1e4, 3) +
                         "e-4 loss " + fmt(e.loss) + " uf1 " + fmt(e.uf1) + " uar " + fmt(e.uar));
  });
  write_checkpoint(out / "checkpoint.bin", make_checkpoint(r.params, dump_config(c)));
  write_json_atomic(out / "history.json", history_json(r.history));
  write_file_atomic(out / "config.json", dump_config(c));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log(Level::info, "trained " + std::to_string(c.train.epochs) + " epochs in " + fmt(secs, 1) +
                       " s; checkpoint " + (out / "checkpoint.bin").string());
  return 0;
}

struct LoadedModel {
  RunConfig config;
  ModelParams params;
};

LoadedModel load_model(const std::string& checkpoint, const CommonFlags& f) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  LoadedModel m{config_from_json_text(ck.config_json), {}};
  if (f.manifest) m.config.manifest = *f.manifest;
  std::mt19937_64 rng(0);
  m.params = init_model(m.config.model, rng);
  load_params(ck, m.params);
  return m;
}

int run_eval(const std::string& checkpoint, const CommonFlags& f) {
  const LoadedModel m = load_model(checkpoint, f);
  echo_config(m.config);
  const DatasetManifest manifest = load_manifest(m.config.manifest);
  const auto data = load_dataset(manifest, m.config.data);
  json clips = json::array();
  std::vector<std::size_t> preds, labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Prediction p = predict(data[i], m.params, m.config.model);
    preds.push_back(p.predicted);
    labels.push_back(data[i].label);
    clips.push_back({{"clip_dir", manifest.rows[i].clip_dir},
                     {"subject_id", data[i].subject_id},
                     {"label", data[i].label},
                     {"predicted", p.predicted},
                     {"probabilities", std::vector<double>(p.probabilities.values().begin(),
                                                           p.probabilities.values().end())}});
  }
  const Metrics metrics = compute_metrics(preds, labels, m.config.model.num_classes);
  json report = {{"checkpoint", checkpoint},
                 {"manifest", m.config.manifest},
                 {"metrics", to_json(metrics)},
                 {"clips", clips}};
  write_json_atomic(fs::path(f.out) / "eval_report.json", report);
  log(Level::info, "uf1 " + fmt(metrics.uf1) + " uar " + fmt(metrics.uar) + " acc " +
                       fmt(metrics.acc));
  return 0;
}

std::string ablation_table(const std::vector<std::pair<std::string, LosoReport>>& rows) {
  std::ostringstream os;
  os << "| variant   | UF1    | UAR    | ACC    | pooled UF1 | pooled UAR |\n";
  os << "|-----------|--------|--------|--------|------------|------------|\n";
  for (const auto& [name, r] : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "| %-9s | %.4f | %.4f | %.4f | %.4f     | %.4f     |\n",
                  name.c_str(), r.subject_mean.uf1, r.subject_mean.uar, r.subject_mean.acc,
                  r.pooled.uf1, r.pooled.uar);
    os << line;
  }
  return os.str();
}

int run_loso_command(const CommonFlags& flags, bool ablation) {
  CommonFlags f = flags;
  if (f.variant && *f.variant == "all") {
    ablation = true;
    f.variant.reset();
  }
  const RunConfig base = f.resolve();
  echo_config(base);
  const auto data = load_data(base);
  const fs::path out = f.out;
  fs::create_directories(out);

  std::vector<Variant> variants{base.model.variant};
  if (ablation) variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
  std::vector<std::pair<std::string, LosoReport>> results;
  json summary = json::array();
  for (Variant v : variants) {
    RunConfig c = base;
    c.model.variant = v;
    const std::string name(variant_name(v));
    const fs::path dir = ablation ? out / name : out;
    log(Level::info, "loso variant " + name);
    const LosoReport r = run_loso(c.train, c.model, data, c.jobs,
                                  [](const std::string& msg) { log(Level::debug, msg); });
    write_json_atomic(dir / "loso_report.json", loso_report_json(r, c));
    write_json_atomic(dir / "loso_history.json", loso_history_json(r));
    for (const FoldReport& fold : r.folds) {
      log(Level::info, name + " fold " + fold.subject + " test uf1 " + fmt(fold.test.uf1) +
                           " uar " + fmt(fold.test.uar) + " train uf1 " + fmt(fold.train.uf1));
    }
    log(Level::info, name + " subject-mean uf1 " + fmt(r.subject_mean.uf1) + " uar " +
                         fmt(r.subject_mean.uar) + " train uf1 " + fmt(r.train_mean.uf1));
    summary.push_back({{"variant", name},
                       {"subject_mean", {{"uf1", r.subject_mean.uf1},
                                         {"uar", r.subject_mean.uar},
                                         {"acc", r.subject_mean.acc}}},
                       {"pooled", {{"uf1", r.pooled.uf1}, {"uar", r.pooled.uar}, {"acc", r.pooled.acc}}}});
    results.emplace_back(name, r);
  }
  if (ablation) {
    write_json_atomic(out / "ablation.json", summary);
    const std::string table = ablation_table(results);
    write_file_atomic(out / "ablation.md", table);
    std::cerr << table;
  }
  return 0;
}

std::size_t estimate_apex(const RawClip& clip) {
  std::size_t best = 2;
  double best_energy = -1.0;
  for (std::size_t i = 2; i <= clip.frames.size(); ++i) {
    double e = 0.0;
    const auto a = clip.frames[i - 1].values();
    const auto o = clip.frames[0].values();
    for (std::size_t k = 0; k < a.size(); ++k) e += std::abs(a[k] - o[k]);
    if (e > best_energy) {
      best_energy = e;
      best = i;
    }
  }
  return best;
}

void write_matrix_csv(const fs::path& path, const Tensor& m) {
  std::ostringstream os;
  char buf[32];
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m.at(r, c));
      os << (c ? "," : "") << buf;
    }
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

struct InspectFlags {
  std::string checkpoint;
  std::string clip;
  std::optional<std::size_t> apex;
  std::optional<std::size_t> block;
  double fps = 30.0;
};

int run_inspect(const InspectFlags& in, const CommonFlags& f) {
  const LoadedModel m = load_model(in.checkpoint, f);
  echo_config(m.config);
  const RunConfig& c = m.config;

  RawClip raw;
  raw.fps = in.fps;
  raw.subject_id = "inspect";
  for (std::size_t i = 1;; ++i) {
    const fs::path p = frame_path(in.clip, i);
    if (!fs::exists(p)) break;
    raw.frames.push_back(read_image(p));
  }
  if (raw.frames.size() < 2) {
    throw InputError("inspect: " + in.clip + " holds fewer than 2 frame_XXXX.pgm/ppm files");
  }
  if (in.apex) {
    raw.apex_index = *in.apex;
  } else {
    raw.apex_index = estimate_apex(raw);
    log(Level::warn, "no --apex given; using frame " + std::to_string(raw.apex_index) +
                         " (largest change from onset)");
  }
  if (raw.apex_index < 2 || raw.apex_index > raw.frames.size()) {
    throw ValidationError("inspect: apex " + std::to_string(raw.apex_index) + " outside [2, " +
                          std::to_string(raw.frames.size()) + "]");
  }
  const FrameSequence seq = preprocess(raw, c.data);
  const ForwardResult r = forward_model(seq, bind(m.params, nullptr), c.model);
  const ForwardTrace& t = r.trace;

  const fs::path out = f.out;
  const std::size_t blocks = t.motion.attention_maps.size();
  if (in.block && *in.block >= blocks) {
    throw UsageError("--block " + std::to_string(*in.block) + " outside [0, " +
                     std::to_string(blocks) + ")");
  }
  std::size_t written = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (in.block && *in.block != b) continue;
    for (std::size_t p = 0; p < t.motion.attention_maps[b].size(); ++p) {
      Tensor map = t.motion.attention_maps[b][p];
      double peak = 0.0;
      for (double v : map.values()) peak = std::max(peak, v);
      for (double& v : map.values()) v = peak > 0.0 ? v / peak : 0.0;
      char name[64];
      std::snprintf(name, sizeof name, "block%zu_pair%02zu.pgm", b, p + 2);
      const fs::path path = out / "attention" / name;
      fs::create_directories(path.parent_path());
      write_image(path.string() + ".tmp", map.reshaped({1, map.dim(0), map.dim(1)}));
      fs::rename(path.string() + ".tmp", path);
      ++written;
    }
  }
  const AdjacencyStack& adj = t.adjacency;
  for (std::size_t l = 0; l < adj.layers.size(); ++l) {
    write_matrix_csv(out / "adjacency" / ("layer" + std::to_string(l) + ".csv"), adj.layers[l]);
  }
  if (!adj.layers.empty()) {
    std::ostringstream edges;
    const Tensor& a0 = adj.layers.front();
    char buf[64];
    for (std::size_t i = 0; i < a0.dim(0); ++i)
      for (std::size_t j = 0; j < a0.dim(1); ++j) {
        if (adj.mask.at(i, j) == 0.0) continue;
        std::snprintf(buf, sizeof buf, "%zu %zu %.17g\n", i + 2, j + 2, a0.at(i, j));
        edges << buf;
      }
    write_file_atomic(out / "edges.txt", edges.str());
  }
  write_matrix_csv(out / "classifier_attention.csv", t.classifier_attention);
  const Prediction pred = r.prediction();
  write_json_atomic(out / "prediction.json",
                    {{"clip", in.clip},
                     {"apex_index", seq.apex_index},
                     {"predicted", pred.predicted},
                     {"probabilities", std::vector<double>(pred.probabilities.values().begin(),
                                                           pred.probabilities.values().end())}});
  log(Level::info, "wrote " + std::to_string(written) + " attention maps and " +
                       std::to_string(adj.layers.size()) + " adjacency layers to " + f.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-expression recognition with adaptive temporal motion graphs"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::optional<std::string> spec_path;
  bool ablation = false;
  std::string checkpoint;
  InspectFlags inspect;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--spec", spec_path, "Synthetic spec JSON")->check(CLI::ExistingFile);
  add_common(synth, flags, false);

  auto* train_cmd = app.add_subcommand("train", "Train one model on a manifest");
  add_common(train_cmd, flags, true);
  train_cmd->add_option("--variant", flags.variant, "Model variant")->check(CLI::IsMember(kVariantNames));

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", flags.manifest, "Dataset manifest.csv");
  eval_cmd->add_option("--out", flags.out, "Output directory")->required();

  auto* loso_cmd = app.add_subcommand("loso", "Leave-one-subject-out protocol");
  add_common(loso_cmd, flags, true);
  auto variants_or_all = kVariantNames;
  variants_or_all.push_back("all");
  loso_cmd->add_option("--variant", flags.variant, "Model variant, or 'all' for the ablation")
      ->check(CLI::IsMember(variants_or_all));
  loso_cmd->add_flag("--ablation", ablation, "Run all four variants and write a table");

  auto* inspect_cmd = app.add_subcommand("inspect", "Export attention maps and adjacency");
  inspect_cmd->add_option("--checkpoint", inspect.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  inspect_cmd->add_option("--clip", inspect.clip, "Directory of frame_XXXX.pgm files")
      ->required()
      ->check(CLI::ExistingDirectory);
  inspect_cmd->add_option("--apex", inspect.apex, "1-based apex frame (estimated if omitted)");
  inspect_cmd->add_option("--block", inspect.block, "Export only this encoder block (0-based)");
  inspect_cmd->add_option("--fps", inspect.fps, "Frame rate of the clip")->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--out", flags.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return run_synth(spec_path, flags);
    if (*train_cmd) return run_train(flags);
    if (*eval_cmd) return run_eval(checkpoint, flags);
    if (*loso_cmd) return run_loso_command(flags, ablation);
    if (*inspect_cmd) return run_inspect(inspect, flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
