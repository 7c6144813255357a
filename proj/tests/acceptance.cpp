// Acceptance suite: one PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "atmgcn/config.hpp"
#include "atmgcn/errors.hpp"
#include "support.hpp"

#ifndef ATMGCN_CLI
#error "ATMGCN_CLI must name the command-line binary"
#endif

using namespace atmgcn;
using namespace atmgcn::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "atmgcn_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int cli(const std::string& args, const std::string& log_name) {
  const std::string cmd = "cd '" + work_dir().string() + "' && ATMGCN_LOG=info '" ATMGCN_CLI "' " +
                          args + " > '" + log_name + ".out' 2> '" + log_name + ".err'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::size_t cores() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double worst_op = 0.0;
  std::string worst_name;
  auto cases = op_cases();
  cases.push_back({"focal_loss", {{4}}, -2, 2, [](std::span<const Var> v) {
                     return focal_loss(ops::softmax_lastdim(v[0]), 2, 2.0, 0.8);
                   }});
  for (const OpCase& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> point;
      for (const Shape& s : c.shapes) point.push_back(random_tensor(rng, s, c.lo, c.hi));
      const std::uint64_t wseed = rng();
      const double err = check_gradients(
          [&](std::span<const Var> v) { return contract(c.body(v), wseed); }, point, 1e-5);
      if (err > worst_op) {
        worst_op = err;
        worst_name = c.name;
      }
    }
  }
  o.require(worst_op < 1e-4, "op " + worst_name + " error " + sci(worst_op));

  double worst_model = 0.0;
  for (Variant v : kAllVariants) {
    const ModelConfig c = tiny_model(v);
    const ModelParams p = init_model(c, rng);
    const FrameSequence clip = random_clip(rng, c, 5, 1);
    const double err = model_gradient_error(c, p, clip);
    worst_model = std::max(worst_model, err);
    o.require(err < 1e-4, std::string(variant_name(v)) + " model error " + sci(err));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "took " + num(secs, 1) + " s");
  if (o.pass) {
    o.detail = std::to_string(cases.size()) + " ops x 20 points, worst " + sci(worst_op) +
               "; full model x 4 variants, worst " + sci(worst_model) + "; " + num(secs, 1) + " s";
  }
  return o;
}

Outcome topology_oracle() {
  Outcome o;
  auto member = [](std::size_t L, std::size_t apex, std::size_t w, std::size_t i, std::size_t j) {
    if (i == apex) return true;  // global node reaches every node
    if (j == apex) return true;  // every local node reaches the global node
    const std::size_t lo = i > w + 2 ? i - w : 2;
    return j >= lo && j <= std::min(L, i + w);
  };
  std::size_t configs = 0;
  for (std::size_t L = 3; L <= 20; ++L)
    for (std::size_t apex = 2; apex <= L; ++apex)
      for (std::size_t w = 1; w <= 4; ++w) {
        std::set<Edge> want;
        for (std::size_t i = 2; i <= L; ++i)
          for (std::size_t j = 2; j <= L; ++j)
            if (member(L, apex, w, i, j)) want.emplace(i, j);
        const GraphTopology g = build_topology(L, apex, w);
        const std::set<Edge> got(g.edges().begin(), g.edges().end());
        ++configs;
        if (got != want || got.size() != g.edges().size()) {
          o.require(false, "mismatch at L=" + std::to_string(L) + " apex=" + std::to_string(apex) +
                               " w=" + std::to_string(w));
          return o;
        }
      }
  const GraphTopology hand = build_topology(6, 4, 1);
  const std::set<Edge> expected{{2, 2}, {2, 3}, {3, 2}, {3, 3}, {3, 4}, {5, 4}, {5, 5}, {5, 6}, {6, 5},
                                {6, 6}, {2, 4}, {6, 4}, {4, 2}, {4, 3}, {4, 5}, {4, 6}, {4, 4}};
  o.require(hand.edges().size() == 17 &&
                std::set<Edge>(hand.edges().begin(), hand.edges().end()) == expected,
            "hand-enumerated case differs");
  if (o.pass) o.detail = std::to_string(configs) + " configurations exact; 17-edge case exact";
  return o;
}

Outcome edge_weight_identities() {
  Outcome o;
  const std::vector<double> a{0.3, -1.2, 2.0}, neg{-0.3, 1.2, -2.0};
  const double same = angular_similarity(a, a);
  const double ortho = angular_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1});
  const double opposite = angular_similarity(a, neg);
  o.require(std::abs(same - (1.0 - std::acos(1.0 - 1e-6) / std::numbers::pi)) < 1e-12 &&
                same > 0.999,
            "identical vectors gave " + num(same, 6));
  o.require(std::abs(ortho - 0.5) < 1e-15, "orthogonal vectors gave " + num(ortho, 6));
  o.require(opposite < 1e-3, "opposite vectors gave " + num(opposite, 6));
  const double decay = decayed_weight(1.0, 3, 13, 10.0);
  o.require(std::abs(decay - std::exp(-1.0)) < 1e-9, "decay gave " + num(decay, 12));

  const GraphTopology g = build_topology(6, 4, 1);
  const Var f = constant(Tensor({5, 3}, 1.0));
  for (double local : {2.0, 2.5}) {
    bool rejected = false;
    try {
      assemble_adjacency(f, g, {10.0, local, 2.0});
    } catch (const ConfigError&) {
      rejected = true;
    }
    o.require(rejected, "lambda_local " + num(local, 1) + " >= lambda_global accepted");
  }

  // masked entries through every layer, across variants and apex positions
  std::mt19937_64 rng(3);
  std::size_t checked = 0;
  for (Variant v : {Variant::full, Variant::no_atm, Variant::no_motion}) {
    ModelConfig c = tiny_model(v);
    c.gcn_layers = 3;
    c.forgetting_rates = {0.3};
    ModelParams p = init_model(c, rng);
    for (auto& layer : p.gcn) layer.fc_bias = random_tensor(rng, {c.num_nodes()});
    for (std::size_t apex = 2; apex <= c.clip_length; ++apex) {
      const ForwardResult r = forward_model(random_clip(rng, c, apex), bind(p, nullptr), c);
      const Tensor& mask = r.trace.adjacency.mask;
      o.require(r.trace.adjacency.layers.size() == c.gcn_layers + 1, "missing adjacency layers");
      for (const Tensor& layer : r.trace.adjacency.layers)
        for (std::size_t k = 0; k < layer.size(); ++k)
          if (mask[k] == 0.0) {
            ++checked;
            if (layer[k] != 0.0) {
              o.require(false, "masked entry nonzero");
              return o;
            }
          }
    }
  }
  if (o.pass) {
    o.detail = "anchors " + num(same, 5) + " / " + num(ortho, 5) + " / " + num(opposite, 5) +
               "; e^-1 exact to 1e-9; lambda ordering enforced; " + std::to_string(checked) +
               " masked entries all 0";
  }
  return o;
}

Outcome atm_endpoints() {
  Outcome o;
  std::mt19937_64 rng(4);
  const GraphTopology g = build_topology(9, 5, 2);
  const Tensor mask = g.mask();
  std::size_t cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a0 = assemble_adjacency(constant(random_tensor(rng, {8, 6})), g, {}).value();
    Tensor prev = random_tensor(rng, {8, 8});
    for (std::size_t k = 0; k < prev.size(); ++k) prev[k] *= mask[k];
    const Var w = constant(random_tensor(rng, {8, 8}));
    const Var b = constant(random_tensor(rng, {8}));
    const Tensor keep = adaptive_tm(constant(prev), constant(a0), 1.0, w, b, mask).value();
    o.require(keep == a0, "f=1 is not bit-exact A0");
    const Tensor fc = adaptive_tm(constant(prev), constant(a0), 0.0, w, b, mask).value();
    const Var xw = ops::matmul(constant(prev), w);
    const Tensor ref =
        ops::mul(ops::add(xw, ops::broadcast(b, xw.shape())), constant(mask)).value();
    o.require(fc == ref, "f=0 differs from mask * FC(prev)");
    ++cases;
  }
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig full = tiny_model(Variant::full);
    full.forgetting_rates = {1.0};
    ModelConfig no_atm = full;
    no_atm.variant = Variant::no_atm;
    const ModelParams p = init_model(full, rng);
    const FrameSequence clip = random_clip(rng, full, 2 + trial % 7);
    const Tensor a = forward_model(clip, bind(p, nullptr), full).probabilities.value();
    const Tensor b = forward_model(clip, bind(p, nullptr), no_atm).probabilities.value();
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  o.require(worst <= 1e-12, "no_atm vs full differ by " + sci(worst));
  if (o.pass) {
    o.detail = std::to_string(cases) + " random layers bit-exact at f=1 and f=0; no_atm vs full max diff " +
               sci(worst);
  }
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + rng() % 5, n = 1 + rng() % 40;
    std::vector<std::size_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng() % c;
      pred[i] = rng() % 3 == 0 ? truth[i] : rng() % c;
    }
    double f1 = 0, rec = 0, correct = 0;
    std::size_t nf = 0, nr = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double tp = 0, fp = 0, fn = 0, cnt = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += pred[i] == k && truth[i] == k;
        fp += pred[i] == k && truth[i] != k;
        fn += pred[i] != k && truth[i] == k;
        cnt += truth[i] == k;
      }
      if (cnt == 0 && fp == 0) continue;
      f1 += 2 * tp / (2 * tp + fp + fn);
      ++nf;
      if (cnt > 0) {
        rec += tp / cnt;
        ++nr;
      }
    }
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == truth[i];
    const Metrics m = compute_metrics(pred, truth, c);
    worst = std::max({worst, std::abs(m.uf1 - f1 / nf), std::abs(m.uar - rec / nr),
                      std::abs(m.acc - correct / n)});
  }
  o.require(worst <= 1e-12, "oracle difference " + sci(worst));
  const Metrics hand = compute_metrics(std::vector<std::size_t>{0, 1, 0},
                                       std::vector<std::size_t>{0, 1, 1}, 2);
  o.require(std::abs(hand.uf1 - 2.0 / 3.0) < 1e-12, "hand UF1 " + num(hand.uf1, 6));
  o.require(std::abs(hand.uar - 0.75) < 1e-12, "hand UAR " + num(hand.uar, 6));
  if (o.pass) {
    o.detail = "1000 random sets, max diff " + sci(worst) + "; hand case UF1 " + num(hand.uf1, 6) +
               ", UAR " + num(hand.uar, 6);
  }
  return o;
}

Outcome synthetic_learning() {
  Outcome o;
  // default generator: 6 subjects x 12 clips, 3 classes, L=16, 32x32, noise 0.02, seed 7
  if (cli("synth --out c6_data", "c6_synth") != 0) {
    o.require(false, "synth failed: " + read_file(work_dir() / "c6_synth.err"));
    return o;
  }
  const auto t0 = Clock::now();
  const int rc = cli("loso --preset small --seed 7 --manifest c6_data/manifest.csv --jobs " +
                         std::to_string(cores()) + " --out c6_loso",
                     "c6_loso");
  const double secs = seconds_since(t0);
  if (rc != 0) {
    o.require(false, "loso failed: " + read_file(work_dir() / "c6_loso.err"));
    return o;
  }
  const json config = json::parse(read_file(work_dir() / "c6_loso.out"));
  o.require(config["blocks"] == 2 && config["gcn_layers"] == 2 && config["window"] == 1 &&
                config["epochs"] == 50 && config["seed"] == 7 && config["clip_length"] == 16 &&
                config["height"] == 32 && config["width"] == 32,
            "resolved config is not the small preset at 50 epochs");
  const json report = json::parse(read_file(work_dir() / "c6_loso" / "loso_report.json"));
  const double train_uf1 = report["train_mean"]["uf1"];
  const double uar = report["subject_mean"]["uar"];
  o.require(report["folds"].size() == 6, "expected 6 folds");
  o.require(train_uf1 >= 0.95, "training-split UF1 " + num(train_uf1));
  o.require(uar >= 0.60, "subject-mean UAR " + num(uar));
  o.require(secs < 1200.0, "LOSO took " + num(secs, 0) + " s");
  const std::string summary = "training-split UF1 " + num(train_uf1) + ", subject-mean UAR " +
                              num(uar) + ", subject-mean UF1 " +
                              num(report["subject_mean"]["uf1"].get<double>()) + ", " +
                              num(secs, 0) + " s on " + std::to_string(cores()) + " core(s)";
  o.detail = o.pass ? summary : o.detail + " (" + summary + ")";
  return o;
}

Outcome ablation_harness() {
  Outcome o;
  write_file(work_dir() / "c7_spec.json",
             R"({"num_subjects": 4, "noise": 0.0})");
  // small preset and 50 epochs as in criterion 6; lr0 raised so every variant converges
  write_file(work_dir() / "c7_run.json",
             R"({"preset": "small", "lr0": 0.001, "manifest": "c7_data/manifest.csv"})");
  if (cli("synth --spec c7_spec.json --out c7_data", "c7_synth") != 0) {
    o.require(false, "synth failed");
    return o;
  }
  const auto t0 = Clock::now();
  if (cli("loso --config c7_run.json --ablation --jobs " + std::to_string(cores()) +
              " --out c7_ablation",
          "c7_loso") != 0) {
    o.require(false, "loso --ablation failed: " + read_file(work_dir() / "c7_loso.err"));
    return o;
  }
  const json table = json::parse(read_file(work_dir() / "c7_ablation" / "ablation.json"));
  std::map<std::string, double> uf1;
  for (const json& row : table) uf1[row["variant"]] = row["subject_mean"]["uf1"];
  o.require(uf1.size() == 4, "table has " + std::to_string(uf1.size()) + " variants");
  o.require(fs::exists(work_dir() / "c7_ablation" / "ablation.md"), "no rendered table");
  o.require(uf1["full"] >= uf1["no_gcn"],
            "full UF1 " + num(uf1["full"]) + " < no_gcn UF1 " + num(uf1["no_gcn"]));
  std::string row;
  for (const char* v : {"full", "no_gcn", "no_motion", "no_atm"}) {
    row += std::string(row.empty() ? "" : ", ") + v + " " + num(uf1[v], 3);
  }
  o.detail = (o.pass ? "" : o.detail + "; ") + "UF1 " + row + " (" + num(seconds_since(t0), 0) + " s)";
  return o;
}

Outcome determinism() {
  Outcome o;
  write_file(work_dir() / "c8_spec.json",
             R"({"num_subjects": 3, "clips_per_subject": 4, "height": 16, "width": 16,
                 "clip_length": 8})");
  write_file(work_dir() / "c8_run.json",
             R"({"epochs": 4, "height": 16, "width": 16, "clip_length": 8, "patch_size": 4,
                 "motion_dim": 16, "gcn_dim": 16, "heads": 2, "mlp_hidden": 32,
                 "augment_crop": true, "augment_jitter": true,
                 "manifest": "c8_data/manifest.csv"})");
  if (cli("synth --spec c8_spec.json --out c8_data", "c8_synth") != 0) {
    o.require(false, "synth failed");
    return o;
  }
  for (const char* run : {"c8_a", "c8_b"}) {
    if (cli(std::string("loso --config c8_run.json --seed 11 --out ") + run, run) != 0) {
      o.require(false, std::string(run) + " failed: " + read_file(work_dir() / (std::string(run) + ".err")));
      return o;
    }
  }
  std::size_t bytes = 0;
  for (const char* file : {"loso_history.json", "loso_report.json"}) {
    const std::string a = read_file(work_dir() / "c8_a" / file);
    const std::string b = read_file(work_dir() / "c8_b" / file);
    o.require(!a.empty() && a == b, std::string(file) + " differs");
    bytes += a.size();
  }
  o.require(read_file(work_dir() / "c8_a.out") == read_file(work_dir() / "c8_b.out"),
            "echoed config differs");
  if (o.pass) o.detail = "history and report byte-identical (" + std::to_string(bytes) + " bytes)";
  return o;
}

Outcome loso_protocol() {
  Outcome o;
  std::mt19937_64 rng(9);
  std::size_t datasets = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 60, k = 2 + rng() % 10;
    std::vector<std::string> subjects(n);
    for (auto& s : subjects) s = "subject" + std::to_string(rng() % k);
    const std::set<std::string> distinct(subjects.begin(), subjects.end());
    if (distinct.size() < 2) continue;
    ++datasets;
    const auto folds = loso_split(subjects);
    o.require(folds.size() == distinct.size(), "fold count != subject count");
    std::vector<int> seen(n, 0);
    for (const Fold& f : folds) {
      o.require(f.train.size() + f.test.size() == n, "fold does not cover the dataset");
      for (std::size_t i : f.test) {
        ++seen[i];
        o.require(subjects[i] == f.subject, "test clip from another subject");
      }
      for (std::size_t i : f.train) o.require(subjects[i] != f.subject, "held-out subject in train");
    }
    for (int s : seen) o.require(s == 1, "clip not in exactly one test fold");
    if (!o.pass) return o;
  }
  bool single_rejected = false;
  try {
    loso_split(std::vector<std::string>{"x", "x", "x"});
  } catch (const ProtocolError&) {
    single_rejected = true;
  }
  o.require(single_rejected, "single-subject dataset accepted");
  const fs::path report = work_dir() / "c6_loso" / "loso_report.json";
  std::string extra;
  if (fs::exists(report)) {
    const json r = json::parse(read_file(report));
    std::size_t tested = 0;
    for (const json& f : r["folds"]) tested += f["test_size"].get<std::size_t>();
    o.require(r["folds"].size() == 6 && tested == 72, "synthetic LOSO folds do not partition 72 clips");
    extra = "; synthetic run: 6 folds partition 72 clips";
  }
  if (o.pass) o.detail = std::to_string(datasets) + " random datasets partitioned exactly" + extra;
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"topology oracle", topology_oracle},
      {"edge-weight identities", edge_weight_identities},
      {"adaptive-TM endpoints", atm_endpoints},
      {"metric oracle", metric_oracle},
      {"synthetic learning", synthetic_learning},
      {"ablation harness", ablation_harness},
      {"determinism", determinism},
      {"LOSO protocol", loso_protocol},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << "criterion " << i + 1 << " (" << criteria[i].first << "): "
              << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failures;
}
