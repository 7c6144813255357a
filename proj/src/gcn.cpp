#include "atmgcn/gcn.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "atmgcn/errors.hpp"

namespace atmgcn {

using namespace ops;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_gcn: return "no_gcn";
    case Variant::no_motion: return "no_motion";
    case Variant::no_atm: return "no_atm";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw UsageError("unknown variant '" + std::string(name) +
                   "' (expected full, no_gcn, no_motion or no_atm)");
}

double ModelConfig::forgetting_rate(std::size_t layer) const {
  if (forgetting_rates.empty()) return 0.5;
  if (forgetting_rates.size() == 1) return forgetting_rates.front();
  return forgetting_rates.at(layer);
}

std::size_t ModelConfig::head_dim() const {
  return variant == Variant::no_gcn ? encoder.motion_dim : gcn_dim;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (clip_length < 3) {
    throw ConfigError("model: clip_length must be >= 3, got " + std::to_string(clip_length));
  }
  if (gcn_layers < 1) throw ConfigError("model: gcn_layers must be >= 1");
  if (gcn_dim == 0) throw ConfigError("model: gcn_dim must be positive");
  if (window < 1) throw ConfigError("model: window must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  weighting.validate();
  if (forgetting_rates.size() > 1 && forgetting_rates.size() != gcn_layers) {
    throw ConfigError("model: forgetting_rates needs 1 or " + std::to_string(gcn_layers) +
                      " entries, got " + std::to_string(forgetting_rates.size()));
  }
  for (double f : forgetting_rates) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ConfigError("model: forgetting rate " + std::to_string(f) + " outside [0, 1]");
    }
  }
}

namespace {

Tensor scaled_normal(std::mt19937_64& rng, Shape shape, std::size_t fan_in, double gain = 1.0) {
  std::normal_distribution<double> n(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

Var row_affine(const Var& x, const Var& w, const Var& b) {
  const Var xw = matmul(x, w);
  return add(xw, broadcast(b, xw.shape()));
}

}  // namespace

ModelParams init_model(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  ModelParams p;
  p.encoder = init_encoder(config.encoder, rng);
  const std::size_t n = config.num_nodes();
  std::size_t in_dim = config.encoder.motion_dim;
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (std::size_t l = 0; l < config.gcn_layers; ++l) {
    GcnLayerWeights<Tensor> g;
    // residual branches start small so the stack begins close to the identity
    const bool residual = config.residual && in_dim == config.gcn_dim;
    g.weight = scaled_normal(rng, {in_dim, config.gcn_dim}, in_dim, residual ? 0.1 : 1.0);
    g.bias = Tensor({config.gcn_dim});
    g.fc_weight = Tensor::identity(n);
    for (double& v : g.fc_weight.values()) v += jitter(rng);
    g.fc_bias = Tensor({n});
    p.gcn.push_back(std::move(g));
    in_dim = config.gcn_dim;
  }
  const std::size_t d = config.head_dim();
  p.head.wq = scaled_normal(rng, {d, d}, d);
  p.head.wk = scaled_normal(rng, {d, d}, d);
  p.head.wv = scaled_normal(rng, {d, d}, d);
  p.head.out_w = scaled_normal(rng, {d, config.num_classes}, d);
  p.head.out_b = Tensor({config.num_classes});
  return p;
}

ModelVars bind(const ModelParams& params, Tape* tape) {
  ModelVars vars;
  vars.encoder.blocks.resize(params.encoder.blocks.size());
  vars.gcn.resize(params.gcn.size());
  auto src = params.fields();
  auto dst = vars.fields();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = tape ? tape->leaf(*src[i].second) : constant(*src[i].second);
  }
  return vars;
}

std::vector<Tensor> collect_gradients(const ModelVars& vars, const Gradients& grads) {
  std::vector<Tensor> out;
  for (const auto& [name, var] : vars.fields()) out.push_back(grads.of(*var));
  return out;
}

Var tm_gcn_layer(const Var& features, const Var& adjacency, const Var& weight, const Var& bias,
                 bool residual) {
  const Shape& hs = features.shape();
  const Shape& as = adjacency.shape();
  if (hs.size() != 2 || as.size() != 2 || as[0] != as[1] || as[0] != hs[0]) {
    throw DimensionError("tm_gcn_layer: adjacency " + shape_string(as) +
                         " incompatible with features " + shape_string(hs));
  }
  if (weight.shape().size() != 2 || weight.shape()[0] != hs[1]) {
    throw ConfigError("tm_gcn_layer: weight " + shape_string(weight.shape()) +
                      " incompatible with features " + shape_string(hs));
  }
  const std::size_t n = as[0];
  const Var column_sums = sum_axis(adjacency, 0);
  Tensor guard({n});
  for (std::size_t j = 0; j < n; ++j) guard[j] = column_sums.value()[j] == 0.0 ? 1.0 : 0.0;
  const Var denom = add(column_sums, constant(std::move(guard)));
  const Var normalized = div(adjacency, broadcast(denom, {n, n}));
  const Var aggregated = matmul(transpose(normalized), features);
  Var out = relu(row_affine(aggregated, weight, bias));
  if (residual && out.shape() == hs) out = add(out, features);
  return out;
}

Var adaptive_tm(const Var& previous, const Var& initial, double forgetting_rate,
                const Var& fc_weight, const Var& fc_bias, const Tensor& mask) {
  const Shape& s = previous.shape();
  if (s.size() != 2 || s[0] != s[1] || initial.shape() != s || mask.shape() != s ||
      fc_weight.shape() != Shape{s[0], s[0]} || fc_bias.shape() != Shape{s[0]}) {
    throw ConfigError("adaptive_tm: shapes do not match the configured " +
                      std::to_string(fc_weight.shape().empty() ? 0 : fc_weight.shape()[0]) +
                      "-node graph (adjacency " + shape_string(s) + ")");
  }
  if (!(forgetting_rate >= 0.0 && forgetting_rate <= 1.0)) {
    throw ConfigError("adaptive_tm: forgetting rate outside [0, 1]");
  }
  const Var transformed = row_affine(previous, fc_weight, fc_bias);
  const Var blended = add(scalar_mul(transformed, 1.0 - forgetting_rate),
                          scalar_mul(initial, forgetting_rate));
  return mul(blended, constant(mask));
}

ClassifierOutput classify(const Var& node_features, const ClassifierWeights<Var>& w) {
  const Shape& s = node_features.shape();
  if (s.size() != 2 || w.wq.shape().size() != 2 || w.wq.shape()[0] != s[1]) {
    throw DimensionError("classify: features " + shape_string(s) +
                         " incompatible with projections " + shape_string(w.wq.shape()));
  }
  const std::size_t n = s[0];
  const Var q = matmul(node_features, w.wq);
  const Var k = matmul(node_features, w.wk);
  const Var v = matmul(node_features, w.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.wq.shape()[1]));
  const Var attn = softmax_lastdim(scalar_mul(matmul(q, transpose(k)), scale));
  const Var attended = matmul(attn, v);
  const Var pooled = scalar_mul(sum_axis(attended, 0), 1.0 / static_cast<double>(n));
  const std::size_t d = pooled.shape()[0];
  const Var logits = row_affine(reshape(pooled, {1, d}), w.out_w, reshape(w.out_b, {1, w.out_b.shape()[0]}));
  ClassifierOutput out;
  out.probabilities = reshape(softmax_lastdim(logits), {w.out_b.shape()[0]});
  out.attention = attn.value();
  return out;
}

Prediction ForwardResult::prediction() const {
  Prediction p;
  p.probabilities = probabilities.value();
  const auto v = p.probabilities.values();
  p.predicted = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  p.classifier_attention = trace.classifier_attention;
  return p;
}

ForwardResult forward_model(const FrameSequence& sequence, const ModelVars& weights,
                            const ModelConfig& config) {
  sequence.validate();
  if (sequence.length() != config.clip_length) {
    throw InputError("forward_model: clip has " + std::to_string(sequence.length()) +
                     " frames, model expects " + std::to_string(config.clip_length));
  }
  if (weights.gcn.size() != config.gcn_layers) {
    throw ConfigError("forward_model: parameter set has " + std::to_string(weights.gcn.size()) +
                      " GCN layers, config expects " + std::to_string(config.gcn_layers));
  }
  ForwardResult result;
  result.trace.motion = encode_sequence(sequence, weights.encoder, config.encoder,
                                        config.variant != Variant::no_motion);
  std::vector<Var> rows;
  const std::size_t d = config.encoder.motion_dim;
  for (const Var& m : result.trace.motion.features) rows.push_back(reshape(m, {1, d}));
  Var h = concat(rows, 0);

  if (config.variant != Variant::no_gcn) {
    const GraphTopology topology = build_topology(config.clip_length, sequence.apex_index,
                                                  config.window, config.local_self_loops);
    AdjacencyStack& stack = result.trace.adjacency;
    stack.mask = topology.mask();
    const Var initial = assemble_adjacency(h, topology, config.weighting);
    stack.layers.push_back(initial.value());
    Var adjacency = initial;
    for (std::size_t l = 0; l < config.gcn_layers; ++l) {
      const auto& layer = weights.gcn[l];
      if (config.variant != Variant::no_atm) {
        adjacency = adaptive_tm(adjacency, initial, config.forgetting_rate(l), layer.fc_weight,
                                layer.fc_bias, stack.mask);
      }
      stack.layers.push_back(adjacency.value());
      h = tm_gcn_layer(h, adjacency, layer.weight, layer.bias, config.residual);
    }
  }
  ClassifierOutput head = classify(h, weights.head);
  result.probabilities = head.probabilities;
  result.trace.classifier_attention = std::move(head.attention);
  return result;
}

Prediction predict(const FrameSequence& sequence, const ModelParams& params,
                   const ModelConfig& config) {
  return forward_model(sequence, bind(params, nullptr), config).prediction();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'T', 'M', 'G', 'C', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError("checkpoint " + path.string() + ": truncated file");
  }
  return v;
}

std::string get_string(std::istream& is, std::size_t len, const std::filesystem::path& path) {
  if (len > (std::size_t{1} << 30)) {
    throw FormatError("checkpoint " + path.string() + ": implausible string length");
  }
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw FormatError("checkpoint " + path.string() + ": truncated file");
  }
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("checkpoint: cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, checkpoint.config_json.size());
    os.write(checkpoint.config_json.data(),
             static_cast<std::streamsize>(checkpoint.config_json.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& [name, t] : checkpoint.tensors) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw InputError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                      std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = get_string(is, get<std::uint64_t>(is, path), path);
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw FormatError("checkpoint " + path.string() + ": implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    if (shape_size(shape) > (std::size_t{1} << 28)) {
      throw FormatError("checkpoint " + path.string() + ": implausible tensor size");
    }
    Tensor t(shape);
    if (t.size() && !is.read(reinterpret_cast<char*>(t.data()),
                             static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw FormatError("checkpoint " + path.string() + ": truncated tensor " + name);
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint " + path.string() + ": trailing bytes");
  }
  return ck;
}

Checkpoint make_checkpoint(const ModelParams& params, std::string config_json) {
  Checkpoint ck;
  ck.config_json = std::move(config_json);
  for (const auto& [name, t] : params.fields()) ck.tensors.emplace_back(name, *t);
  return ck;
}

void load_params(const Checkpoint& checkpoint, ModelParams& params) {
  auto fields = params.fields();
  if (fields.size() != checkpoint.tensors.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(checkpoint.tensors.size()) +
                      " tensors, model expects " + std::to_string(fields.size()));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& [name, tensor] = checkpoint.tensors[i];
    if (name != fields[i].first || tensor.shape() != fields[i].second->shape()) {
      throw FormatError("checkpoint: tensor " + name + " " + shape_string(tensor.shape()) +
                        " does not match model tensor " + fields[i].first + " " +
                        shape_string(fields[i].second->shape()));
    }
    *fields[i].second = tensor;
  }
}

}  // namespace atmgcn
