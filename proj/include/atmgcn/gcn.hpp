#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atmgcn/autodiff.hpp"
#include "atmgcn/graph.hpp"
#include "atmgcn/motion.hpp"

namespace atmgcn {

enum class Variant { full, no_gcn, no_motion, no_atm };

std::string_view variant_name(Variant v);
// Throws UsageError for unknown names.
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_gcn, Variant::no_motion,
                                           Variant::no_atm};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t clip_length = 16;  // L; the graph has L - 1 nodes
  std::size_t gcn_layers = 2;
  std::size_t gcn_dim = 64;
  std::size_t window = 1;
  EdgeWeighting weighting;
  std::vector<double> forgetting_rates;  // one per layer; empty -> 0.5 each
  bool residual = true;
  bool local_self_loops = true;
  std::size_t num_classes = 3;
  Variant variant = Variant::full;

  std::size_t num_nodes() const { return clip_length - 1; }
  double forgetting_rate(std::size_t layer) const;
  // Width of the features the classifier sees for this variant.
  std::size_t head_dim() const;
  void validate() const;
};

template <class T>
struct GcnLayerWeights {
  T weight, bias;        // TM-GCN: d_in x d_out, d_out
  T fc_weight, fc_bias;  // Adaptive-TM row transform: N x N, N
};

template <class T>
struct ClassifierWeights {
  T wq, wk, wv;      // single-head self-attention projections
  T out_w, out_b;    // pooled features -> class logits
};

template <class T>
struct ModelWeights {
  EncoderWeights<T> encoder;
  std::vector<GcnLayerWeights<T>> gcn;
  ClassifierWeights<T> head;

  // Stable, named view over every tensor, in checkpoint order.
  template <class Self>
  static auto fields_of(Self& self) {
    auto out = EncoderWeights<T>::fields_of(self.encoder);
    for (std::size_t l = 0; l < self.gcn.size(); ++l) {
      auto& g = self.gcn[l];
      const std::string p = "gcn.layer" + std::to_string(l) + ".";
      out.insert(out.end(), {{p + "weight", &g.weight},
                             {p + "bias", &g.bias},
                             {p + "fc_weight", &g.fc_weight},
                             {p + "fc_bias", &g.fc_bias}});
    }
    out.insert(out.end(), {{"head.wq", &self.head.wq},
                           {"head.wk", &self.head.wk},
                           {"head.wv", &self.head.wv},
                           {"head.out_w", &self.head.out_w},
                           {"head.out_b", &self.head.out_b}});
    return out;
  }
  auto fields() { return fields_of(*this); }
  auto fields() const { return fields_of(*this); }
};

using ModelParams = ModelWeights<Tensor>;
using ModelVars = ModelWeights<Var>;

ModelParams init_model(const ModelConfig& config, std::mt19937_64& rng);

// Trainable leaves on `tape`, or constants when tape is null (evaluation).
ModelVars bind(const ModelParams& params, Tape* tape);

// Gradients for every parameter, in fields() order.
std::vector<Tensor> collect_gradients(const ModelVars& vars, const Gradients& grads);

// relu(normalize(A)^T H W + b) (+ H when shapes allow and residual is on).
// normalize divides every column by its sum; zero-sum columns stay zero.
Var tm_gcn_layer(const Var& features, const Var& adjacency, const Var& weight, const Var& bias,
                 bool residual);

// mask * (FC(A_prev) * (1 - f) + A_0 * f), FC applied to every row.
Var adaptive_tm(const Var& previous, const Var& initial, double forgetting_rate,
                const Var& fc_weight, const Var& fc_bias, const Tensor& mask);

struct ClassifierOutput {
  Var probabilities;  // length c
  Tensor attention;   // N x N
};

ClassifierOutput classify(const Var& node_features, const ClassifierWeights<Var>& weights);

struct Prediction {
  Tensor probabilities;
  std::size_t predicted = 0;
  Tensor classifier_attention;
};

struct ForwardTrace {
  MotionFeatureSet motion;
  AdjacencyStack adjacency;  // empty for no_gcn
  Tensor classifier_attention;
};

struct ForwardResult {
  Var probabilities;
  ForwardTrace trace;

  Prediction prediction() const;
};

// Full pipeline for one clip of exactly config.clip_length frames.
ForwardResult forward_model(const FrameSequence& sequence, const ModelVars& weights,
                            const ModelConfig& config);

Prediction predict(const FrameSequence& sequence, const ModelParams& params,
                   const ModelConfig& config);

// Binary checkpoint: see docs/FORMATS.md.
struct Checkpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ModelParams& params, std::string config_json);
// Copies checkpoint tensors into params, checking names and shapes.
void load_params(const Checkpoint& checkpoint, ModelParams& params);

}  // namespace atmgcn
