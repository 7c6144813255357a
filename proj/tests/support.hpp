#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atmgcn/autodiff.hpp"
#include "atmgcn/gcn.hpp"

namespace atmgcn::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Contracts an arbitrary-shaped output against fixed random weights so every
// output coordinate contributes to the scalar.
inline Var contract(const Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(out, constant(random_tensor(rng, out.shape()))));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  double lo, hi;
  std::function<Var(std::span<const Var>)> body;
};

inline std::vector<OpCase> op_cases() {
  using namespace ops;
  return {
      {"add", {{3, 4}, {3, 4}}, -1, 1, [](auto v) { return add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, -1, 1, [](auto v) { return sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, -1, 1, [](auto v) { return mul(v[0], v[1]); }},
      {"div", {{3, 4}, {3, 4}}, 0.5, 2, [](auto v) { return div(v[0], v[1]); }},
      {"scalar_mul", {{5}}, -1, 1, [](auto v) { return scalar_mul(v[0], -2.5); }},
      {"add_scalar", {{5}}, -1, 1, [](auto v) { return add_scalar(v[0], 0.75); }},
      {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](auto v) { return matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, -1, 1, [](auto v) { return transpose(v[0]); }},
      {"relu", {{4, 3}}, -1, 1, [](auto v) { return relu(v[0]); }},
      {"exp", {{4, 3}}, -1, 1, [](auto v) { return exp(v[0]); }},
      {"log", {{4, 3}}, 0.1, 3, [](auto v) { return log(v[0]); }},
      {"arccos_clamped", {{4, 3}}, -0.99, 0.99, [](auto v) { return arccos_clamped(v[0]); }},
      {"softmax_lastdim", {{3, 5}}, -2, 2, [](auto v) { return softmax_lastdim(v[0]); }},
      {"sum", {{3, 4}}, -1, 1, [](auto v) { return sum(v[0]); }},
      {"mean", {{3, 4}}, -1, 1, [](auto v) { return mean(v[0]); }},
      {"max_lastdim", {{3, 6}}, -1, 1, [](auto v) { return max_lastdim(v[0]); }},
      {"concat", {{2, 3}, {4, 3}}, -1, 1,
       [](auto v) { return concat(v, 0); }},
      {"concat_axis1", {{2, 3}, {2, 1}}, -1, 1,
       [](auto v) { return concat(v, 1); }},
      {"slice", {{4, 6}}, -1, 1, [](auto v) { return slice(v[0], 1, 2, 5); }},
      {"broadcast", {{3}}, -1, 1, [](auto v) { return broadcast(v[0], {4, 3}); }},
      {"broadcast_col", {{4, 1}}, -1, 1, [](auto v) { return broadcast(v[0], {4, 3}); }},
      {"l2_norm_lastdim", {{3, 4}}, -1, 1, [](auto v) { return l2_norm_lastdim(v[0]); }},
      {"sum_axis", {{3, 4}}, -1, 1, [](auto v) { return sum_axis(v[0], 0); }},
      {"reshape", {{3, 4}}, -1, 1, [](auto v) { return reshape(v[0], {2, 6}); }},
  };
}


// L=8, 16x16 frames, d=8, c=3: small enough for a full finite-difference pass.
inline ModelConfig tiny_model(Variant variant = Variant::full) {
  ModelConfig c;
  c.encoder.height = 16;
  c.encoder.width = 16;
  c.encoder.patch_size = 8;
  c.encoder.motion_dim = 8;
  c.encoder.heads = 2;
  c.encoder.mlp_hidden = 12;
  c.encoder.blocks = 2;
  c.clip_length = 8;
  c.gcn_layers = 2;
  c.gcn_dim = 8;
  c.window = 1;
  c.num_classes = 3;
  c.variant = variant;
  return c;
}

inline FrameSequence random_clip(std::mt19937_64& rng, const ModelConfig& c, std::size_t apex,
                                 std::size_t label = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FrameSequence s;
  for (std::size_t i = 0; i < c.clip_length; ++i) {
    Tensor f({c.encoder.channels, c.encoder.height, c.encoder.width});
    for (double& v : f.values()) v = u(rng);
    s.frames.push_back(std::move(f));
  }
  s.apex_index = apex;
  s.label = label;
  s.subject_id = "s";
  return s;
}

// Worst relative gradient error of -log p[label] over every model parameter.
inline double model_gradient_error(const ModelConfig& config, const ModelParams& params,
                                   const FrameSequence& clip) {
  std::vector<Tensor> point;
  for (const auto& [name, t] : params.fields()) point.push_back(*t);
  ModelVars vars;
  vars.encoder.blocks.resize(params.encoder.blocks.size());
  vars.gcn.resize(params.gcn.size());
  return check_gradients(
      [&](std::span<const Var> v) {
        auto slots = vars.fields();
        for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].second = v[i];
        const Var p = forward_model(clip, vars, config).probabilities;
        return ops::scalar_mul(ops::sum(ops::log(ops::slice(p, 0, clip.label, clip.label + 1))), -1.0);
      },
      point, 1e-5);
}

}  // namespace atmgcn::testing
