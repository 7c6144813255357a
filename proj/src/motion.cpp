#include "atmgcn/motion.hpp"

#include <cmath>

#include "atmgcn/errors.hpp"

namespace atmgcn {

using namespace ops;

void FrameSequence::validate() const {
  if (frames.size() < 2) {
    throw InputError("frame sequence: need at least 2 frames, got " +
                     std::to_string(frames.size()));
  }
  if (onset_index != 1) {
    throw InputError("frame sequence: onset index must be 1, got " +
                     std::to_string(onset_index));
  }
  if (apex_index < 2 || apex_index > frames.size()) {
    throw InputError("frame sequence: apex index " + std::to_string(apex_index) +
                     " outside [2, " + std::to_string(frames.size()) + "]");
  }
  for (const Tensor& f : frames) {
    if (f.shape() != frames.front().shape()) {
      throw InputError("frame sequence: frames have differing shapes " +
                       shape_string(frames.front().shape()) + " and " +
                       shape_string(f.shape()));
    }
  }
}

std::vector<MotionInput> pair_frames(const FrameSequence& sequence) {
  sequence.validate();
  const Tensor& onset = sequence.frame(sequence.onset_index);
  std::vector<MotionInput> pairs;
  pairs.reserve(sequence.length() - 1);
  for (std::size_t i = 2; i <= sequence.length(); ++i) {
    MotionInput in;
    in.pair_index = i;
    in.difference = sequence.frame(i);
    auto d = in.difference.values();
    const auto o = onset.values();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= o[k];
    in.is_apex = i == sequence.apex_index;
    pairs.push_back(std::move(in));
  }
  return pairs;
}

Tensor temporal_encoding(std::size_t index, std::size_t dim) {
  if (dim % 2 != 0) {
    throw ConfigError("temporal encoding: dimension must be even, got " + std::to_string(dim));
  }
  Tensor code({dim});
  const double pos = static_cast<double>(index);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
    code[2 * k] = std::sin(pos / freq);
    code[2 * k + 1] = std::cos(pos / freq);
  }
  return code;
}

void EncoderConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0 || patch_size == 0) {
    throw ConfigError("encoder: channels, height, width and patch_size must be positive");
  }
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ConfigError("encoder: frame size " + std::to_string(height) + "x" +
                      std::to_string(width) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (motion_dim == 0 || motion_dim % 2 != 0) {
    throw ConfigError("encoder: motion_dim must be positive and even, got " +
                      std::to_string(motion_dim));
  }
  if (heads == 0 || motion_dim % heads != 0) {
    throw ConfigError("encoder: motion_dim " + std::to_string(motion_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (mlp_hidden == 0) throw ConfigError("encoder: mlp_hidden must be positive");
}

namespace {

Tensor scaled_normal(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Var xw = matmul(x, w);
  return add(xw, broadcast(b, xw.shape()));
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.motion_dim;
  const std::size_t f = config.patch_features();
  EncoderParams p;
  p.patch_w = scaled_normal(rng, {f, d}, f);
  p.patch_b = Tensor({d});
  for (std::size_t b = 0; b < config.blocks; ++b) {
    AttentionBlockWeights<Tensor> blk;
    blk.wq = scaled_normal(rng, {d, d}, d);
    blk.wk = scaled_normal(rng, {d, d}, d);
    blk.wv = scaled_normal(rng, {d, d}, d);
    // Residual branches start small so stacked blocks stay near identity.
    blk.wo = scaled_normal(rng, {d, d}, d * 4);
    blk.bo = Tensor({d});
    blk.w1 = scaled_normal(rng, {d, config.mlp_hidden}, d);
    blk.b1 = Tensor({config.mlp_hidden});
    blk.w2 = scaled_normal(rng, {config.mlp_hidden, d}, config.mlp_hidden * 4);
    blk.b2 = Tensor({d});
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) {
    throw DimensionError("patchify: expected C x H x W, got " + shape_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ConfigError("patchify: " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p;
  Tensor out({gh * gw, c * p * p});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data() + (py * gw + px) * c * p * p;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            *row++ = image[(ch * h + py * p + dy) * w + px * p + dx];
    }
  return out;
}

EncodedMotion encode_motion(const Tensor& input, std::size_t index,
                            const EncoderWeights<Var>& weights, const EncoderConfig& config) {
  config.validate();
  const Shape expected{config.channels, config.height, config.width};
  if (input.shape() != expected) {
    throw DimensionError("encode_motion: input shape " + shape_string(input.shape()) +
                         " does not match encoder " + shape_string(expected));
  }
  const std::size_t tokens = config.tokens();
  const std::size_t d = config.motion_dim;
  const std::size_t dh = d / config.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var patches = constant(patchify(input, config.patch_size));
  const Var code = constant(temporal_encoding(index, d));
  Var x = add(linear(patches, weights.patch_w, weights.patch_b), broadcast(code, {tokens, d}));

  EncodedMotion out;
  for (const auto& blk : weights.blocks) {
    const Var q = matmul(x, blk.wq);
    const Var k = matmul(x, blk.wk);
    const Var v = matmul(x, blk.wv);
    std::vector<Var> head_out;
    Tensor attn_mean({tokens, tokens});
    for (std::size_t h = 0; h < config.heads; ++h) {
      const Var qh = slice(q, 1, h * dh, (h + 1) * dh);
      const Var kh = slice(k, 1, h * dh, (h + 1) * dh);
      const Var vh = slice(v, 1, h * dh, (h + 1) * dh);
      const Var attn = softmax_lastdim(scalar_mul(matmul(qh, transpose(kh)), scale));
      const auto av = attn.value().values();
      for (std::size_t i = 0; i < av.size(); ++i) attn_mean[i] += av[i] / config.heads;
      head_out.push_back(matmul(attn, vh));
    }
    out.attention.push_back(std::move(attn_mean));
    x = add(x, linear(concat(head_out, 1), blk.wo, blk.bo));
    x = add(x, linear(relu(linear(x, blk.w1, blk.b1)), blk.w2, blk.b2));
  }
  out.feature = scalar_mul(sum_axis(x, 0), 1.0 / static_cast<double>(tokens));
  return out;
}

MotionFeatureSet encode_sequence(const FrameSequence& sequence,
                                 const EncoderWeights<Var>& weights,
                                 const EncoderConfig& config, bool use_differences) {
  MotionFeatureSet set;
  set.attention_maps.resize(weights.blocks.size());
  auto take = [&](const Tensor& image, std::size_t index) {
    EncodedMotion enc = encode_motion(image, index, weights, config);
    set.features.push_back(enc.feature);
    for (std::size_t b = 0; b < enc.attention.size(); ++b) {
      set.attention_maps[b].push_back(std::move(enc.attention[b]));
    }
  };
  if (use_differences) {
    for (const MotionInput& in : pair_frames(sequence)) take(in.difference, in.pair_index);
  } else {
    sequence.validate();
    for (std::size_t i = 2; i <= sequence.length(); ++i) take(sequence.frame(i), i);
  }
  return set;
}

}  // namespace atmgcn
