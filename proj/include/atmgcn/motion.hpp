#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "atmgcn/autodiff.hpp"
#include "atmgcn/tensor.hpp"

namespace atmgcn {

// A clip of L frames (each C x H x W, pixels in [0, 1]). Frame indices are
// 1-based throughout; the onset is always frame 1.
struct FrameSequence {
  std::vector<Tensor> frames;
  std::size_t onset_index = 1;
  std::size_t apex_index = 2;
  std::string subject_id;
  std::size_t label = 0;

  std::size_t length() const noexcept { return frames.size(); }
  const Tensor& frame(std::size_t index) const { return frames.at(index - 1); }
  // Throws InputError when the clip violates L >= 2, onset = 1 or apex range.
  void validate() const;
};

struct MotionInput {
  std::size_t pair_index = 2;  // i in [2, L]
  Tensor difference;           // frames[i] - frames[onset]
  bool is_apex = false;
};

// Pairs every frame i in [2, L] with the onset frame.
std::vector<MotionInput> pair_frames(const FrameSequence& sequence);

// Sinusoidal code: [2k] = sin(i / 10000^(2k/dim)), [2k+1] = cos(...).
Tensor temporal_encoding(std::size_t index, std::size_t dim);

struct EncoderConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch_size = 8;
  std::size_t motion_dim = 64;  // N_m; also the temporal code width
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  std::size_t blocks = 2;

  std::size_t tokens() const { return (height / patch_size) * (width / patch_size); }
  std::size_t patch_features() const { return channels * patch_size * patch_size; }
  // Throws ConfigError on indivisible sizes, odd motion_dim, etc.
  void validate() const;
};

template <class T>
struct AttentionBlockWeights {
  T wq, wk, wv, wo, bo;  // multi-head self-attention
  T w1, b1, w2, b2;      // two-layer MLP
};

template <class T>
struct EncoderWeights {
  T patch_w, patch_b;
  std::vector<AttentionBlockWeights<T>> blocks;

  template <class Self>
  static auto fields_of(Self& self) {
    using Ptr = decltype(&self.patch_w);
    std::vector<std::pair<std::string, Ptr>> out{{"encoder.patch_w", &self.patch_w},
                                                 {"encoder.patch_b", &self.patch_b}};
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      auto& blk = self.blocks[b];
      const std::string p = "encoder.block" + std::to_string(b) + ".";
      out.insert(out.end(), {{p + "wq", &blk.wq}, {p + "wk", &blk.wk}, {p + "wv", &blk.wv},
                             {p + "wo", &blk.wo}, {p + "bo", &blk.bo}, {p + "w1", &blk.w1},
                             {p + "b1", &blk.b1}, {p + "w2", &blk.w2}, {p + "b2", &blk.b2}});
    }
    return out;
  }
};

using EncoderParams = EncoderWeights<Tensor>;

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng);

// Splits a C x H x W image into non-overlapping p x p patches, one row per
// patch (row-major over the patch grid), features ordered (c, dy, dx).
Tensor patchify(const Tensor& image, std::size_t patch_size);

struct EncodedMotion {
  Var feature;                     // length N_m
  std::vector<Tensor> attention;   // per block: tokens x tokens, head-averaged
};

// Encodes one input image (a frame difference, or a raw frame for the
// no-motion ablation) tagged with its temporal index.
EncodedMotion encode_motion(const Tensor& input, std::size_t index,
                            const EncoderWeights<Var>& weights, const EncoderConfig& config);

struct MotionFeatureSet {
  std::vector<Var> features;                        // m_2 .. m_L
  std::vector<std::vector<Tensor>> attention_maps;  // [block][pair]
};

// Encodes all L - 1 pairs. With use_differences = false the encoder sees
// frames f_2..f_L directly.
MotionFeatureSet encode_sequence(const FrameSequence& sequence,
                                 const EncoderWeights<Var>& weights,
                                 const EncoderConfig& config, bool use_differences = true);

}  // namespace atmgcn
