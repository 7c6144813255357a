#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "atmgcn/motion.hpp"
#include "atmgcn/tensor.hpp"

namespace atmgcn {

// ---------------------------------------------------------------------------
// Images: binary PGM (P5, 1 channel) and PPM (P6, 3 channels). Tensors are
// C x H x W with values in [0, 1].

Tensor read_image(const std::filesystem::path& path);
// Writes P5 for 1 channel, P6 for 3; values are clamped and rounded to 8 bit.
void write_image(const std::filesystem::path& path, const Tensor& image);

// Frames live at <clip_dir>/frame_%04d.{pgm,ppm}, indexed from 1.
std::filesystem::path frame_path(const std::filesystem::path& clip_dir, std::size_t index);

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
  std::string clip_dir;  // relative to the manifest's directory, or absolute
  std::string subject_id;
  std::size_t onset_index = 1;
  std::size_t apex_index = 2;
  std::size_t num_frames = 2;
  std::size_t label = 0;
  double fps = 30.0;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the clip paths are relative to
  std::vector<ManifestRow> rows;

  std::filesystem::path clip_path(const ManifestRow& row) const;
};

inline constexpr const char* kManifestColumns[] = {"clip_dir",   "subject_id", "onset_index",
                                                   "apex_index", "num_frames", "label",
                                                   "fps"};

// Throws FormatError (missing column, empty file, malformed number) or
// ValidationError (row breaks 1 = onset < apex <= num_frames, fps > 0).
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct RawClip {
  std::vector<Tensor> frames;
  std::size_t apex_index = 2;
  double fps = 30.0;
  std::string subject_id;
  std::size_t label = 0;
};

// Reads every frame of one row; a missing file raises InputError naming it.
RawClip load_clip(const DatasetManifest& manifest, std::size_t row);

// ---------------------------------------------------------------------------
// Preprocessing

// Pixels are snapped to multiples of 2^-16 so that onset differencing is
// exactly invertible.
inline constexpr double kPixelGrid = 65536.0;
double snap_pixel(double v);

struct PreprocessOptions {
  std::size_t target_length = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  double downsample_hz = 0.0;  // <= 0 disables temporal downsampling
};

// Stride used for temporal downsampling (1 when disabled or fps <= hz).
std::size_t downsample_stride(double fps, double hz);
// New 1-based apex after resampling `length` frames to `target_length`.
std::size_t remap_apex(std::size_t apex, std::size_t length, std::size_t target_length);

// Bilinear resize (half-pixel centres) of the window [y0, y0+h) x [x0, x0+w)
// of a C x H x W image to out_h x out_w.
Tensor resize_bilinear(const Tensor& image, double y0, double x0, double h, double w,
                       std::size_t out_h, std::size_t out_w);

FrameSequence preprocess(const RawClip& clip, const PreprocessOptions& options);

std::vector<FrameSequence> load_dataset(const DatasetManifest& manifest,
                                        const PreprocessOptions& options);

// ---------------------------------------------------------------------------
// Augmentation: one crop window and one jitter draw per clip.

struct AugmentOptions {
  bool crop = false;
  bool jitter = false;
  double min_crop_fraction = 0.875;
  double brightness = 0.1;  // offset drawn from [-b, b]
  double contrast = 0.1;    // gain drawn from [1 - c, 1 + c]
};

FrameSequence augment(const FrameSequence& sequence, std::mt19937_64& rng,
                      const AugmentOptions& options);

// ---------------------------------------------------------------------------
// Synthetic micro-expression clips

struct SyntheticSpec {
  std::size_t num_subjects = 6;
  std::size_t clips_per_subject = 12;
  std::size_t num_classes = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t clip_length = 16;
  double amplitude = 0.3;  // peak intensity of the moving feature
  double noise = 0.02;     // per-pixel Gaussian noise std
  double fps = 30.0;
  std::uint64_t seed = 7;

  void validate() const;
};

// Geometry shared by all subjects: class k moves the feature centred at
// centers[k] along directions[k] by up to `shift` pixels at the apex.
struct SyntheticLayout {
  std::vector<std::pair<double, double>> centers;     // (y, x)
  std::vector<std::pair<double, double>> directions;  // unit (dy, dx)
  double sigma = 0.0;
  double shift = 0.0;
};

SyntheticLayout synthetic_layout(const SyntheticSpec& spec);

// Writes frames plus manifest.csv under out_dir and returns the manifest.
DatasetManifest synthesize(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace atmgcn
