#include "atmgcn/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "atmgcn/errors.hpp"

namespace atmgcn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Images

namespace {

std::string next_token(std::istream& is, const fs::path& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw FormatError("image " + path.string() + ": truncated header");
  return tok;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError(what + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

}  // namespace

Tensor read_image(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open frame file " + path.string());
  const std::string magic = next_token(is, path);
  std::size_t channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError("image " + path.string() + ": unsupported magic '" + magic +
                      "' (expected P5 or P6)");
  }
  const std::string where = "image " + path.string();
  const std::size_t w = parse_size(next_token(is, path), where);
  const std::size_t h = parse_size(next_token(is, path), where);
  const std::size_t maxval = parse_size(next_token(is, path), where);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError(where + ": invalid dimensions or maxval");
  }
  // next_token consumed exactly one whitespace byte after maxval.
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * channels * bytes_per);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError(where + ": truncated pixel data");
  }
  Tensor img({channels, h, w});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t k = (y * w + x) * channels + c;
        const unsigned v = bytes_per == 2 ? (raw[2 * k] << 8) | raw[2 * k + 1] : raw[k];
        img[(c * h + y) * w + x] = std::min(1.0, v * scale);
      }
  return img;
}

void write_image(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("write_image: expected 1 x H x W or 3 x H x W, got " +
                         shape_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw InputError("write to " + path.string() + " failed");
}

fs::path frame_path(const fs::path& clip_dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04zu", index);
  const fs::path pgm = clip_dir / (std::string(name) + ".pgm");
  if (fs::exists(pgm)) return pgm;
  const fs::path ppm = clip_dir / (std::string(name) + ".ppm");
  if (fs::exists(ppm)) return ppm;
  return pgm;
}

// ---------------------------------------------------------------------------
// Manifest

fs::path DatasetManifest::clip_path(const ManifestRow& row) const {
  const fs::path p(row.clip_dir);
  return p.is_absolute() ? p : root / p;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && std::isspace(static_cast<unsigned char>(cell[b]))) ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError(what + ": expected a number, got '" + s + "'");
  }
  return v;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw FormatError("manifest " + path.string() + ": empty file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* name : kManifestColumns) {
    if (!column.contains(name)) {
      throw FormatError("manifest " + path.string() + ": missing column '" + name + "'");
    }
  }
  DatasetManifest m;
  m.root = path.parent_path();
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("manifest " + path.string() + " line " + std::to_string(line_no) +
                        ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    }
    const std::string where = "manifest " + path.string() + " line " + std::to_string(line_no);
    auto cell = [&](const char* name) -> const std::string& { return cells[column[name]]; };
    ManifestRow row;
    row.clip_dir = cell("clip_dir");
    row.subject_id = cell("subject_id");
    row.onset_index = parse_size(cell("onset_index"), where + " onset_index");
    row.apex_index = parse_size(cell("apex_index"), where + " apex_index");
    row.num_frames = parse_size(cell("num_frames"), where + " num_frames");
    row.label = parse_size(cell("label"), where + " label");
    row.fps = parse_double(cell("fps"), where + " fps");
    if (row.clip_dir.empty() || row.subject_id.empty()) {
      throw ValidationError(where + ": clip_dir and subject_id must be non-empty");
    }
    if (row.onset_index != 1) {
      throw ValidationError(where + ": onset_index must be 1, got " +
                            std::to_string(row.onset_index));
    }
    if (row.apex_index <= row.onset_index || row.apex_index > row.num_frames) {
      throw ValidationError(where + ": apex_index " + std::to_string(row.apex_index) +
                            " must satisfy onset < apex <= num_frames (" +
                            std::to_string(row.num_frames) + ")");
    }
    if (!(row.fps > 0.0)) throw ValidationError(where + ": fps must be positive");
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ostringstream os;
  for (std::size_t i = 0; i < std::size(kManifestColumns); ++i) {
    os << (i ? "," : "") << kManifestColumns[i];
  }
  os << '\n';
  for (const ManifestRow& r : manifest.rows) {
    char fps[64];
    std::snprintf(fps, sizeof fps, "%.17g", r.fps);
    os << r.clip_dir << ',' << r.subject_id << ',' << r.onset_index << ',' << r.apex_index << ','
       << r.num_frames << ',' << r.label << ',' << fps << '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << os.str();
}

RawClip load_clip(const DatasetManifest& manifest, std::size_t row) {
  const ManifestRow& r = manifest.rows.at(row);
  const fs::path dir = manifest.clip_path(r);
  RawClip clip;
  clip.apex_index = r.apex_index;
  clip.fps = r.fps;
  clip.subject_id = r.subject_id;
  clip.label = r.label;
  for (std::size_t i = 1; i <= r.num_frames; ++i) {
    const fs::path p = frame_path(dir, i);
    if (!fs::exists(p)) throw InputError("missing frame file " + p.string());
    clip.frames.push_back(read_image(p));
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Preprocessing

double snap_pixel(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * kPixelGrid) / kPixelGrid;
}

std::size_t downsample_stride(double fps, double hz) {
  if (!(hz > 0.0) || fps <= hz) return 1;
  return static_cast<std::size_t>(std::ceil(fps / hz));
}

std::size_t remap_apex(std::size_t apex, std::size_t length, std::size_t target_length) {
  if (length < 2) return 2;
  const double scaled = static_cast<double>(apex - 1) * static_cast<double>(target_length - 1) /
                        static_cast<double>(length - 1);
  const std::size_t mapped = 1 + static_cast<std::size_t>(std::lround(scaled));
  return std::clamp<std::size_t>(mapped, 2, target_length);
}

Tensor resize_bilinear(const Tensor& image, double y0, double x0, double h, double w,
                       std::size_t out_h, std::size_t out_w) {
  const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  Tensor out({c, out_h, out_w});
  const double sy = h / static_cast<double>(out_h);
  const double sx = w / static_cast<double>(out_w);
  auto sample_axis = [](double pos, std::size_t n, std::size_t& lo, std::size_t& hi, double& t) {
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(std::floor(pos));
    hi = std::min(lo + 1, n - 1);
    t = pos - static_cast<double>(lo);
  };
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    std::size_t y_lo, y_hi;
    double ty;
    sample_axis(y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5, ih, y_lo, y_hi, ty);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      std::size_t x_lo, x_hi;
      double tx;
      sample_axis(x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5, iw, x_lo, x_hi, tx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = image.data() + ch * ih * iw;
        const double top = p[y_lo * iw + x_lo] * (1 - tx) + p[y_lo * iw + x_hi] * tx;
        const double bottom = p[y_hi * iw + x_lo] * (1 - tx) + p[y_hi * iw + x_hi] * tx;
        out[(ch * out_h + oy) * out_w + ox] = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

namespace {

Tensor convert_channels(const Tensor& img, std::size_t channels) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (c == channels) return img;
  Tensor out({channels, h, w});
  if (channels == 1) {
    for (std::size_t k = 0; k < h * w; ++k) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += img[ch * h * w + k];
      out[k] = s / static_cast<double>(c);
    }
  } else if (c == 1) {
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t k = 0; k < h * w; ++k) out[ch * h * w + k] = img[k];
  } else {
    throw ConfigError("preprocess: cannot convert " + std::to_string(c) + " channels to " +
                      std::to_string(channels));
  }
  return out;
}

Tensor finish_frame(Tensor img) {
  for (double& v : img.values()) v = snap_pixel(v);
  return img;
}

}  // namespace

FrameSequence preprocess(const RawClip& clip, const PreprocessOptions& options) {
  if (options.target_length < 3) {
    throw ConfigError("preprocess: target_length must be >= 3");
  }
  if (options.height == 0 || options.width == 0) {
    throw ConfigError("preprocess: target frame size must be positive");
  }
  const std::size_t stride = downsample_stride(clip.fps, options.downsample_hz);
  std::vector<const Tensor*> kept;
  for (std::size_t i = 0; i < clip.frames.size(); i += stride) kept.push_back(&clip.frames[i]);
  if (kept.size() < 2) {
    throw InputError("preprocess: clip has " + std::to_string(kept.size()) +
                     " frame(s) after downsampling; need at least 2");
  }
  const std::size_t length = kept.size();
  const std::size_t apex_down = std::clamp<std::size_t>(
      1 + static_cast<std::size_t>(std::lround(static_cast<double>(clip.apex_index - 1) /
                                               static_cast<double>(stride))),
      1, length);

  FrameSequence seq;
  seq.subject_id = clip.subject_id;
  seq.label = clip.label;
  seq.onset_index = 1;
  seq.apex_index = remap_apex(apex_down, length, options.target_length);
  for (std::size_t t = 1; t <= options.target_length; ++t) {
    const double pos = static_cast<double>(t - 1) * static_cast<double>(length - 1) /
                       static_cast<double>(options.target_length - 1);
    const std::size_t src = static_cast<std::size_t>(std::lround(pos));
    const Tensor& f = *kept[src];
    Tensor img = convert_channels(f, options.channels);
    if (img.dim(1) != options.height || img.dim(2) != options.width) {
      img = resize_bilinear(img, 0.0, 0.0, static_cast<double>(img.dim(1)),
                            static_cast<double>(img.dim(2)), options.height, options.width);
    }
    seq.frames.push_back(finish_frame(std::move(img)));
  }
  return seq;
}

std::vector<FrameSequence> load_dataset(const DatasetManifest& manifest,
                                        const PreprocessOptions& options) {
  std::vector<FrameSequence> out;
  out.reserve(manifest.rows.size());
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    out.push_back(preprocess(load_clip(manifest, i), options));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

FrameSequence augment(const FrameSequence& sequence, std::mt19937_64& rng,
                      const AugmentOptions& options) {
  if (!options.crop && !options.jitter) return sequence;
  FrameSequence out = sequence;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (options.crop) {
    const double min_frac = std::clamp(options.min_crop_fraction, 0.875, 1.0);
    const Tensor& f0 = sequence.frames.front();
    const double h = static_cast<double>(f0.dim(1)), w = static_cast<double>(f0.dim(2));
    const double ch = h * (min_frac + (1.0 - min_frac) * unit(rng));
    const double cw = w * (min_frac + (1.0 - min_frac) * unit(rng));
    const double y0 = (h - ch) * unit(rng);
    const double x0 = (w - cw) * unit(rng);
    for (Tensor& f : out.frames) {
      f = finish_frame(resize_bilinear(f, y0, x0, ch, cw, f.dim(1), f.dim(2)));
    }
  }
  if (options.jitter) {
    // Offset on the pixel grid so it cancels exactly in onset differences.
    const double offset =
        std::round((2.0 * unit(rng) - 1.0) * options.brightness * kPixelGrid) / kPixelGrid;
    const double gain = 1.0 + (2.0 * unit(rng) - 1.0) * options.contrast;
    for (Tensor& f : out.frames) {
      for (double& v : f.values()) v = snap_pixel((v - 0.5) * gain + 0.5 + offset);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (num_subjects < 1 || clips_per_subject < 1) {
    throw ValidationError("synthetic spec: need at least one subject and one clip");
  }
  if (num_classes < 2) throw ValidationError("synthetic spec: num_classes must be >= 2");
  if (height < 8 || width < 8) throw ValidationError("synthetic spec: frames must be >= 8x8");
  if (clip_length < 3) throw ValidationError("synthetic spec: clip_length must be >= 3");
  if (!(amplitude > noise)) {
    throw ValidationError("synthetic spec: amplitude (" + std::to_string(amplitude) +
                          ") must exceed noise (" + std::to_string(noise) + ")");
  }
  if (noise < 0.0) throw ValidationError("synthetic spec: noise must be >= 0");
  if (!(fps > 0.0)) throw ValidationError("synthetic spec: fps must be positive");
}

SyntheticLayout synthetic_layout(const SyntheticSpec& spec) {
  SyntheticLayout layout;
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const double c = static_cast<double>(spec.num_classes);
  layout.sigma = std::min(h, w) / 12.0;
  layout.shift = std::min(h, w) / 8.0;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / c - std::numbers::pi / 2;
    layout.centers.emplace_back(h / 2 + 0.28 * h * std::sin(theta), w / 2 + 0.28 * w * std::cos(theta));
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / c + std::numbers::pi / 4;
    layout.directions.emplace_back(std::sin(phi), std::cos(phi));
  }
  return layout;
}

namespace {

struct BasePattern {
  std::vector<double> amp, fy, fx, phase;
};

BasePattern subject_pattern(std::uint64_t seed, std::size_t subject) {
  std::seed_seq seq{seed, std::uint64_t{0x5u}, static_cast<std::uint64_t>(subject)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> amp(0.03, 0.06), freq(-2.0, 2.0),
      phase(0.0, 2 * std::numbers::pi);
  BasePattern p;
  for (int k = 0; k < 3; ++k) {
    p.amp.push_back(amp(rng));
    p.fy.push_back(freq(rng));
    p.fx.push_back(freq(rng));
    p.phase.push_back(phase(rng));
  }
  return p;
}

double gaussian(double y, double x, double cy, double cx, double sigma) {
  const double dy = y - cy, dx = x - cx;
  return std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
}

}  // namespace

DatasetManifest synthesize(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  const SyntheticLayout layout = synthetic_layout(spec);
  const std::size_t H = spec.height, W = spec.width, L = spec.clip_length;
  const double feature_height = 0.25;
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.root = out_dir;

  for (std::size_t s = 0; s < spec.num_subjects; ++s) {
    char subject[16];
    std::snprintf(subject, sizeof subject, "s%02zu", s + 1);
    const BasePattern base = subject_pattern(spec.seed, s);
    std::vector<double> face(H * W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.35;
        for (std::size_t k = 0; k < base.amp.size(); ++k) {
          v += base.amp[k] * std::sin(2 * std::numbers::pi *
                                          (base.fy[k] * y / static_cast<double>(H) +
                                           base.fx[k] * x / static_cast<double>(W)) +
                                      base.phase[k]);
        }
        face[y * W + x] = v;
      }

    for (std::size_t c = 0; c < spec.clips_per_subject; ++c) {
      std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(c)};
      std::mt19937_64 rng(seq);
      const std::size_t label = c % spec.num_classes;
      const std::size_t apex_lo = std::max<std::size_t>(2, L / 4);
      const std::size_t apex_hi = std::max(apex_lo, (3 * L) / 4);
      const std::size_t apex = std::uniform_int_distribution<std::size_t>(apex_lo, apex_hi)(rng);
      std::normal_distribution<double> noise(0.0, spec.noise);

      char clip_name[32];
      std::snprintf(clip_name, sizeof clip_name, "clip_%02zu", c);
      const std::string rel = std::string(subject) + "/" + clip_name;
      const fs::path dir = out_dir / rel;
      fs::create_directories(dir);

      for (std::size_t t = 1; t <= L; ++t) {
        double intensity;
        if (t <= apex) {
          intensity = static_cast<double>(t - 1) / static_cast<double>(apex - 1);
        } else {
          intensity = std::exp(-static_cast<double>(t - apex) / (0.25 * static_cast<double>(L)));
        }
        Tensor frame({1, H, W});
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            double v = face[y * W + x];
            for (std::size_t k = 0; k < spec.num_classes; ++k) {
              auto [cy, cx] = layout.centers[k];
              double height = feature_height;
              if (k == label) {
                cy += intensity * layout.shift * layout.directions[k].first;
                cx += intensity * layout.shift * layout.directions[k].second;
                height += spec.amplitude * intensity;
              }
              v += height * gaussian(static_cast<double>(y), static_cast<double>(x), cy, cx,
                                     layout.sigma);
            }
            if (spec.noise > 0.0) v += noise(rng);
            frame[y * W + x] = std::clamp(v, 0.0, 1.0);
          }
        write_image(frame_path(dir, t), frame);
      }
      ManifestRow row;
      row.clip_dir = rel;
      row.subject_id = subject;
      row.onset_index = 1;
      row.apex_index = apex;
      row.num_frames = L;
      row.label = label;
      row.fps = spec.fps;
      manifest.rows.push_back(std::move(row));
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace atmgcn
