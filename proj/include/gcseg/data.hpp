#pragma once

// Synthetic binary segmentation data, binary PGM IO, the dataset manifest and
// on-the-fly augmentation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"
#include "gcseg/parallel.hpp"

namespace gcseg {

// 8-bit grayscale raster.
struct Gray8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Gray8&, const Gray8&) = default;
};

struct Sample {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> image;  // [0,1], row-major
  Labeling mask;
};

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

inline std::string encode_pgm(const Gray8& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline Gray8 decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw FormatError(std::string("PGM ") + what + " too large", static_cast<long long>(start));
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PGM header: expected ") + what, static_cast<long long>(pos));
    return static_cast<int>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (missing P5 magic)", 0);
  pos = 2;
  Gray8 img;
  img.width = read_int("width");
  img.height = read_int("height");
  skip_space();
  const std::size_t maxval_at = pos;
  const int maxval = read_int("maxval");
  if (maxval != 255)
    throw FormatError("PGM maxval must be 255, got " + std::to_string(maxval), static_cast<long long>(maxval_at));
  if (img.width <= 0 || img.height <= 0) throw FormatError("PGM dimensions must be positive", static_cast<long long>(maxval_at));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("PGM header must end with a single whitespace", static_cast<long long>(pos));
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() - pos < n)
    throw FormatError("PGM raster truncated: need " + std::to_string(n) + " bytes", static_cast<long long>(bytes.size()));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path);
}

inline Gray8 load_pgm(const std::string& path) { return decode_pgm(read_file(path)); }
inline void save_pgm(const std::string& path, const Gray8& img) { write_file(path, encode_pgm(img)); }

inline Gray8 to_gray8(const std::vector<float>& image, int h, int w) {
  Gray8 g{h, w, std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i)
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
  return g;
}

inline std::vector<float> to_unit(const Gray8& g) {
  std::vector<float> out(g.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(g.pixels[i]) / 255.0f;
  return out;
}

// Mask files store {0, 255}; anything >= 128 reads as foreground.
inline Labeling mask_from_gray8(const Gray8& g) {
  Labeling l(g.height, g.width, 0);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = g.pixels[i] >= 128 ? 1 : 0;
  return l;
}

inline Gray8 mask_to_gray8(const Labeling& l) {
  Gray8 g{l.height, l.width, std::vector<std::uint8_t>(l.size())};
  for (std::size_t i = 0; i < l.size(); ++i) g.pixels[i] = l[i] ? 255 : 0;
  return g;
}

inline void save_mask(const std::string& path, const Labeling& l) { save_pgm(path, mask_to_gray8(l)); }
inline Labeling load_mask(const std::string& path) { return mask_from_gray8(load_pgm(path)); }

inline Sample load_sample(const std::string& id, const std::string& image_path, const std::string& mask_path) {
  const Gray8 img = load_pgm(image_path);
  Sample s;
  s.id = id;
  s.height = img.height;
  s.width = img.width;
  s.image = to_unit(img);
  s.mask = load_mask(mask_path);
  if (s.mask.height != s.height || s.mask.width != s.width)
    throw FormatError("mask " + mask_path + " does not match image " + image_path);
  return s;
}

// ---------------------------------------------------------------------------
// synthetic generation

enum class ObjectKind { ellipse, blob };

struct SyntheticSpec {
  int count = 200;
  int height = 32;
  int width = 32;
  std::vector<ObjectKind> kinds{ObjectKind::ellipse, ObjectKind::blob};
  double fg_mean = 0.8;  // object intensity at overlap 0
  double bg_mean = 0.2;  // background intensity at overlap 0
  double fg_std = 0.05;
  double bg_std = 0.05;
  double overlap = 0.0;  // 0 = separable by a threshold, 1 = identical means
  double texture_std = 0.12;  // extra object noise, scaled by overlap
  std::uint64_t seed = 1;
  double train_frac = 0.70;
  double val_frac = 0.15;

  void validate() const {
    if (count < 0) throw InvalidArgument("data.count must be >= 0");
    if (height <= 0 || width <= 0) throw InvalidArgument("data dimensions must be positive");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw InvalidArgument("data.overlap must lie in [0,1]");
    if (kinds.empty()) throw InvalidArgument("data.kinds must name at least one object kind");
    if (fg_std < 0 || bg_std < 0 || texture_std < 0) throw InvalidArgument("noise stds must be >= 0");
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) throw InvalidArgument("bad split fractions");
  }
};

namespace detail {

inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline Labeling draw_shape(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const int H = spec.height, W = spec.width;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double span = std::min(H, W);
  const ObjectKind kind = spec.kinds[static_cast<std::size_t>(u(rng) * spec.kinds.size()) % spec.kinds.size()];
  const double cy = H * (0.3 + 0.4 * u(rng)), cx = W * (0.3 + 0.4 * u(rng));
  Labeling m(H, W, 0);
  if (kind == ObjectKind::ellipse) {
    const double a = span * (0.12 + 0.2 * u(rng)), b = span * (0.12 + 0.2 * u(rng));
    const double th = std::numbers::pi * u(rng);
    const double c = std::cos(th), s = std::sin(th);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double r1 = (c * dx + s * dy) / a, r2 = (-s * dx + c * dy) / b;
        m[static_cast<std::size_t>(y) * W + x] = r1 * r1 + r2 * r2 <= 1.0;
      }
  } else {
    const double radius = span * (0.15 + 0.15 * u(rng));
    double amp[3], phase[3];
    for (int k = 0; k < 3; ++k) {
      amp[k] = 0.25 * u(rng);
      phase[k] = 2.0 * std::numbers::pi * u(rng);
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double th = std::atan2(dy, dx);
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * th + phase[k]);
        m[static_cast<std::size_t>(y) * W + x] = std::hypot(dy, dx) <= radius * r;
      }
  }
  return m;
}

}  // namespace detail

// Draws sample `index` of the dataset; depends only on (spec, index).
inline Sample synthesize(const SyntheticSpec& spec, std::uint64_t index) {
  auto rng = detail::sample_rng(spec.seed, index);
  Labeling mask;
  do {
    mask = detail::draw_shape(spec, rng);
  } while (mask.foreground_count() == 0 || mask.foreground_count() == mask.size());

  const double mid = 0.5 * (spec.fg_mean + spec.bg_mean);
  const double fg_mu = spec.fg_mean + spec.overlap * (mid - spec.fg_mean);
  const double bg_mu = spec.bg_mean + spec.overlap * (mid - spec.bg_mean);
  const double fg_sd = std::hypot(spec.fg_std, spec.overlap * spec.texture_std);
  std::normal_distribution<double> noise(0.0, 1.0);

  Sample s;
  s.id = "s" + std::to_string(index);
  s.height = spec.height;
  s.width = spec.width;
  s.image.resize(mask.size());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double v = mask[p] ? fg_mu + fg_sd * noise(rng) : bg_mu + spec.bg_std * noise(rng);
    // quantise exactly as the PGM file will
    s.image[p] = static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
  }
  s.mask = std::move(mask);
  return s;
}

inline std::string split_of(const SyntheticSpec& spec, int index) {
  const int n_train = static_cast<int>(std::lround(spec.train_frac * spec.count));
  const int n_val = static_cast<int>(std::lround(spec.val_frac * spec.count));
  if (index < n_train) return "train";
  if (index < n_train + n_val) return "val";
  return "test";
}

struct ManifestEntry {
  std::string id, image_path, mask_path, split;
};

inline std::vector<ManifestEntry> generate(const SyntheticSpec& spec, const std::string& out_dir, int threads = 0) {
  spec.validate();
  threads = resolve_threads(threads);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (!fs::is_directory(fs::path(out_dir) / "images") || !fs::is_directory(fs::path(out_dir) / "masks"))
    throw IoError("cannot create output directory " + out_dir);

  std::vector<Sample> samples(static_cast<std::size_t>(spec.count));
  parallel_for(samples.size(), threads,
               [&](std::size_t i) { samples[i] = synthesize(spec, static_cast<std::uint64_t>(i)); });
  std::vector<ManifestEntry> entries;
  std::string csv = "id,image_path,mask_path,split\n";
  for (int i = 0; i < spec.count; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    ManifestEntry e{s.id, "images/" + s.id + ".pgm", "masks/" + s.id + ".pgm", split_of(spec, i)};
    save_pgm((fs::path(out_dir) / e.image_path).string(), to_gray8(s.image, s.height, s.width));
    save_mask((fs::path(out_dir) / e.mask_path).string(), s.mask);
    csv += e.id + "," + e.image_path + "," + e.mask_path + "," + e.split + "\n";
    entries.push_back(std::move(e));
  }
  write_file((fs::path(out_dir) / "manifest.csv").string(), csv);
  return entries;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.csv").string();
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != "id,image_path,mask_path,split")
    throw FormatError("manifest " + path + " has an unexpected header");
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cols.push_back(c);
    if (cols.size() != 4) throw FormatError("manifest row must have 4 columns: " + line);
    out.push_back({cols[0], cols[1], cols[2], cols[3]});
  }
  return out;
}

// Loads all samples of one split ("" for all) in manifest order.
inline std::vector<Sample> load_split(const std::string& dir, const std::string& split) {
  std::vector<Sample> out;
  for (const auto& e : read_manifest(dir)) {
    if (!split.empty() && e.split != split) continue;
    out.push_back(load_sample(e.id, (std::filesystem::path(dir) / e.image_path).string(),
                              (std::filesystem::path(dir) / e.mask_path).string()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// augmentation

namespace augment_ops {

inline void flip_horizontal(Sample& s) {
  for (int y = 0; y < s.height; ++y) {
    auto row = s.image.begin() + static_cast<std::ptrdiff_t>(y) * s.width;
    std::reverse(row, row + s.width);
    auto mrow = s.mask.labels.begin() + static_cast<std::ptrdiff_t>(y) * s.width;
    std::reverse(mrow, mrow + s.width);
  }
}

inline void flip_vertical(Sample& s) {
  for (int y = 0; y < s.height / 2; ++y)
    for (int x = 0; x < s.width; ++x) {
      const std::size_t a = static_cast<std::size_t>(y) * s.width + x;
      const std::size_t b = static_cast<std::size_t>(s.height - 1 - y) * s.width + x;
      std::swap(s.image[a], s.image[b]);
      std::swap(s.mask.labels[a], s.mask.labels[b]);
    }
}

// Rotation about the image centre; bilinear for the image, nearest for the
// mask, zero fill outside.
inline void rotate(Sample& s, double degrees) {
  if (degrees == 0.0) return;
  const int H = s.height, W = s.width;
  const double th = degrees * std::numbers::pi / 180.0, c = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * (H - 1), cx = 0.5 * (W - 1);
  std::vector<float> img(s.image.size(), 0.0f);
  Labeling mask(H, W, 0);
  auto px = [&](int y, int x) -> float {
    return (y < 0 || x < 0 || y >= H || x >= W) ? 0.0f : s.image[static_cast<std::size_t>(y) * W + x];
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sy = c * (y - cy) - sn * (x - cx) + cy;
      const double sx = sn * (y - cy) + c * (x - cx) + cx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                       fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      img[static_cast<std::size_t>(y) * W + x] = static_cast<float>(v);
      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && nx >= 0 && ny < H && nx < W) mask[static_cast<std::size_t>(y) * W + x] = s.mask.at(ny, nx);
    }
  s.image = std::move(img);
  s.mask = std::move(mask);
}

// 3x3 box blur mixed with the original: amount > 0 blurs, amount < 0 sharpens.
inline void blur_sharpen(Sample& s, double amount) {
  const int H = s.height, W = s.width;
  std::vector<float> out(s.image.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          acc += s.image[static_cast<std::size_t>(yy) * W + xx];
          ++n;
        }
      const double orig = s.image[static_cast<std::size_t>(y) * W + x];
      out[static_cast<std::size_t>(y) * W + x] =
          static_cast<float>(std::clamp(orig + amount * (acc / n - orig), 0.0, 1.0));
    }
  s.image = std::move(out);
}

inline void salt_pepper(Sample& s, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (float& v : s.image) {
    const double r = u(rng);
    if (r < 0.5 * rate) v = 0.0f;
    else if (r < rate) v = 1.0f;
  }
}

inline void speckle(Sample& s, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sd);
  for (float& v : s.image) v = static_cast<float>(std::clamp(v * (1.0 + n(rng)), 0.0, 1.0));
}

}  // namespace augment_ops

struct AugmentOptions {
  double p_flip_h = 0.5;
  double p_flip_v = 0.5;
  double p_rotate = 0.5;
  double max_rotation_deg = 29.0;
  double p_blur_sharpen = 0.3;
  double p_salt_pepper = 0.2;
  double max_salt_pepper_rate = 0.02;
  double p_speckle = 0.2;
  double speckle_std = 0.05;

  static AugmentOptions none() { return {0, 0, 0, 29.0, 0, 0, 0.02, 0, 0.05}; }
};

// Applies a random subset of augmentations. Draws that would leave the mask
// with a single class are discarded and redrawn; the input is returned after
// repeated failures.
inline Sample augment(const Sample& in, std::mt19937_64& rng, const AugmentOptions& opt = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int attempt = 0; attempt < 8; ++attempt) {
    Sample s = in;
    if (u(rng) < opt.p_flip_h) augment_ops::flip_horizontal(s);
    if (u(rng) < opt.p_flip_v) augment_ops::flip_vertical(s);
    if (u(rng) < opt.p_rotate) augment_ops::rotate(s, opt.max_rotation_deg * (2.0 * u(rng) - 1.0));
    if (u(rng) < opt.p_blur_sharpen) augment_ops::blur_sharpen(s, 2.0 * u(rng) - 1.0);
    if (u(rng) < opt.p_salt_pepper) augment_ops::salt_pepper(s, opt.max_salt_pepper_rate * u(rng), rng);
    if (u(rng) < opt.p_speckle) augment_ops::speckle(s, opt.speckle_std, rng);
    const std::size_t fg = s.mask.foreground_count();
    if (fg > 0 && fg < s.mask.size()) return s;
  }
  return in;
}

}  // namespace gcseg
