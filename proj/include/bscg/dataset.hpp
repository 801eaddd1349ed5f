#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "bscg/image.hpp"
#include "bscg/rng.hpp"

namespace bscg {

template <class T>
struct Sample {
  Tensor4<T> image;  // [1,3,S,S] in [0,1]
  Tensor4<T> mask;   // [1,1,S,S] binary
  std::string stem;
};

namespace detail {

inline std::vector<std::filesystem::path> list_pngs(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset: '" + dir + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Loads image/mask pairs matched by filename stem, sorted lexicographically.
// Images resize bilinearly, masks binarize (v/255 > 0.5) then resize nearest,
// so masks stay exactly binary. All per-file problems are reported together.
template <class T>
std::vector<Sample<T>> load_dataset(const std::string& image_dir,
                                    const std::string& mask_dir, int size) {
  require(size > 0, "dataset: target size must be positive");
  namespace fs = std::filesystem;
  auto images = detail::list_pngs(image_dir);
  if (images.empty()) throw DataError("dataset: no samples (*.png) in '" + image_dir + "'");

  std::vector<Sample<T>> out;
  std::string problems;
  for (const auto& ipath : images) {
    const std::string stem = ipath.stem().string();
    const fs::path mpath = fs::path(mask_dir) / (stem + ".png");
    if (!fs::exists(mpath)) {
      problems += "  missing mask for '" + stem + "'\n";
      continue;
    }
    try {
      Sample<T> s;
      s.stem = stem;
      s.image = resize_bilinear(image_to_tensor<T>(read_png(ipath.string())), size, size);
      s.mask = resize_nearest(mask_to_tensor<T>(read_png(mpath.string())), size, size);
      out.push_back(std::move(s));
    } catch (const DataError& e) {
      problems += "  " + std::string(e.what()) + "\n";
    }
  }
  if (!problems.empty())
    throw DataError("dataset: errors loading from '" + image_dir + "':\n" + problems);
  return out;
}

// ------------------------------------------------------------- synthesis ---

struct SynthSpec {
  int count = 8;
  int size = 64;
  unsigned long long seed = 1;
  double bg_amplitude = 0.2;  // background texture contrast
  std::string out_dir;        // receives images/ and masks/
};

namespace detail {

// One foreground shape as a point-membership test over pixel centers.
struct Shape {
  // 0 ellipse, 1 rectangle, 2 rotated bar, 3 blob polygon
  int kind = 0;
  double cx = 0, cy = 0, angle = 0;
  double a = 1, b = 1;                 // semi-axes / half-extents
  std::vector<double> radii;           // blob polygon: radius per vertex

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ca * dx + sa * dy;
    const double v = -sa * dx + ca * dy;
    switch (kind) {
      case 0: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      case 1:
      case 2: return std::abs(u) <= a && std::abs(v) <= b;
      default: {
        const double r = std::hypot(u, v);
        if (r < 1e-9) return true;
        double theta = std::atan2(v, u);
        if (theta < 0) theta += 2.0 * 3.14159265358979323846;
        const size_t nv = radii.size();
        const double seg = 2.0 * 3.14159265358979323846 / double(nv);
        const size_t i0 = std::min(size_t(theta / seg), nv - 1);
        const size_t i1 = (i0 + 1) % nv;
        const double f = theta / seg - double(i0);
        const double rmax = radii[i0] + f * (radii[i1] - radii[i0]);
        return r <= rmax;
      }
    }
  }
};

inline Shape random_shape(RandomSource& rng, int size) {
  Shape s;
  s.kind = rng.uniform_int(0, 3);
  s.cx = rng.uniform(0.25, 0.75) * size;
  s.cy = rng.uniform(0.25, 0.75) * size;
  s.angle = rng.uniform(0.0, 3.14159265358979323846);
  const double lo = 0.08 * size, hi = 0.35 * size;
  switch (s.kind) {
    case 0:
    case 1:
      s.a = rng.uniform(lo, hi);
      s.b = rng.uniform(lo, hi);
      break;
    case 2:  // bar: long and thin
      s.a = rng.uniform(0.25 * size, 0.45 * size);
      s.b = rng.uniform(0.03 * size, 0.08 * size);
      break;
    default: {
      const int nv = rng.uniform_int(5, 9);
      const double base = rng.uniform(lo, hi);
      for (int i = 0; i < nv; ++i) s.radii.push_back(base * rng.uniform(0.6, 1.3));
      break;
    }
  }
  return s;
}

}  // namespace detail

// Deterministic shape-on-textured-background dataset. Every mask's foreground
// ratio lands in [0.02, 0.6] by rejection; the mask is exactly the rendered
// shape's pixel-center coverage. Writes out_dir/images/*.png and
// out_dir/masks/*.png with matching stems.
inline void synth_generate(const SynthSpec& spec) {
  require(spec.count > 0 && spec.size > 0, "synth: count and size must be positive");
  require(!spec.out_dir.empty(), "synth: output directory required");
  namespace fs = std::filesystem;
  const fs::path root(spec.out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  const int S = spec.size;
  for (int idx = 0; idx < spec.count; ++idx) {
    RandomSource rng(RandomSource(spec.seed).derive(0x53594e54ull + idx));

    // Low-frequency textured background in a random base color.
    double base[3], wave[3];
    for (int c = 0; c < 3; ++c) base[c] = rng.uniform(0.2, 0.8);
    for (int c = 0; c < 3; ++c) wave[c] = rng.uniform(0.5, 2.0);
    const double phx = rng.uniform(0.0, 6.28), phy = rng.uniform(0.0, 6.28);

    // Foreground shape: rejection-sample until the area ratio is in range.
    detail::Shape shape;
    Tensor4<unsigned char> cover(1, 1, S, S);
    double ratio = 0.0;
    do {
      shape = detail::random_shape(rng, S);
      int fg = 0;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const bool in = shape.contains(x + 0.5, y + 0.5);
          cover.at(0, 0, y, x) = in ? 1 : 0;
          fg += in ? 1 : 0;
        }
      ratio = double(fg) / double(S * S);
    } while (ratio < 0.02 || ratio > 0.6);

    double fg_color[3];
    for (int c = 0; c < 3; ++c) {
      // Push the foreground color away from the background base.
      const double away = base[c] > 0.5 ? rng.uniform(0.05, 0.35) : rng.uniform(0.65, 0.95);
      fg_color[c] = away;
    }

    ImageU8 img;
    img.h = S;
    img.w = S;
    img.channels = 3;
    img.data.resize(size_t(S) * S * 3);
    ImageU8 msk;
    msk.h = S;
    msk.w = S;
    msk.channels = 1;
    msk.data.resize(size_t(S) * S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const bool in = cover.at(0, 0, y, x) != 0;
        for (int c = 0; c < 3; ++c) {
          double v;
          if (in) {
            v = fg_color[c];
          } else {
            const double tex = 0.5 * (std::sin(wave[c] * 6.28 * x / S + phx) +
                                      std::cos(wave[c] * 6.28 * y / S + phy));
            v = base[c] + spec.bg_amplitude * 0.5 * tex;
          }
          img.at(y, x, c) = (unsigned char)std::lround(255.0 * std::clamp(v, 0.0, 1.0));
        }
        msk.data[size_t(y) * S + x] = in ? 255 : 0;
      }

    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%04d", idx);
    write_png((root / "images" / (std::string(stem) + ".png")).string(), img);
    write_png((root / "masks" / (std::string(stem) + ".png")).string(), msk);
  }
}

// ----------------------------------------------------------- augmentation ---

struct AugmentSwitches {
  bool rot90 = true;
  bool hflip = true;
  bool vflip = true;
  bool blur = true;  // image only, sigma uniform in [0, 1.5]
};

// Applies the enabled transforms jointly to image and mask (blur never
// touches the mask). Draws happen only for enabled switches, in the fixed
// order rotation, hflip, vflip, blur.
template <class T>
Sample<T> augment(const Sample<T>& s, RandomSource& rng,
                  const AugmentSwitches& sw = AugmentSwitches{}) {
  Sample<T> out = s;
  if (sw.rot90) {
    const int k = rng.uniform_int(0, 3);
    if (k) {
      out.image = rotate90(out.image, k);
      out.mask = rotate90(out.mask, k);
    }
  }
  if (sw.hflip && rng.bernoulli(0.5)) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  if (sw.vflip && rng.bernoulli(0.5)) {
    out.image = flip_vertical(out.image);
    out.mask = flip_vertical(out.mask);
  }
  if (sw.blur) {
    const double sigma = rng.uniform(0.0, 1.5);
    out.image = gaussian_blur(out.image, sigma);
  }
  return out;
}

}  // namespace bscg
