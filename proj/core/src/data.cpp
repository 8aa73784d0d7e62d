#include "rfhit/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rfhit/raster.h"

namespace rfhit::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int32_t kRv = 1, kMyo = 2, kLv = 3;

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 4 || image.batch() != 1) {
    throw std::invalid_argument(std::string(what) + ": expected a (1, H, W, C) image, got " +
                                shape_string(image.shape()));
  }
}

// Ellipse membership on the half-pixel integer grid.
struct Ellipse {
  int64_t cy, cx, ry, rx;
  bool contains(int64_t py, int64_t px) const {
    const int64_t dy = py - cy, dx = px - cx;
    return dy * dy * rx * rx + dx * dx * ry * ry <= ry * ry * rx * rx;
  }
};

struct Phantom {
  Ellipse lv, myo, rv;
  double band[4];
};

// Geometry in half-pixel units of a 64x64 canvas, rescaled to the canvas.
Phantom phantom(const SyntheticSpec& spec, int64_t volume, int64_t slice) {
  Rng rng = Rng::derive(spec.seed, {static_cast<uint64_t>(volume), 0x9e0});
  const int64_t unit = std::min(spec.canvas.height, spec.canvas.width);
  auto px = [&](int64_t half_px_at_64) { return half_px_at_64 * unit / 64; };
  auto span = [&](int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
  };
  const int64_t cy = spec.canvas.height + px(2 * span(-3, 3));
  const int64_t cx = spec.canvas.width + px(2 * span(-1, 5));
  int64_t lv_ry = 2 * span(6, 9), lv_rx = 2 * span(6, 9);
  int64_t th = 2 * span(3, 4);
  int64_t rv_ry = 2 * span(9, 12), rv_rx = 2 * span(6, 8);
  double band[4] = {0.0, rng.uniform(0.62, 0.72), rng.uniform(0.36, 0.46), rng.uniform(0.9, 1.0)};

  // Base-to-apex shrink to 60%.
  const int64_t d = std::max<int64_t>(spec.slices_per_volume - 1, 1);
  auto shrink = [&](int64_t r) { return std::max<int64_t>(2, px(r * (10 * d - 4 * slice) / (10 * d))); };
  lv_ry = shrink(lv_ry);
  lv_rx = shrink(lv_rx);
  th = shrink(th);
  rv_ry = shrink(rv_ry);
  rv_rx = shrink(rv_rx);

  Phantom p;
  p.lv = {cy, cx, lv_ry, lv_rx};
  p.myo = {cy, cx, lv_ry + th, lv_rx + th};
  p.rv = {cy, cx - (lv_rx + th) - 2 * rv_rx / 5, rv_ry, rv_rx};
  std::copy(std::begin(band), std::end(band), p.band);
  return p;
}

int32_t phantom_class(const Phantom& p, int64_t classes, int64_t py, int64_t px) {
  if (p.lv.contains(py, px)) return static_cast<int32_t>(classes - 1);
  const bool in_myo = p.myo.contains(py, px);
  if (classes >= 3 && in_myo) return static_cast<int32_t>(classes - 2);
  if (classes >= 4 && !in_myo && p.rv.contains(py, px)) return kRv;
  return 0;
}

double band_of(const Phantom& p, int64_t classes, int32_t c) {
  if (c == 0) return p.band[0];
  return p.band[4 - classes + c];  // map onto RV / Myo / LV bands
}

double sample_bilinear(const Tensor& img, int64_t ch, double y, double x, double fill) {
  const int64_t h = img.height(), w = img.width();
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
  const double wy = y - fy, wx = x - fx;
  auto get = [&](int64_t yy, int64_t xx) {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
    return img.at(0, ch, yy, xx);
  };
  double v = 0.0;
  if (wy != 1.0 && wx != 1.0) v += (1 - wy) * (1 - wx) * get(y0, x0);
  if (wx != 0.0) v += (1 - wy) * wx * get(y0, x0 + 1);
  if (wy != 0.0) v += wy * (1 - wx) * get(y0 + 1, x0);
  if (wy != 0.0 && wx != 0.0) v += wy * wx * get(y0 + 1, x0 + 1);
  return v;
}

// Inverse map of an output pixel to continuous source coordinates.
struct InverseMap {
  double cy, cx, c, s, inv_scale;
  bool fh, fv;

  InverseMap(int64_t h, int64_t w, const GeoTransform& tf)
      : cy(0.5 * static_cast<double>(h - 1)),
        cx(0.5 * static_cast<double>(w - 1)),
        inv_scale(1.0 / tf.scale),
        fh(tf.flip_horizontal),
        fv(tf.flip_vertical) {
    const double q = tf.degrees / 90.0;
    if (q == std::round(q)) {
      const int k = ((static_cast<int>(std::round(q)) % 4) + 4) % 4;
      constexpr int cs[4] = {1, 0, -1, 0};
      constexpr int sn[4] = {0, 1, 0, -1};
      c = cs[k];
      s = sn[k];
    } else {
      const double a = tf.degrees * std::numbers::pi / 180.0;
      c = std::cos(a);
      s = std::sin(a);
    }
  }

  void operator()(int64_t y, int64_t x, double& sy, double& sx) const {
    const double yc = static_cast<double>(y) - cy, xc = static_cast<double>(x) - cx;
    // Rotate by -angle, undo scaling, then undo flips.
    double ry = (c * yc - s * xc) * inv_scale;
    double rx = (s * yc + c * xc) * inv_scale;
    if (fv) ry = -ry;
    if (fh) rx = -rx;
    sy = ry + cy;
    sx = rx + cx;
  }
};

}  // namespace

Tensor one_hot(const LabelMap& label, int64_t classes) {
  Tensor out = Tensor::feature_map(1, classes, label.height, label.width);
  for (int64_t i = 0; i < label.height * label.width; ++i) {
    const int32_t v = label.values[static_cast<size_t>(i)];
    if (v < 0 || v >= classes) {
      throw DataError("one_hot: label " + std::to_string(v) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    out[i * classes + v] = 1.0;
  }
  return out;
}

LabelMap argmax(const Tensor& mask) {
  require_image(mask, "argmax");
  const int64_t c = mask.channels();
  LabelMap out(mask.height(), mask.width());
  for (int64_t i = 0; i < mask.height() * mask.width(); ++i) {
    int32_t best = 0;
    for (int32_t k = 1; k < c; ++k) {
      if (mask[i * c + k] > mask[i * c + best]) best = k;
    }
    out.values[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor stack_images(std::span<const SliceSample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("stack_images: no samples");
  const Tensor& first = samples.front()->image;
  Tensor out({static_cast<int64_t>(samples.size()), first.height(), first.width(), first.channels()});
  const int64_t per = first.numel();
  for (size_t b = 0; b < samples.size(); ++b) {
    require_same_shape(first, samples[b]->image, "stack_images");
    std::copy_n(samples[b]->image.data(), per, out.data() + static_cast<int64_t>(b) * per);
  }
  return out;
}

Tensor stack_one_hot(std::span<const SliceSample* const> samples, int64_t classes) {
  if (samples.empty()) throw std::invalid_argument("stack_one_hot: no samples");
  const LabelMap& first = samples.front()->label;
  Tensor out({static_cast<int64_t>(samples.size()), first.height, first.width, classes});
  const int64_t per = first.height * first.width * classes;
  for (size_t b = 0; b < samples.size(); ++b) {
    const Tensor m = one_hot(samples[b]->label, classes);
    if (m.numel() != per) throw std::invalid_argument("stack_one_hot: label sizes differ");
    std::copy_n(m.data(), per, out.data() + static_cast<int64_t>(b) * per);
  }
  return out;
}

std::vector<std::string> validate(const SyntheticSpec& spec) {
  std::vector<std::string> v;
  if (spec.canvas.height < 16 || spec.canvas.width < 16) v.push_back("canvas must be at least 16x16");
  if (spec.classes < 2 || spec.classes > 4) v.push_back("classes must be in [2, 4]");
  if (spec.volumes < 0) v.push_back("volumes must be >= 0");
  if (spec.slices_per_volume < 1) v.push_back("slices_per_volume must be >= 1");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) v.push_back("noise must be finite and >= 0");
  return v;
}

SliceSample generate_synthetic_slice(const SyntheticSpec& spec, int64_t volume, int64_t slice) {
  const Phantom p = phantom(spec, volume, slice);
  const int64_t h = spec.canvas.height, w = spec.canvas.width;
  SliceSample s;
  s.label = LabelMap(h, w);
  s.image = Tensor::feature_map(1, 1, h, w);
  Rng noise = Rng::derive(spec.seed, {static_cast<uint64_t>(volume), static_cast<uint64_t>(slice), 1});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int32_t c = phantom_class(p, spec.classes, 2 * y + 1, 2 * x + 1);
      s.label.at(y, x) = c;
      double v = band_of(p, spec.classes, c);
      if (spec.noise > 0.0) v += spec.noise * noise.normal();
      s.image.at(0, 0, y, x) = v;
    }
  }
  normalize_min_max(s.image);
  std::ostringstream id;
  id << spec.volume_prefix;
  id.width(3);
  id.fill('0');
  id << volume;
  s.volume_id = id.str();
  s.slice_index = slice;
  return s;
}

std::vector<SliceSample> generate_synthetic(const SyntheticSpec& spec) {
  const auto problems = validate(spec);
  if (!problems.empty()) throw std::invalid_argument("synthetic spec: " + problems.front());
  std::vector<SliceSample> out;
  out.reserve(static_cast<size_t>(spec.volumes * spec.slices_per_volume));
  for (int64_t v = 0; v < spec.volumes; ++v) {
    for (int64_t s = 0; s < spec.slices_per_volume; ++s) out.push_back(generate_synthetic_slice(spec, v, s));
  }
  return out;
}

std::vector<int64_t> nearest_source(int64_t height, int64_t width, const GeoTransform& tf) {
  std::vector<int64_t> src(static_cast<size_t>(height * width), -1);
  const InverseMap inv(height, width, tf);
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      double sy, sx;
      inv(y, x, sy, sx);
      const auto iy = static_cast<int64_t>(std::floor(sy + 0.5));
      const auto ix = static_cast<int64_t>(std::floor(sx + 0.5));
      if (iy >= 0 && iy < height && ix >= 0 && ix < width) src[static_cast<size_t>(y * width + x)] = iy * width + ix;
    }
  }
  return src;
}

LabelMap warp_label(const LabelMap& label, const GeoTransform& tf) {
  if (tf.is_identity()) return label;
  const auto src = nearest_source(label.height, label.width, tf);
  LabelMap out(label.height, label.width);
  for (size_t i = 0; i < src.size(); ++i) out.values[i] = src[i] < 0 ? 0 : label.values[static_cast<size_t>(src[i])];
  return out;
}

Tensor warp_image(const Tensor& image, const GeoTransform& tf, double fill) {
  require_image(image, "warp_image");
  if (tf.is_identity()) return image;
  Tensor out(image.shape());
  const InverseMap inv(image.height(), image.width(), tf);
  for (int64_t y = 0; y < image.height(); ++y) {
    for (int64_t x = 0; x < image.width(); ++x) {
      double sy, sx;
      inv(y, x, sy, sx);
      for (int64_t c = 0; c < image.channels(); ++c) out.at(0, c, y, x) = sample_bilinear(image, c, sy, sx, fill);
    }
  }
  return out;
}

SliceSample augment(const SliceSample& sample, const AugmentToggles& toggles, Rng& rng,
                    const AugmentRanges& r) {
  SliceSample out = sample;
  GeoTransform tf;
  if (toggles.flips) {
    tf.flip_horizontal = rng.coin();
    tf.flip_vertical = rng.coin();
  }
  if (toggles.rotate_scale) {
    tf.degrees = rng.uniform(-r.max_degrees, r.max_degrees);
    tf.scale = rng.uniform(r.scale_lo, r.scale_hi);
  }
  if (!tf.is_identity()) {
    double lo = sample.image.numel() ? sample.image[0] : 0.0;
    for (double v : sample.image.values()) lo = std::min(lo, v);
    out.image = warp_image(sample.image, tf, lo);
    out.label = warp_label(sample.label, tf);
  }
  auto values = out.image.values();
  if (toggles.gamma) {
    const double g = rng.uniform(r.gamma_lo, r.gamma_hi);
    for (double& v : values) v = 2.0 * std::pow(std::clamp(0.5 * (v + 1.0), 0.0, 1.0), g) - 1.0;
  }
  if (toggles.intensity) {
    const double a = rng.uniform(r.intensity_scale_lo, r.intensity_scale_hi);
    const double b = rng.uniform(-r.intensity_shift, r.intensity_shift);
    for (double& v : values) v = a * v + b;
  }
  if (toggles.noise) {
    const double sigma = rng.uniform(0.0, r.max_noise);
    for (double& v : values) v += sigma * rng.normal();
  }
  return out;
}

void normalize_min_max(Tensor& image) {
  require_image(image, "normalize_min_max");
  const int64_t c = image.channels();
  const int64_t n = image.height() * image.width();
  for (int64_t ch = 0; ch < c; ++ch) {
    double lo = image[ch], hi = image[ch];
    for (int64_t i = 0; i < n; ++i) {
      lo = std::min(lo, image[i * c + ch]);
      hi = std::max(hi, image[i * c + ch]);
    }
    for (int64_t i = 0; i < n; ++i) {
      double& v = image[i * c + ch];
      v = hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0;
    }
  }
}

Tensor resize_bilinear(const Tensor& image, Extent2 size) {
  require_image(image, "resize_bilinear");
  if (image.height() == size.height && image.width() == size.width) return image;
  Tensor out = Tensor::feature_map(1, image.channels(), size.height, size.width);
  const double sy = static_cast<double>(image.height()) / static_cast<double>(size.height);
  const double sx = static_cast<double>(image.width()) / static_cast<double>(size.width);
  for (int64_t y = 0; y < size.height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height() - 1));
    for (int64_t x = 0; x < size.width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width() - 1));
      for (int64_t c = 0; c < image.channels(); ++c) out.at(0, c, y, x) = sample_bilinear(image, c, fy, fx, 0.0);
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& label, Extent2 size) {
  if (label.height == size.height && label.width == size.width) return label;
  LabelMap out(size.height, size.width);
  for (int64_t y = 0; y < size.height; ++y) {
    const int64_t sy = std::min(label.height - 1, (2 * y + 1) * label.height / (2 * size.height));
    for (int64_t x = 0; x < size.width; ++x) {
      const int64_t sx = std::min(label.width - 1, (2 * x + 1) * label.width / (2 * size.width));
      out.at(y, x) = label.at(sy, sx);
    }
  }
  return out;
}

std::vector<VolumeInfo> volumes_of(std::span<const SliceSample> samples) {
  std::vector<VolumeInfo> out;
  std::map<std::string, size_t> index;
  for (const auto& s : samples) {
    auto [it, fresh] = index.emplace(s.volume_id, out.size());
    if (fresh) out.push_back({s.volume_id, {}});
    out[it->second].slices.push_back(s.slice_index);
  }
  return out;
}

bool parse_stem(const std::string& stem, std::string& volume, int64_t& slice) {
  const auto cut = stem.rfind('_');
  if (cut == std::string::npos || cut == 0 || cut + 1 == stem.size()) return false;
  const std::string digits = stem.substr(cut + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) return false;
  volume = stem.substr(0, cut);
  slice = std::stoll(digits);
  return true;
}

std::string slice_stem(const std::string& volume, int64_t slice) {
  std::ostringstream out;
  out << volume << '_';
  out.width(3);
  out.fill('0');
  out << slice;
  return out.str();
}

namespace {

using SliceKey = std::pair<std::string, int64_t>;

struct FoundFiles {
  // image files per slice, indexed by channel
  std::map<SliceKey, std::map<int64_t, fs::path>> images;
  std::map<SliceKey, fs::path> labels;
};

std::vector<fs::path> rasters_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoundFiles scan(const fs::path& root, int64_t channels) {
  FoundFiles found;
  for (const auto& p : rasters_in(root / "images")) {
    std::string stem = p.stem().string();
    int64_t ch = 0;
    if (channels > 1) {
      const auto cut = stem.rfind("_ch");
      if (cut == std::string::npos) throw DataError(p.string() + ": expected a _ch<k> suffix");
      ch = std::stoll(stem.substr(cut + 3));
      stem = stem.substr(0, cut);
      if (ch < 0 || ch >= channels) throw DataError(p.string() + ": channel outside [0, C_I)");
    }
    SliceKey key;
    if (!parse_stem(stem, key.first, key.second)) throw DataError(p.string() + ": name is not <volume>_<slice>");
    found.images[key][ch] = p;
  }
  for (const auto& p : rasters_in(root / "labels")) {
    SliceKey key;
    if (!parse_stem(p.stem().string(), key.first, key.second)) {
      throw DataError(p.string() + ": name is not <volume>_<slice>");
    }
    found.labels[key] = p;
  }
  return found;
}

Tensor read_image(const std::map<int64_t, fs::path>& files, int64_t channels, const SliceKey& key) {
  if (static_cast<int64_t>(files.size()) != channels) {
    throw DataError("slice " + slice_stem(key.first, key.second) + ": expected " +
                    std::to_string(channels) + " image channel files");
  }
  Tensor image;
  for (const auto& [ch, path] : files) {
    raster::GrayImage g;
    try {
      g = raster::read_pgm(path);
    } catch (const raster::RasterError& e) {
      throw DataError(std::string("unreadable raster: ") + e.what());
    }
    if (image.empty()) image = Tensor::feature_map(1, channels, g.height, g.width);
    if (g.height != image.height() || g.width != image.width()) {
      throw DataError(path.string() + ": channel size differs from other channels");
    }
    for (int64_t i = 0; i < g.height * g.width; ++i) {
      image[i * channels + ch] = static_cast<double>(g.pixels[static_cast<size_t>(i)]);
    }
  }
  return image;
}

LabelMap read_label(const fs::path& path, int64_t classes) {
  raster::GrayImage g;
  try {
    g = raster::read_pgm(path);
  } catch (const raster::RasterError& e) {
    throw DataError(std::string("unreadable raster: ") + e.what());
  }
  LabelMap label(g.height, g.width);
  for (size_t i = 0; i < g.pixels.size(); ++i) {
    if (g.pixels[i] >= classes) {
      throw DataError(path.string() + ": label value " + std::to_string(g.pixels[i]) +
                      " >= class count " + std::to_string(classes));
    }
    label.values[i] = g.pixels[i];
  }
  return label;
}

}  // namespace

SliceFolder ingest_slice_folder(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw DataError(root.string() + ": not a directory");
  SliceFolder folder;
  const FoundFiles found = scan(root, options.image_channels);

  std::vector<SliceKey> keys;
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    json m;
    try {
      std::ifstream in(manifest_path);
      m = json::parse(in);
      for (const auto& v : m.at("volumes")) {
        const std::string id = v.at("id").get<std::string>();
        for (const auto& s : v.at("slices")) keys.emplace_back(id, s.get<int64_t>());
      }
      if (m.contains("spacing")) folder.spacing = m.at("spacing").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw DataError(manifest_path.string() + ": " + e.what());
    }
    if (folder.spacing.size() != 3) throw DataError(manifest_path.string() + ": spacing needs 3 values");
    const std::set<SliceKey> listed(keys.begin(), keys.end());
    if (listed.size() != keys.size()) throw DataError(manifest_path.string() + ": duplicate slice entry");
    for (const auto& [key, files] : found.images) {
      if (!listed.count(key)) throw DataError(files.begin()->second.string() + ": not listed in manifest");
    }
    for (const auto& key : keys) {
      if (!found.images.count(key)) {
        throw DataError(manifest_path.string() + ": no image for " + slice_stem(key.first, key.second));
      }
    }
  } else {
    for (const auto& [key, files] : found.images) keys.push_back(key);
  }
  for (const auto& [key, path] : found.labels) {
    if (!found.images.count(key)) throw DataError(path.string() + ": label without matching image");
  }

  std::sort(keys.begin(), keys.end());
  for (const auto& key : keys) {
    SliceSample s;
    s.volume_id = key.first;
    s.slice_index = key.second;
    const auto& files = found.images.at(key);
    s.image = resize_bilinear(read_image(files, options.image_channels, key), options.size);
    normalize_min_max(s.image);
    const auto label_it = found.labels.find(key);
    if (label_it != found.labels.end()) {
      s.label = resize_nearest(read_label(label_it->second, options.classes), options.size);
    } else if (options.require_labels) {
      throw DataError(files.begin()->second.string() + ": image without matching label");
    } else {
      s.label = LabelMap(options.size.height, options.size.width);
    }
    folder.samples.push_back(std::move(s));
  }
  folder.volumes = volumes_of(folder.samples);
  return folder;
}

void write_slice_folder(const fs::path& root, std::span<const SliceSample> samples,
                        std::span<const double> spacing) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  for (const auto& s : samples) {
    const std::string stem = slice_stem(s.volume_id, s.slice_index);
    const int64_t channels = s.image.channels();
    for (int64_t ch = 0; ch < channels; ++ch) {
      raster::GrayImage g{s.image.height(), s.image.width(), 65535, {}};
      g.pixels.resize(static_cast<size_t>(g.height * g.width));
      for (int64_t i = 0; i < g.height * g.width; ++i) {
        const double u = std::clamp(0.5 * (s.image[i * channels + ch] + 1.0), 0.0, 1.0);
        g.pixels[static_cast<size_t>(i)] = static_cast<uint16_t>(std::lround(u * 65535.0));
      }
      const std::string name = channels > 1 ? stem + "_ch" + std::to_string(ch) : stem;
      raster::write_pgm(root / "images" / (name + ".pgm"), g);
    }
    raster::GrayImage l{s.label.height, s.label.width, 255, {}};
    l.pixels.assign(s.label.values.begin(), s.label.values.end());
    raster::write_pgm(root / "labels" / (stem + ".pgm"), l);
  }
  json m;
  m["volumes"] = json::array();
  for (const auto& v : volumes_of(samples)) m["volumes"].push_back({{"id", v.id}, {"slices", v.slices}});
  m["spacing"] = spacing.empty() ? std::vector<double>{1.0, 1.0, 1.0}
                                 : std::vector<double>(spacing.begin(), spacing.end());
  std::ofstream(root / "manifest.json") << m.dump(2) << '\n';
}

}  // namespace rfhit::data
