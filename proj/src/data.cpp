#include "byov/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "byov/checkpoint.hpp"
#include "byov/priors.hpp"
#include "byov/rng.hpp"

namespace byov {

int Dataset::num_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

Tensor Dataset::image(size_t i) const {
  const size_t sz = c() * h() * w();
  Tensor out(Shape{c(), h(), w()});
  std::copy(images.data() + i * sz, images.data() + (i + 1) * sz, out.data());
  return out;
}

namespace {

uint32_t read_be32(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) {
    throw IoError("idx '" + path + "': truncated reading " + what + " at byte " +
                  std::to_string(is.tellg()));
  }
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

constexpr double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

Dataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path,
                 Split split) {
  std::ifstream is(images_path, std::ios::binary);
  if (!is) throw IoError("idx: cannot open '" + images_path + "'");
  const uint32_t magic = read_be32(is, images_path, "magic");
  if (magic != 0x00000803) {
    throw IoError("idx '" + images_path + "': bad image magic 0x" + std::to_string(magic) +
                  " at byte 0 (want 0x00000803)");
  }
  const uint32_t n = read_be32(is, images_path, "count");
  const uint32_t rows = read_be32(is, images_path, "rows");
  const uint32_t cols = read_be32(is, images_path, "cols");
  Dataset d;
  d.split = split;
  d.images = Tensor(Shape{n, 1, rows, cols});
  std::vector<unsigned char> buf(static_cast<size_t>(n) * rows * cols);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) {
    throw IoError("idx '" + images_path + "': truncated pixel data at byte " +
                  std::to_string(is.tellg()));
  }
  for (size_t i = 0; i < buf.size(); ++i) d.images[i] = buf[i] / 255.0;

  if (labels_path) {
    std::ifstream ls(*labels_path, std::ios::binary);
    if (!ls) throw IoError("idx: cannot open '" + *labels_path + "'");
    const uint32_t lmagic = read_be32(ls, *labels_path, "magic");
    if (lmagic != 0x00000801) {
      throw IoError("idx '" + *labels_path + "': bad label magic at byte 0 (want 0x00000801)");
    }
    const uint32_t ln = read_be32(ls, *labels_path, "count");
    if (ln != n) {
      throw IoError("idx '" + *labels_path + "': label count " + std::to_string(ln) +
                    " does not match image count " + std::to_string(n));
    }
    std::vector<unsigned char> lbuf(ln);
    ls.read(reinterpret_cast<char*>(lbuf.data()), ln);
    if (!ls) {
      throw IoError("idx '" + *labels_path + "': truncated labels at byte " +
                    std::to_string(ls.tellg()));
    }
    d.labels = std::vector<int>(lbuf.begin(), lbuf.end());
  }
  return d;
}

void save_idx_images(const Tensor& images, const std::string& path) {
  if (images.rank() != 4 || images.shape()[1] != 1) {
    throw ShapeError("save_idx_images: expected [N,1,H,W], got " + images.shape_string());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("idx: cannot open '" + path + "' for writing");
  auto be32 = [&os](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
  };
  be32(0x00000803);
  be32(static_cast<uint32_t>(images.shape()[0]));
  be32(static_cast<uint32_t>(images.shape()[2]));
  be32(static_cast<uint32_t>(images.shape()[3]));
  for (size_t i = 0; i < images.size(); ++i) {
    os.put(static_cast<char>(std::lround(clip01(images[i]) * 255.0)));
  }
}

void save_idx_labels(const std::vector<int>& labels, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("idx: cannot open '" + path + "' for writing");
  auto be32 = [&os](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
  };
  be32(0x00000801);
  be32(static_cast<uint32_t>(labels.size()));
  for (int l : labels) os.put(static_cast<char>(l));
}

Dataset make_synthetic(const SyntheticSpec& spec, Split split) {
  if (spec.classes == 0 || spec.n == 0) throw ConfigError("synthetic: n and classes must be positive");
  Dataset d;
  d.split = split;
  d.images = Tensor(Shape{spec.n, 1, spec.height, spec.width});
  d.labels = std::vector<int>(spec.n);
  const double ring = 0.32 * static_cast<double>(std::min(spec.height, spec.width));
  const double cy0 = spec.height / 2.0, cx0 = spec.width / 2.0;
  const uint64_t base =
      derive_key(spec.seed, split == Split::Train ? "synthetic/train" : "synthetic/test");
  for (size_t i = 0; i < spec.n; ++i) {
    const int cls = static_cast<int>(i % spec.classes);
    (*d.labels)[i] = cls;
    RngStream rng(mix_pair(base, i));
    const double angle = 6.283185307179586 * cls / static_cast<double>(spec.classes);
    const double cx = cx0 + ring * std::cos(angle) + (rng.uniform() - 0.5) * 2.0;
    const double cy = cy0 + ring * std::sin(angle) + (rng.uniform() - 0.5) * 2.0;
    const double sigma = 2.2 + (rng.uniform() - 0.5) * 0.4;
    const double contrast =
        spec.contrast_min + (spec.contrast_max - spec.contrast_min) * rng.uniform();
    const double noise = spec.noise_min + (spec.noise_max - spec.noise_min) * rng.uniform();
    double* img = d.images.data() + i * spec.height * spec.width;
    for (size_t y = 0; y < spec.height; ++y) {
      for (size_t x = 0; x < spec.width; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double v = contrast * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        img[y * spec.width + x] = clip01(v + noise * rng.normal());
      }
    }
  }
  return d;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, uint64_t key) {
  if (image.rank() != 3) throw ShapeError("augment: expected [C,H,W], got " + image.shape_string());
  const size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  RngStream rng(key);
  Tensor out = image;

  if (cfg.max_shift > 0) {
    const int span = 2 * cfg.max_shift + 1;
    const int dy = static_cast<int>(rng.bits() % span) - cfg.max_shift;
    const int dx = static_cast<int>(rng.bits() % span) - cfg.max_shift;
    Tensor shifted(image.shape());
    for (size_t ch = 0; ch < c; ++ch) {
      for (size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) - dy;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (size_t x = 0; x < w; ++x) {
          const long sx = static_cast<long>(x) - dx;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          shifted[(ch * h + y) * w + x] = out[(ch * h + sy) * w + sx];
        }
      }
    }
    out = std::move(shifted);
  }

  if (cfg.flip_prob > 0.0 && rng.uniform() < cfg.flip_prob) {
    Tensor flipped(out.shape());
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x)
          flipped[(ch * h + y) * w + x] = out[(ch * h + y) * w + (w - 1 - x)];
    out = std::move(flipped);
  }

  if (cfg.brightness > 0.0) {
    const double f = 1.0 + cfg.brightness * (2.0 * rng.uniform() - 1.0);
    for (size_t i = 0; i < out.size(); ++i) out[i] = clip01(out[i] * f);
  }

  if (cfg.noise_sigma > 0.0) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = clip01(out[i] + cfg.noise_sigma * rng.normal());
  }
  return out;
}

std::pair<Tensor, Tensor> two_views(const Tensor& image, const AugmentConfig& cfg, uint64_t seed) {
  return {augment(image, cfg, derive_key(seed, "view", 1)),
          augment(image, cfg, derive_key(seed, "view", 2))};
}

OodKind parse_ood_kind(const std::string& s) {
  if (s == "identity") return OodKind::Identity;
  if (s == "gaussian_noise") return OodKind::GaussianNoise;
  if (s == "salt_pepper") return OodKind::SaltPepper;
  if (s == "shear") return OodKind::Shear;
  if (s == "crop") return OodKind::Crop;
  if (s == "flip") return OodKind::Flip;
  if (s == "brightness") return OodKind::Brightness;
  throw ConfigError("augmentation: unknown kind '" + s + "'");
}

const char* ood_kind_name(OodKind k) {
  switch (k) {
    case OodKind::Identity: return "identity";
    case OodKind::GaussianNoise: return "gaussian_noise";
    case OodKind::SaltPepper: return "salt_pepper";
    case OodKind::Shear: return "shear";
    case OodKind::Crop: return "crop";
    case OodKind::Flip: return "flip";
    case OodKind::Brightness: return "brightness";
  }
  return "?";
}

Dataset apply_ood(const Dataset& d, const AugmentationSpec& spec, uint64_t seed) {
  Dataset out;
  out.split = d.split;
  out.labels = d.labels;
  out.images = d.images;
  const size_t n = d.n(), c = d.c(), h = d.h(), w = d.w();
  const size_t img_sz = c * h * w;
  const uint64_t base = derive_key(seed, std::string("ood/") + ood_kind_name(spec.kind));

  switch (spec.kind) {
    case OodKind::Identity:
      break;
    case OodKind::GaussianNoise: {
      if (spec.strength == 0.0) break;
      for (size_t i = 0; i < n; ++i) {
        CounterRng rng(mix_pair(base, i));
        double* img = out.images.data() + i * img_sz;
        for (size_t j = 0; j < img_sz; ++j) img[j] = clip01(img[j] + spec.strength * rng.normal(j));
      }
      break;
    }
    case OodKind::SaltPepper: {
      for (size_t i = 0; i < n; ++i) {
        CounterRng rng(mix_pair(base, i));
        double* img = out.images.data() + i * img_sz;
        for (size_t j = 0; j < img_sz; ++j) {
          if (rng.uniform(2 * j) < spec.strength) img[j] = rng.uniform(2 * j + 1) < 0.5 ? 0.0 : 1.0;
        }
      }
      break;
    }
    case OodKind::Shear: {
      const double s = std::tan(spec.strength * 3.14159265358979323846 / 180.0);
      const double cy = (h - 1) / 2.0;
      for (size_t i = 0; i < n; ++i) {
        const double* src = d.images.data() + i * img_sz;
        double* dst = out.images.data() + i * img_sz;
        for (size_t ch = 0; ch < c; ++ch) {
          for (size_t y = 0; y < h; ++y) {
            const double off = s * (static_cast<double>(y) - cy);
            for (size_t x = 0; x < w; ++x) {
              const double sx = x + off;
              const long x0 = static_cast<long>(std::floor(sx));
              const double fx = sx - x0;
              auto at = [&](long xx) -> double {
                if (xx < 0 || xx >= static_cast<long>(w)) return 0.0;
                return src[(ch * h + y) * w + xx];
              };
              dst[(ch * h + y) * w + x] = (1.0 - fx) * at(x0) + fx * at(x0 + 1);
            }
          }
        }
      }
      break;
    }
    case OodKind::Crop: {
      // center crop: a border of round(strength * min(h,w) / 2) pixels is zeroed
      const size_t border =
          static_cast<size_t>(std::lround(spec.strength * std::min(h, w) / 2.0));
      for (size_t i = 0; i < n; ++i) {
        double* img = out.images.data() + i * img_sz;
        for (size_t ch = 0; ch < c; ++ch)
          for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) {
              if (y < border || y >= h - border || x < border || x >= w - border) {
                img[(ch * h + y) * w + x] = 0.0;
              }
            }
      }
      break;
    }
    case OodKind::Flip: {
      for (size_t i = 0; i < n; ++i) {
        const double* src = d.images.data() + i * img_sz;
        double* dst = out.images.data() + i * img_sz;
        for (size_t ch = 0; ch < c; ++ch)
          for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) dst[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
      }
      break;
    }
    case OodKind::Brightness: {
      const double f = 1.0 + spec.strength;
      if (f < 0.0) throw ConfigError("augmentation: brightness strength below -1");
      for (size_t i = 0; i < out.images.size(); ++i) out.images[i] = clip01(out.images[i] * f);
      break;
    }
  }
  return out;
}

}  // namespace byov
