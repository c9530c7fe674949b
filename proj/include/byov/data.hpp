#pragma once

#include <optional>
#include <string>
#include <vector>

#include "byov/tensor.hpp"

namespace byov {

enum class Split { Train, Test };

struct Dataset {
  Tensor images;  // [N, C, H, W], values in [0, 1]
  std::optional<std::vector<int>> labels;
  Split split = Split::Train;

  size_t n() const { return images.shape()[0]; }
  size_t c() const { return images.shape()[1]; }
  size_t h() const { return images.shape()[2]; }
  size_t w() const { return images.shape()[3]; }
  int num_classes() const;
  /// Copy of image i as [C, H, W].
  Tensor image(size_t i) const;
};

/// IDX (MNIST-family) loader: magic 0x00000803 for images, 0x00000801 for
/// labels, big-endian dims, u8 payload scaled to [0,1]. Parse errors carry
/// the byte offset.
Dataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path,
                 Split split);
void save_idx_images(const Tensor& images, const std::string& path);  // for fixtures/interop
void save_idx_labels(const std::vector<int>& labels, const std::string& path);

// Class-structured Gaussian blobs: each class renders at a fixed center on a
// ring, with per-sample jitter, contrast and noise level so samples span a
// genuine difficulty range.
struct SyntheticSpec {
  size_t n = 2048;
  size_t classes = 10;
  size_t height = 28, width = 28;
  uint64_t seed = 7;
  double contrast_min = 0.6, contrast_max = 1.0;  // per-sample amplitude range
  double noise_min = 0.02, noise_max = 0.10;      // per-sample pixel-noise range
};

Dataset make_synthetic(const SyntheticSpec& spec, Split split);

struct AugmentConfig {
  int max_shift = 2;          // random translation, zero fill
  double flip_prob = 0.5;     // horizontal mirror
  double brightness = 0.2;    // scale factor drawn from [1-b, 1+b]
  double noise_sigma = 0.05;  // additive Gaussian, clipped back to [0,1]

  bool disabled() const {
    return max_shift == 0 && flip_prob == 0.0 && brightness == 0.0 && noise_sigma == 0.0;
  }
};

/// One draw from the training augmentation distribution, deterministic in key.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, uint64_t key);
/// Two independent draws for the same image (the paired-view pipeline).
std::pair<Tensor, Tensor> two_views(const Tensor& image, const AugmentConfig& cfg, uint64_t seed);

enum class OodKind { Identity, GaussianNoise, SaltPepper, Shear, Crop, Flip, Brightness };

OodKind parse_ood_kind(const std::string& s);
const char* ood_kind_name(OodKind k);

struct AugmentationSpec {
  OodKind kind = OodKind::Identity;
  double strength = 0.0;
};

/// Applies one corruption at one strength to every image. Output stays in
/// [0,1] and keeps the shape. Stochastic kinds are keyed by (seed, index).
Dataset apply_ood(const Dataset& d, const AugmentationSpec& spec, uint64_t seed);

}  // namespace byov
