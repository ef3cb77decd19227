#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advenc/config.hpp"
#include "advenc/tensor.hpp"

namespace advenc {

/// Labelled images in [0, 1], N x C x H x W.
struct Dataset {
  std::string name;
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  ImageShape image_shape() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// First `count` samples (or all if fewer).
  Dataset head(std::size_t count) const;
  std::size_t distinct_labels() const;
};

/// Bilinear resize of one C x H x W image (half-pixel centres).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Reads CIFAR-10 binary records (1 label byte + 3072 CHW bytes, 32x32x3).
/// `path` may be one .bin file or a directory; in a directory every
/// data_batch_*.bin (train) or test_batch.bin (test) is read in name order.
/// Images are resized to `target`. `limit` = 0 reads everything.
Dataset load_cifar10_binary(const std::filesystem::path& path, const ImageShape& target, bool train_split = true,
                            std::size_t limit = 0);
/// Writes images quantized to 8 bits in the same record layout; the dataset
/// must already be 3 x 32 x 32.
void write_cifar10_binary(const Dataset& data, const std::filesystem::path& file);

/// root/<class_name>/<image files>; classes are sorted directory names.
Dataset load_image_folder(const std::filesystem::path& root, const ImageShape& target, std::size_t limit = 0);

/// Procedural ten-class texture and shape images at 3 x 32 x 32 (CIFAR-10
/// geometry), quantized to 8 bits. Classes: horizontal, vertical, diagonal
/// and anti-diagonal stripes, checkerboard, disk, ring, square, cross, dot grid.
Dataset make_synthetic_cifar(std::size_t count, std::uint64_t seed);

/// Resolves a dataset reference:
///   synthetic:<count>:<seed>   generated in memory, resized to `target`
///   <path>                     CIFAR-10 binary file/dir or image-folder tree
///   <name>                     $ADVENC_CACHE_DIR/datasets/<name>
/// Throws kUnresolvedReference when nothing matches.
Dataset resolve_dataset(const std::string& reference, const ImageShape& target, bool train_split = true);
/// Same lookup without loading; true when resolve_dataset would find something.
bool dataset_reference_exists(const std::string& reference);

/// Global cache directory ($ADVENC_CACHE_DIR, default ~/.cache/advenc).
std::filesystem::path cache_directory();

struct AugmentSpec {
  double crop_scale_min = 0.5;
  double flip_probability = 0.5;
  double jitter_strength = 0.4;
};

/// Random resized crop (area scale in [crop_scale_min, 1], aspect in [3/4, 4/3]),
/// horizontal flip, brightness/contrast/saturation jitter. Batch in, batch out.
Tensor augment_batch(const Tensor& batch, std::mt19937_64& rng, const AugmentSpec& spec);

/// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

/// Splits [0, n) in order into batches of `batch_size`; a trailing batch of a
/// single element is merged into the previous one.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size);

}  // namespace advenc
