#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fllab/model.h"

namespace fllab {

// Images with pixels in [0,1] and their class labels.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  Example example(std::size_t i) const { return {images[i], labels[i]}; }
  std::vector<Example> examples() const;
  // Throws InputError when lengths differ, a label is out of range or a pixel
  // leaves [0,1].
  void validate() const;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image/label pair. Pixels are scaled by 1/255. `classes` of 0
// infers the class count as max(label) + 1.
Dataset load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path, std::size_t classes = 0);

// Writes the pair back; pixels are rescaled by 255 and rounded.
void write_idx(const Dataset& ds, const std::filesystem::path& image_path,
               const std::filesystem::path& label_path);

// Single-tensor IDX image file (used to export reconstructions).
void write_idx_images(std::span<const Tensor> images, const std::filesystem::path& path);

struct BlobOptions {
  std::size_t classes = 10;
  Shape shape = {8, 8};
  std::size_t per_class = 100;
  // Half-width of the per-coordinate center range around 0.5.
  double separation = 1.0;
  // Per-pixel standard deviation around the class center.
  double spread = 0.1;
  // When positive, class centers are constant on a grid x grid lattice of
  // blocks over the last two dimensions (image-like low-frequency structure).
  std::size_t grid = 0;
  std::uint64_t seed = 0;
};

// Gaussian class blobs clamped to [0,1]. Class c is centered at
// 0.5 + 0.5 * separation * u_c with u_c uniform in [-1,1]^d.
Dataset synth_blobs(const BlobOptions& opts);
Dataset synth_blobs(std::size_t classes, Shape shape, std::size_t per_class,
                    double separation, std::uint64_t seed);

// The class centers synth_blobs uses for `opts` (before clamping of samples).
std::vector<Tensor> blob_centers(const BlobOptions& opts);

struct PartitionPlan {
  std::size_t clients = 1;
  std::vector<std::size_t> samples_per_client;  // n_k; one entry per client
  std::size_t classes_per_client = 1;           // cap c
  std::uint64_t seed = 0;

  static PartitionPlan uniform(std::size_t clients, std::size_t per_client,
                               std::size_t classes_per_client, std::uint64_t seed);
};

struct Partition {
  std::vector<Dataset> shards;
  std::vector<std::vector<std::size_t>> indices;  // source indices per shard
};

// Non-IID split: each shard gets n_k samples drawn from at most c classes and
// no source sample is used twice. Throws ConfigError when infeasible.
Partition partition_with_indices(const Dataset& ds, const PartitionPlan& plan);
std::vector<Dataset> partition(const Dataset& ds, const PartitionPlan& plan);

// Deterministic split of one dataset into two by position after a seeded shuffle.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

}  // namespace fllab
