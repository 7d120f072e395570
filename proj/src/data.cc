#include "fllab/data.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "fllab/errors.h"
#include "fllab/rng.h"

namespace fllab {

std::vector<Example> Dataset::examples() const {
  std::vector<Example> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(example(i));
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) throw InputError("image and label counts differ");
  for (std::size_t y : labels) {
    if (y >= classes) throw InputError("label out of range");
  }
  for (const Tensor& t : images) {
    for (double v : t.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw InputError("pixel outside [0,1]");
    }
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.classes = ds.classes;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.images.push_back(ds.images.at(i));
    out.labels.push_back(ds.labels.at(i));
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError("truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                        static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    throw IoError("bad IDX magic number in " + path.string() + ": got " +
                  std::to_string(got) + ", expected " + std::to_string(want));
  }
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n,
                                        const std::filesystem::path& path) {
  std::vector<unsigned char> buf(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
    throw IoError("truncated IDX payload in " + path.string());
  }
  return buf;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path, std::size_t classes) {
  std::ifstream img = open_in(image_path);
  check_magic(read_be32(img, image_path), kIdxImageMagic, image_path);
  const std::uint32_t count = read_be32(img, image_path);
  const std::uint32_t rows = read_be32(img, image_path);
  const std::uint32_t cols = read_be32(img, image_path);
  if (rows == 0 || cols == 0) throw IoError("zero image extent in " + image_path.string());

  std::ifstream lab = open_in(label_path);
  check_magic(read_be32(lab, label_path), kIdxLabelMagic, label_path);
  const std::uint32_t label_count = read_be32(lab, label_path);
  if (label_count != count) {
    throw IoError("image count " + std::to_string(count) + " does not match label count " +
                  std::to_string(label_count));
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  std::vector<unsigned char> raw = read_payload(img, pixels * count, image_path);
  std::vector<unsigned char> raw_labels = read_payload(lab, count, label_path);

  Dataset ds;
  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(pixels);
    for (std::size_t p = 0; p < pixels; ++p) v[p] = raw[i * pixels + p] / 255.0;
    ds.images.emplace_back(Shape{rows, cols}, std::move(v));
  }
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  std::size_t max_label = 0;
  for (std::size_t y : ds.labels) max_label = std::max(max_label, y);
  ds.classes = classes > 0 ? classes : (count > 0 ? max_label + 1 : 0);
  ds.validate();
  return ds;
}

void write_idx_images(std::span<const Tensor> images, const std::filesystem::path& path) {
  std::size_t rows = 1, cols = 1;
  if (!images.empty()) {
    const Shape& s = images.front().shape();
    if (s.size() == 2) {
      rows = s[0];
      cols = s[1];
    } else {
      cols = images.front().size();
    }
  }
  std::ofstream out = open_out(path);
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (const Tensor& t : images) {
    if (t.size() != rows * cols) throw InputError("images of differing size in one IDX file");
    for (double v : t.values()) out.put(static_cast<char>(to_byte(v)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_idx(const Dataset& ds, const std::filesystem::path& image_path,
               const std::filesystem::path& label_path) {
  write_idx_images(ds.images, image_path);
  std::ofstream out = open_out(label_path);
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(ds.labels.size()));
  for (std::size_t y : ds.labels) {
    if (y > 255) throw InputError("label does not fit in one IDX byte");
    out.put(static_cast<char>(y));
  }
  if (!out) throw IoError("failed writing " + label_path.string());
}

std::vector<Tensor> blob_centers(const BlobOptions& opts) {
  Rng rng = make_rng(opts.seed, {0xb10b});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t dim = shape_size(opts.shape);
  const Shape& s = opts.shape;
  const std::size_t h = s.size() >= 2 ? s[s.size() - 2] : 1;
  const std::size_t w = s.back();
  const std::size_t planes = dim / (h * w);
  const std::size_t g = opts.grid;
  std::vector<Tensor> centers;
  for (std::size_t c = 0; c < opts.classes; ++c) {
    std::vector<double> v(dim);
    if (g == 0) {
      for (double& x : v) x = 0.5 + 0.5 * opts.separation * u(rng);
    } else {
      std::vector<double> coarse(planes * g * g);
      for (double& x : coarse) x = 0.5 + 0.5 * opts.separation * u(rng);
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t col = 0; col < w; ++col) {
            const std::size_t br = std::min(g - 1, r * g / h);
            const std::size_t bc = std::min(g - 1, col * g / w);
            v[(p * h + r) * w + col] = coarse[(p * g + br) * g + bc];
          }
        }
      }
    }
    centers.emplace_back(opts.shape, std::move(v));
  }
  return centers;
}

Dataset synth_blobs(const BlobOptions& opts) {
  if (opts.classes == 0 || opts.per_class == 0 || shape_size(opts.shape) == 0) {
    throw InputError("synth_blobs needs positive counts");
  }
  std::vector<Tensor> centers = blob_centers(opts);
  Rng rng = make_rng(opts.seed, {0x5a3e});
  std::normal_distribution<double> noise(0.0, opts.spread);
  Dataset ds;
  ds.classes = opts.classes;
  for (std::size_t c = 0; c < opts.classes; ++c) {
    for (std::size_t i = 0; i < opts.per_class; ++i) {
      std::vector<double> v(centers[c].values().begin(), centers[c].values().end());
      for (double& x : v) x = std::clamp(x + noise(rng), 0.0, 1.0);
      ds.images.emplace_back(opts.shape, std::move(v));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset synth_blobs(std::size_t classes, Shape shape, std::size_t per_class,
                    double separation, std::uint64_t seed) {
  BlobOptions o;
  o.classes = classes;
  o.shape = std::move(shape);
  o.per_class = per_class;
  o.separation = separation;
  o.seed = seed;
  return synth_blobs(o);
}

PartitionPlan PartitionPlan::uniform(std::size_t clients, std::size_t per_client,
                                     std::size_t classes_per_client, std::uint64_t seed) {
  return PartitionPlan{clients, std::vector<std::size_t>(clients, per_client),
                       classes_per_client, seed};
}

Partition partition_with_indices(const Dataset& ds, const PartitionPlan& plan) {
  if (plan.clients == 0) throw ConfigError("partition needs at least one client");
  if (plan.samples_per_client.size() != plan.clients) {
    throw ConfigError("partition plan lists " + std::to_string(plan.samples_per_client.size()) +
                      " shard sizes for " + std::to_string(plan.clients) + " clients");
  }
  if (plan.classes_per_client == 0 || plan.classes_per_client > ds.classes) {
    throw ConfigError("classes per client must lie in [1, class count]");
  }
  const std::size_t demand =
      std::accumulate(plan.samples_per_client.begin(), plan.samples_per_client.end(),
                      std::size_t{0});
  if (demand > ds.size()) throw ConfigError("partition asks for more samples than exist");

  Rng rng = make_rng(plan.seed, {0x9a47});
  // Sort by label into per-class pools, shuffled within each class.
  std::vector<std::vector<std::size_t>> pools(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) pools[ds.labels[i]].push_back(i);
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> cursor(ds.classes, 0);

  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < ds.classes; ++c) {
    if (!pools[c].empty()) order.push_back(c);
  }
  if (order.empty()) throw ConfigError("cannot partition an empty dataset");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t cap = std::min(plan.classes_per_client, order.size());

  Partition out;
  std::size_t turn = 0;
  for (std::size_t k = 0; k < plan.clients; ++k) {
    const std::size_t n = plan.samples_per_client[k];
    std::vector<std::size_t> idx;
    std::vector<std::size_t> used;
    for (std::size_t part = 0; part < cap; ++part) {
      const std::size_t chunk = n / cap + (part < n % cap ? 1 : 0);
      if (chunk == 0) continue;
      bool placed = false;
      for (std::size_t probe = 0; probe < order.size(); ++probe) {
        const std::size_t c = order[(turn + probe) % order.size()];
        if (std::find(used.begin(), used.end(), c) != used.end()) continue;
        if (pools[c].size() - cursor[c] < chunk) continue;
        idx.insert(idx.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                   pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c] + chunk));
        cursor[c] += chunk;
        used.push_back(c);
        turn = (turn + probe + 1) % order.size();
        placed = true;
        break;
      }
      if (!placed) {
        throw ConfigError("partition plan infeasible: client " + std::to_string(k) +
                          " cannot be served from at most " + std::to_string(cap) +
                          " classes");
      }
    }
    out.shards.push_back(subset(ds, idx));
    out.indices.push_back(std::move(idx));
  }
  return out;
}

std::vector<Dataset> partition(const Dataset& ds, const PartitionPlan& plan) {
  return partition_with_indices(ds, plan).shards;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in [0,1)");
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x7e57});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * ds.size()));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {subset(ds, train), subset(ds, test)};
}

}  // namespace fllab
