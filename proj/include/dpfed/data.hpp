//
// Copyright 2026 The dpfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPFED_DATA_HPP_
#define DPFED_DATA_HPP_

// MNIST ingestion (IDX format, optionally gzip-compressed) and the non-IID
// label-sorted shard partition.

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpfed/errors.hpp"
#include "dpfed/model.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::size_t kNumClasses = 10;

struct RawImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image
};

namespace internal {

inline std::uint32_t ReadBigEndian32(std::span<const std::uint8_t> bytes,
                                     std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::string Hex32(std::uint32_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += kDigits[(v >> shift) & 0xf];
  return s;
}

}  // namespace internal

inline RawImages ParseIdxImages(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) {
    throw TruncationError("IDX image header needs 16 bytes, got " +
                          std::to_string(bytes.size()));
  }
  const std::uint32_t magic = internal::ReadBigEndian32(bytes, 0);
  if (magic != kIdxImagesMagic) {
    throw FormatError("IDX image magic mismatch: expected 0x00000803, got " +
                      internal::Hex32(magic));
  }
  RawImages out;
  out.count = internal::ReadBigEndian32(bytes, 4);
  out.rows = internal::ReadBigEndian32(bytes, 8);
  out.cols = internal::ReadBigEndian32(bytes, 12);
  const std::size_t payload = out.count * out.rows * out.cols;
  if (bytes.size() - 16 < payload) {
    throw TruncationError("IDX image payload truncated: need " +
                          std::to_string(payload) + " bytes, have " +
                          std::to_string(bytes.size() - 16));
  }
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return out;
}

inline std::vector<Label> ParseIdxLabels(std::span<const std::uint8_t> bytes,
                                         std::size_t num_classes = kNumClasses) {
  if (bytes.size() < 8) {
    throw TruncationError("IDX label header needs 8 bytes, got " +
                          std::to_string(bytes.size()));
  }
  const std::uint32_t magic = internal::ReadBigEndian32(bytes, 0);
  if (magic != kIdxLabelsMagic) {
    throw FormatError("IDX label magic mismatch: expected 0x00000801, got " +
                      internal::Hex32(magic));
  }
  const std::size_t count = internal::ReadBigEndian32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw TruncationError("IDX label payload truncated: need " +
                          std::to_string(count) + " bytes, have " +
                          std::to_string(bytes.size() - 8));
  }
  std::vector<Label> labels(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " is outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
  return labels;
}

// Reads a whole file, inflating it when gzip-compressed (zlib passes plain
// files through unchanged). Falls back to `path + ".gz"` when `path` is absent.
inline std::vector<std::uint8_t> ReadMaybeGzipped(const std::filesystem::path& path) {
  std::filesystem::path actual = path;
  if (!std::filesystem::exists(actual)) {
    std::filesystem::path gz = path;
    gz += ".gz";
    if (!std::filesystem::exists(gz)) {
      throw IoError("cannot find " + path.string() + " (or .gz)");
    }
    actual = gz;
  }
  gzFile f = gzopen(actual.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + actual.string());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw IoError("read failed for " + actual.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

struct Dataset {
  Matrix features;  // N x (rows * cols), pixel / 255
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features.cols()); }
};

inline Dataset MakeDataset(const RawImages& images, std::vector<Label> labels) {
  if (images.count != labels.size()) {
    throw DataError("image count " + std::to_string(images.count) +
                    " != label count " + std::to_string(labels.size()));
  }
  if (images.count == 0) throw DataError("dataset is empty");
  const std::size_t dim = images.rows * images.cols;
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(images.count),
                    static_cast<Eigen::Index>(dim));
  double* dst = d.features.data();
  for (std::size_t i = 0; i < images.pixels.size(); ++i) {
    dst[i] = static_cast<double>(images.pixels[i]) / 255.0;
  }
  d.labels = std::move(labels);
  return d;
}

struct MnistFiles {
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string test_images = "t10k-images-idx3-ubyte";
  std::string test_labels = "t10k-labels-idx1-ubyte";
};

struct Mnist {
  Dataset train;
  Dataset test;
};

inline Dataset LoadIdxPair(const std::filesystem::path& images,
                           const std::filesystem::path& labels) {
  const auto image_bytes = ReadMaybeGzipped(images);
  const auto label_bytes = ReadMaybeGzipped(labels);
  return MakeDataset(ParseIdxImages(image_bytes), ParseIdxLabels(label_bytes));
}

inline Mnist LoadMnist(const std::filesystem::path& dir,
                       const MnistFiles& files = {}) {
  return {LoadIdxPair(dir / files.train_images, dir / files.train_labels),
          LoadIdxPair(dir / files.test_images, dir / files.test_labels)};
}

struct ClientPartition {
  std::vector<std::vector<std::size_t>> clients;
  std::size_t shards_per_client = 2;
  std::size_t points_per_client = 600;

  std::size_t num_clients() const { return clients.size(); }
};

// Label-sorted shard partition. The stable label order is tiled when the
// clients need more points than the dataset has, cut into contiguous shards of
// points_per_client / shards_per_client, shuffled with `seed`, and dealt out
// shards_per_client at a time. With fewer clients than the dataset can
// serve, the unused shards are simply left over.
inline ClientPartition ShardNonIid(const Dataset& data, std::size_t num_clients,
                                   std::uint64_t seed,
                                   std::size_t points_per_client = 600,
                                   std::size_t shards_per_client = 2) {
  if (data.size() == 0) throw DataError("cannot shard an empty dataset");
  if (num_clients == 0) throw ConfigError("client count must be >= 1");
  if (shards_per_client == 0 || points_per_client % shards_per_client != 0) {
    throw ConfigError("points_per_client must be a multiple of shards_per_client");
  }
  const std::size_t shard_size = points_per_client / shards_per_client;
  if (shard_size == 0) throw ConfigError("shard size must be >= 1");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.labels[a] < data.labels[b];
  });

  const std::size_t needed = points_per_client * num_clients;
  std::vector<std::size_t> sequence;
  if (needed > order.size()) {
    sequence.resize(needed);
    for (std::size_t i = 0; i < needed; ++i) sequence[i] = order[i % order.size()];
  } else {
    sequence = std::move(order);
  }

  const std::size_t num_shards = sequence.size() / shard_size;
  std::vector<std::size_t> shard_ids(num_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
  Rng rng = MakeStream(seed, {stream::kPartition});
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  ClientPartition part;
  part.shards_per_client = shards_per_client;
  part.points_per_client = points_per_client;
  part.clients.resize(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    auto& idx = part.clients[k];
    idx.reserve(points_per_client);
    for (std::size_t s = 0; s < shards_per_client; ++s) {
      const std::size_t shard = shard_ids[k * shards_per_client + s];
      const auto first = sequence.begin() + static_cast<std::ptrdiff_t>(shard * shard_size);
      idx.insert(idx.end(), first, first + static_cast<std::ptrdiff_t>(shard_size));
    }
  }
  return part;
}

inline std::vector<std::size_t> LabelHistogram(const ClientPartition& partition,
                                               const Dataset& data, std::size_t k,
                                               std::size_t num_classes = kNumClasses) {
  if (k >= partition.num_clients()) {
    throw ConfigError("client " + std::to_string(k) + " out of range (K=" +
                      std::to_string(partition.num_clients()) + ")");
  }
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i : partition.clients[k]) ++counts.at(data.labels.at(i));
  return counts;
}

inline std::size_t DistinctLabels(std::span<const std::size_t> histogram) {
  return static_cast<std::size_t>(
      std::count_if(histogram.begin(), histogram.end(), [](std::size_t c) { return c > 0; }));
}

}  // namespace dpfed

#endif  // DPFED_DATA_HPP_
