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

#include "dpfed/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "gtest/gtest.h"
#include "dpfed/errors.hpp"
#include "test_util.hpp"

namespace dpfed {
namespace {

using testing::LabelOnlyDataset;
using testing::MnistLikeLabels;

std::vector<std::uint8_t> Bytes(std::initializer_list<int> v) {
  return std::vector<std::uint8_t>(v.begin(), v.end());
}

TEST(ParseIdxImagesTest, SingleTwoByTwoImage) {
  const auto bytes = Bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 10, 20, 30, 255});
  const RawImages img = ParseIdxImages(bytes);
  EXPECT_EQ(img.count, 1u);
  EXPECT_EQ(img.rows, 2u);
  EXPECT_EQ(img.cols, 2u);
  EXPECT_EQ(img.pixels, Bytes({10, 20, 30, 255}));
}

TEST(ParseIdxImagesTest, LabelMagicIsFormatError) {
  const auto bytes = Bytes({0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4});
  EXPECT_THROW(ParseIdxImages(bytes), FormatError);
}

TEST(ParseIdxImagesTest, ShortPayloadIsTruncationError) {
  EXPECT_THROW(ParseIdxImages(Bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3})),
               TruncationError);
  EXPECT_THROW(ParseIdxImages(Bytes({0, 0, 8, 3, 0, 0})), TruncationError);
}

TEST(ParseIdxLabelsTest, SingleLabel) {
  EXPECT_EQ(ParseIdxLabels(Bytes({0, 0, 8, 1, 0, 0, 0, 1, 7})), std::vector<Label>{7});
}

TEST(ParseIdxLabelsTest, TruncatedStream) {
  EXPECT_THROW(ParseIdxLabels(Bytes({0, 0, 8, 1, 0, 0, 0, 3, 7, 1})), TruncationError);
  EXPECT_THROW(ParseIdxLabels(Bytes({0, 0, 8})), TruncationError);
}

TEST(ParseIdxLabelsTest, OutOfRangeLabelIsDataError) {
  EXPECT_THROW(ParseIdxLabels(Bytes({0, 0, 8, 1, 0, 0, 0, 2, 3, 10})), DataError);
}

TEST(ParseIdxLabelsTest, ImageMagicIsFormatError) {
  EXPECT_THROW(ParseIdxLabels(Bytes({0, 0, 8, 3, 0, 0, 0, 1, 7})), FormatError);
}

TEST(ReadMaybeGzippedTest, ReadsPlainAndCompressedFiles) {
  const auto dir = testing::TempDir("gzip");
  const auto payload = Bytes({0, 0, 8, 1, 0, 0, 0, 3, 4, 5, 6});
  {
    std::ofstream out(dir / "plain", std::ios::binary);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  }
  gzFile gz = gzopen((dir / "packed.gz").string().c_str(), "wb");
  ASSERT_NE(gz, nullptr);
  gzwrite(gz, payload.data(), static_cast<unsigned>(payload.size()));
  gzclose(gz);

  EXPECT_EQ(ReadMaybeGzipped(dir / "plain"), payload);
  EXPECT_EQ(ReadMaybeGzipped(dir / "packed.gz"), payload);
  EXPECT_EQ(ReadMaybeGzipped(dir / "packed"), payload);  // ".gz" fallback
  EXPECT_THROW(ReadMaybeGzipped(dir / "missing"), IoError);
}

TEST(MakeDatasetTest, ScalesPixelsToUnitInterval) {
  RawImages img{2, 1, 2, {0, 255, 51, 102}};
  const Dataset d = MakeDataset(img, {1, 2});
  EXPECT_EQ(d.features(0, 0), 0.0);
  EXPECT_EQ(d.features(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(d.features(1, 0), 0.2);
  EXPECT_THROW(MakeDataset(img, {1}), DataError);
}

TEST(ShardNonIidTest, HundredClientsUseEveryPointOnce) {
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  const ClientPartition p = ShardNonIid(d, 100, 42);
  ASSERT_EQ(p.num_clients(), 100u);
  std::vector<int> seen(d.size(), 0);
  for (const auto& c : p.clients) {
    EXPECT_EQ(c.size(), 600u);
    for (std::size_t i : c) ++seen[i];
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST(ShardNonIidTest, LargeKRepeatsPoints) {
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  for (std::size_t k : {1000u, 10000u}) {
    const ClientPartition p = ShardNonIid(d, k, 3);
    ASSERT_EQ(p.num_clients(), k);
    std::vector<int> seen(d.size(), 0);
    for (const auto& c : p.clients) {
      ASSERT_EQ(c.size(), 600u);
      for (std::size_t i : c) ++seen[i];
    }
    const int expected = static_cast<int>(k / 100);
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [&](int s) { return s == expected; }))
        << "K=" << k;
  }
}

TEST(ShardNonIidTest, DeterministicGivenSeed) {
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  EXPECT_EQ(ShardNonIid(d, 100, 9).clients, ShardNonIid(d, 100, 9).clients);
  EXPECT_NE(ShardNonIid(d, 100, 9).clients, ShardNonIid(d, 100, 10).clients);
}

TEST(ShardNonIidTest, ShardsAreContiguousRunsOfSortedOrder) {
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d.labels[a] < d.labels[b]; });
  std::vector<std::size_t> rank(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;

  const ClientPartition p = ShardNonIid(d, 1000, 5);
  for (const auto& c : p.clients) {
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t j = 1; j < 300; ++j) {
        const std::size_t prev = rank[c[s * 300 + j - 1]];
        const std::size_t cur = rank[c[s * 300 + j]];
        ASSERT_EQ(cur, (prev + 1) % d.size());
      }
    }
  }
}

TEST(ShardNonIidTest, SingleClientOnTinySetTilesData) {
  const Dataset d = LabelOnlyDataset({1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  const ClientPartition p = ShardNonIid(d, 1, 0);
  ASSERT_EQ(p.num_clients(), 1u);
  ASSERT_EQ(p.clients[0].size(), 600u);
  const auto hist = LabelHistogram(p, d, 0, 2);
  EXPECT_EQ(hist[0] + hist[1], 600u);
  EXPECT_EQ(hist[0], 300u);  // tiled label order: five 0s then five 1s, repeated
}

TEST(ShardNonIidTest, ErrorPaths) {
  EXPECT_THROW(ShardNonIid(LabelOnlyDataset({}), 10, 0), DataError);
  EXPECT_THROW(ShardNonIid(LabelOnlyDataset({1, 2}), 0, 0), ConfigError);
}

TEST(LabelHistogramTest, CountsSumToSixHundred) {
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  const ClientPartition p = ShardNonIid(d, 100, 1);
  for (std::size_t k = 0; k < 100; ++k) {
    const auto h = LabelHistogram(p, d, k);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::size_t{0}), 600u);
  }
  EXPECT_THROW(LabelHistogram(p, d, 100), ConfigError);
}

TEST(LabelHistogramTest, ClientsSeeFewDigits) {
  // Enumerate every client: a 300-point shard of the sorted order crosses at
  // most one class boundary (every class has > 300 points), so <= 4 labels.
  const Dataset d = LabelOnlyDataset(MnistLikeLabels());
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ClientPartition p = ShardNonIid(d, 100, seed);
    std::map<std::size_t, int> by_distinct;
    for (std::size_t k = 0; k < 100; ++k) ++by_distinct[DistinctLabels(LabelHistogram(p, d, k))];
    EXPECT_LE(by_distinct.rbegin()->first, 4u);
    const auto mode = std::max_element(by_distinct.begin(), by_distinct.end(),
                                       [](auto a, auto b) { return a.second < b.second; });
    EXPECT_EQ(mode->first, 2u);
  }
}

TEST(LabelHistogramTest, SingleDigitBlockGivesOneLabel) {
  const Dataset d = LabelOnlyDataset(std::vector<Label>(6000, 3));
  const ClientPartition p = ShardNonIid(d, 10, 4);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(DistinctLabels(LabelHistogram(p, d, k)), 1u);
}

TEST(MnistFilesTest, OfficialTrainAndTestSets) {
  if (!testing::HaveMnist()) GTEST_SKIP() << "MNIST files not found in " << testing::MnistDir();
  const Mnist m = LoadMnist(testing::MnistDir());
  EXPECT_EQ(m.train.size(), 60000u);
  EXPECT_EQ(m.train.input_dim(), 784u);
  EXPECT_EQ(m.test.size(), 10000u);
  EXPECT_GE(m.train.features.minCoeff(), 0.0);
  EXPECT_LE(m.train.features.maxCoeff(), 1.0);
  const auto raw = ReadMaybeGzipped(testing::MnistDir() / "train-images-idx3-ubyte");
  const RawImages img = ParseIdxImages(raw);
  EXPECT_EQ(img.rows, 28u);
  EXPECT_EQ(img.cols, 28u);
}

}  // namespace
}  // namespace dpfed
