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

#ifndef DPFED_MODEL_IO_HPP_
#define DPFED_MODEL_IO_HPP_

// model.bin: u64 layer count, u64 layer sizes, then the flat parameter
// values as IEEE-754 doubles. Everything little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "dpfed/errors.hpp"
#include "dpfed/model.hpp"

namespace dpfed {

namespace internal {

static_assert(std::endian::native == std::endian::little,
              "model.bin IO assumes a little-endian host");

inline void PutU64(std::vector<char>& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.insert(out.end(), buf, buf + 8);
}

inline std::uint64_t GetU64(std::span<const char> in, std::size_t& pos) {
  if (in.size() - pos < 8) throw TruncationError("model file truncated");
  std::uint64_t v;
  std::memcpy(&v, in.data() + pos, 8);
  pos += 8;
  return v;
}

}  // namespace internal

inline std::vector<char> SerializeModel(const ModelParams& params) {
  std::vector<char> out;
  out.reserve(8 * (1 + params.arch.size() + params.values.size()));
  internal::PutU64(out, params.arch.size());
  for (std::size_t s : params.arch) internal::PutU64(out, s);
  for (double v : params.values) internal::PutU64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline ModelParams DeserializeModel(std::span<const char> bytes) {
  std::size_t pos = 0;
  const std::uint64_t layers = internal::GetU64(bytes, pos);
  if (layers < 2 || layers > 1024) throw FormatError("implausible layer count in model file");
  ModelParams p;
  for (std::uint64_t i = 0; i < layers; ++i) p.arch.push_back(internal::GetU64(bytes, pos));
  ValidateArchitecture(p.arch);
  const std::size_t n = ParameterCount(p.arch);
  if ((bytes.size() - pos) / 8 < n) throw TruncationError("model file truncated");
  p.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.values[i] = std::bit_cast<double>(internal::GetU64(bytes, pos));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after model values");
  return p;
}

inline void WriteModelFile(const ModelParams& params, const std::filesystem::path& path) {
  const std::vector<char> bytes = SerializeModel(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline ModelParams ReadModelFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DeserializeModel(bytes);
}

}  // namespace dpfed

#endif  // DPFED_MODEL_IO_HPP_
