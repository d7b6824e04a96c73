#pragma once

// Checkpoint directories: metadata.json plus one raw little-endian float32
// file per named array (row-major). See docs/formats.md.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "umind/error.hpp"
#include "umind/nn/graph.hpp"

namespace umind::checkpoint {

struct NamedArray {
  std::string name;
  nn::Matrix value;
};

struct Checkpoint {
  std::string kind;           // "motion_codec" or "lm"
  std::string metadata_json;  // serialized JSON object owned by the caller
  std::vector<NamedArray> arrays;

  const nn::Matrix& array(const std::string& name) const;
};

void write(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint read(const std::filesystem::path& dir);

// Raw float32 helpers shared with the corpus format.
void write_f32(const std::filesystem::path& file, const double* data, std::size_t count);
// Throws Error(on_mismatch) unless the file holds exactly `expected` values.
std::vector<double> read_f32(const std::filesystem::path& file, std::size_t expected,
                             ErrorCode on_mismatch);

}  // namespace umind::checkpoint
