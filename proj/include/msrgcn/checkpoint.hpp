#pragma once

#include <cstddef>
#include <filesystem>

#include "msrgcn/model.hpp"

namespace msrgcn::model {

// Binary layout, little-endian:
//   "MSRG1"                      5 bytes
//   config digest                u64
//   repeated until end of file:
//     path length, path bytes    u32, bytes
//     rows, cols                 u64, u64
//     precision tag              u8 (64 = f64, 32 = f32)
//     values                     rows*cols, row-major

enum class Precision : unsigned char { f32 = 32, f64 = 64 };

void save_checkpoint(const std::filesystem::path& path, const Model& m,
                     Precision precision = Precision::f64);

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;  // records with unknown path or shape (force only)
  bool digest_matched = true;
};

/// Builds the model for `cfg` and fills it from the file. A digest mismatch
/// throws DataError unless `force`, in which case records are remapped by
/// path and shape and the rest keep their fresh initialization.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, bool force = false,
                      LoadReport* report = nullptr);

}  // namespace msrgcn::model
