#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drio/data_model.hpp"

namespace drio {

// Dataset directory layout:
//   meta.json   {name, N, D, T, feature_names, dtype:"f64",
//                layout:"sample-major [N][D][T]", endianness:"little"}
//   values.bin  N*D*T little-endian f64, NaN where mask == 0
//   mask.bin    N*D*T bytes in {0, 1}
//   gtmask.bin  optional, same layout as mask.bin

/// Loads a dataset directory, or a long-format CSV file when `path` ends in
/// ".csv". Unobserved entries are zeroed in memory.
TimeSeriesDataset load_dataset(const std::filesystem::path& path);

/// Writes a dataset directory (creating it if needed). gtmask.bin is written
/// only when the dataset carries one.
void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir);

/// CSV long format: header `sample,feature,time,value,observed`, 0-based
/// indices, one row per entry. Missing rows are treated as unobserved.
TimeSeriesDataset load_dataset_csv(const std::filesystem::path& file);
void save_dataset_csv(const TimeSeriesDataset& ds, const std::filesystem::path& file);

/// Writes only gtmask.bin (atomically) into an existing dataset directory.
void save_gt_mask(const MaskTensor& gt_mask, const std::filesystem::path& dir);

// Little-endian f64 / byte blob helpers shared with the parameter files.
void write_f64_le(std::ostream& os, std::span<const double> values);
std::vector<double> read_f64_le(std::istream& is, std::size_t count);

/// Writes `contents` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// 64-bit FNV-1a over the files of a dataset directory (or a single file).
std::string fingerprint(const std::filesystem::path& path);

}  // namespace drio
