#pragma once

#include "msinfer/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msinfer {

inline constexpr int kBundleSchemaVersion = 1;

struct ParamRanges {
    std::pair<double, double> lambda;
    std::pair<double, double> nu;

    friend bool operator==(const ParamRanges&, const ParamRanges&) = default;
};

struct BundleMetadata {
    int schema_version = kBundleSchemaVersion;
    std::optional<Family> model;
    std::uint64_t seed = 0;
    std::string role = "fields";   // "fields" or "series" (time slices of a gridded series)
    std::string scale = "frechet"; // "frechet" or "raw"
    std::optional<ParamRanges> param_ranges;

    friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

/// A set of samples sharing one grid.
struct DatasetBundle {
    BundleMetadata meta;
    std::vector<FieldSample> samples;

    [[nodiscard]] const Grid& grid() const;
    /// Schema errors: empty bundle, mixed grids, value/grid size mismatch,
    /// partially present params, sample model disagreeing with metadata.
    void validate() const;

    friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

/// `<base>.bin` and `<base>.meta.json`. A path already ending in either
/// suffix is reduced to its base first.
struct BundlePaths {
    std::filesystem::path bin;
    std::filesystem::path meta;
};
[[nodiscard]] BundlePaths bundle_paths(const std::filesystem::path& path);

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& path);
[[nodiscard]] DatasetBundle load_bundle(const std::filesystem::path& path);

/// Little-endian float64 helpers shared with the network weight files.
void write_f64_le(const std::filesystem::path& path, const std::vector<double>& values);
[[nodiscard]] std::vector<double> read_f64_le(const std::filesystem::path& path);

}  // namespace msinfer
