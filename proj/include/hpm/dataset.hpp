#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hpm/volume.hpp"
#include "json.hpp"

namespace hpm {

struct DatasetSpec {
    int64_t num_cases = 32;
    int64_t grid_size = 64;
    int num_organs = 4;
    float noise_sigma = 0.02f;
    double train_fraction = 0.75;
    double val_fraction = 0.0;  // remainder is test
    uint64_t seed = 0;
};

struct DatasetManifest {
    std::vector<std::string> case_ids;
    std::vector<std::string> splits;  // "train" / "val" / "test", parallel to case_ids
    std::vector<std::string> class_names;
    int num_classes = 0;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

// Writes one volume container per case plus manifest.json with a
// deterministic train/val/test split. Refuses a non-empty directory unless
// force is set.
DatasetManifest generate_dataset(const DatasetSpec& spec,
                                 const std::filesystem::path& dir, bool force = false);

DatasetManifest load_manifest(const std::filesystem::path& dir);
std::vector<Volume> load_split(const std::filesystem::path& dir,
                               const std::string& split);

}  // namespace hpm
