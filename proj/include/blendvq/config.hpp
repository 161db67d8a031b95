#pragma once

#include "blendvq/degradation.hpp"
#include "blendvq/losses.hpp"
#include "blendvq/networks.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace blendvq {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class RestorationTask { super_resolution, inpainting };

RestorationTask task_from_string(const std::string& name);
std::string to_string(RestorationTask task);

struct StageTrainConfig {
    int64_t iterations = 2000;
    int64_t batch_size = 8;
    double lr_generator = 1e-4;
    double lr_discriminator = 4e-4;
    void validate() const;
};

// One structured config drives every command. A resolved snapshot is written
// next to each run's outputs so any run can be reproduced from it.
struct RunConfig {
    uint64_t seed = 1;
    std::string output_root = "out";
    int threads = 1;

    NetworkConfig network;
    LossWeights loss;

    // dataset
    ToyDatasetConfig data;
    int64_t eval_patches_per_class = 16;
    std::string data_root;      // where synth-data writes / train reads
    std::string label_file;     // optional external dataset: <relative_path> <fine_label>
    std::string mapping_file;   // optional: <fine_label> <super_class>

    // codebooks: one size per class (cycled if shorter than the class count)
    std::vector<int64_t> codebook_sizes = {64};

    StageTrainConfig stage1, stage2, stage3;

    std::vector<std::string> basis_subset;  // empty = all stage-1 codebooks
    bool merge_codebooks = false;           // concatenate the basis into one codebook

    RestorationTask task = RestorationTask::super_resolution;
    DegradationSpec degradation;
    MaskSpec mask;

    int64_t codebook_size_for(int64_t class_index) const;

    static RunConfig desk_preset();
    static RunConfig paper_preset();

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    void validate() const;  // throws ConfigError
};

}  // namespace blendvq
