#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace blendvq {

enum class Resample { bicubic, bilinear, nearest };

Resample resample_from_string(const std::string& name);
std::string to_string(Resample mode);

// Fixed-order synthetic degradation: Gaussian blur -> downsample -> additive
// Gaussian noise -> clip. Fully determined by the spec; bit-reproducible.
struct DegradationSpec {
    double blur_sigma = 1.2;
    int64_t scale = 4;            // one of {1, 2, 4}
    double noise_std = 0.02;
    Resample resample = Resample::bicubic;
    uint64_t seed = 0;
    void validate() const;
};

torch::Tensor degrade(const torch::Tensor& hr, const DegradationSpec& spec);

// Bicubic x-scale upsampling, clipped to [0,1]; restoration input for SR.
torch::Tensor upsample_image(const torch::Tensor& image, int64_t scale);

// Irregular polyline masks: random strokes rasterized with a random width.
struct MaskSpec {
    int64_t num_strokes = 4;
    int64_t max_vertices = 8;
    int64_t min_width = 3;
    int64_t max_width = 7;
    uint64_t seed = 0;
    void validate() const;
};

// (1,H,W) float64 mask, 1 = hole.
torch::Tensor generate_mask(const MaskSpec& spec, int64_t height, int64_t width);

// Masked pixels become neutral gray (0.5); others pass through.
torch::Tensor apply_mask(const torch::Tensor& image, const torch::Tensor& mask);

// (3,H,W) + (1,H,W) -> (4,H,W) inpainting input with the mask as 4th channel.
torch::Tensor with_mask_channel(const torch::Tensor& image, const torch::Tensor& mask);

// fine label -> super-class mapping, order-stable on super-class first use.
struct LabelMapping {
    std::vector<std::string> super_classes;
    std::unordered_map<std::string, std::string> fine_to_super;

    static LabelMapping load(const std::string& path);
    static LabelMapping from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
    const std::string& super_of(const std::string& fine_label) const;
};

struct LabeledPatch {
    torch::Tensor patch;
    std::string super_class;
};

struct ClassPatches {
    std::string label;
    std::vector<torch::Tensor> patches;
};

// Partitions (patch, fine_label) items by mapped super-class; group order
// follows the mapping's super-class order, items keep input order.
std::vector<ClassPatches> group_patches(
    const std::vector<std::pair<torch::Tensor, std::string>>& items, const LabelMapping& mapping);

// `<relative_path> <fine_label>` lines.
std::vector<std::pair<std::string, std::string>> load_label_file(const std::string& path);

// Procedural texture classes with distinct statistics, one family per
// super-class: checker, stripes, gradient, blobs, noise.
struct ToyDatasetConfig {
    int64_t num_classes = 5;        // K, at most the number of families
    int64_t patches_per_class = 100;
    int64_t patch_size = 64;
    void validate() const;
};

const std::vector<std::string>& toy_class_labels();

std::vector<ClassPatches> synthesize_toy_dataset(const ToyDatasetConfig& config, uint64_t seed);

}  // namespace blendvq
