#pragma once

#include "blendvq/adaptive.hpp"
#include "blendvq/codebook.hpp"
#include "blendvq/config.hpp"
#include "blendvq/networks.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace blendvq {

// Named tensor collection with a freeze flag; the unit of checkpoint hashing.
struct ParamGroup {
    std::string name;
    bool frozen = false;
    std::vector<std::pair<std::string, torch::Tensor>> tensors;

    uint64_t content_hash() const;
};

// All parameters of one trained stage plus the metadata needed to rebuild it.
// Serialized as a single binary container: magic, JSON manifest (group names,
// shapes, per-group hashes, config snapshot), then raw little-endian float64.
struct Checkpoint {
    int stage = 0;
    int64_t iteration = 0;
    nlohmann::json config_snapshot;
    std::vector<ParamGroup> groups;

    const ParamGroup* find_group(const std::string& name) const;
    ParamGroup& add_group(const std::string& name, bool frozen);
    std::vector<std::string> codebook_labels() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot helpers shared by training and tests.
ParamGroup snapshot_module(const std::string& name, const torch::nn::Module& module, bool frozen);
ParamGroup snapshot_codebook(const VectorCodebook& codebook, bool frozen);
void load_module_group(torch::nn::Module& module, const ParamGroup& group);
VectorCodebook codebook_from_group(const ParamGroup& group);

struct StepRecord {
    int64_t step = 0;
    std::vector<std::pair<std::string, double>> terms;
};
using StepCallback = std::function<void(const StepRecord&)>;

// encode -> per-basis quantize (straight-through) -> predict weights -> blend
// -> decode. The straight-through copies are blended, so decoder gradients
// reach both the encoder (identity, weights sum to 1) and the weight
// predictor (through the blend).
struct AdaptiveForwardResult {
    torch::Tensor continuous;   // encoder output
    std::vector<QuantizeResult> quantized;
    torch::Tensor weights;
    torch::Tensor blended;      // decoder input (straight-through copies blended)
    torch::Tensor blended_raw;  // same values, gradients only through the weights;
                                // feeds the stage-2 vq loss
    torch::Tensor recon;        // raw decoder output
};

AdaptiveForwardResult adaptive_forward(Encoder& encoder, WeightPredictor& predictor,
                                       const BasisSet& basis, Decoder& decoder,
                                       const torch::Tensor& images);
AdaptiveForwardResult restoration_forward(RestorationEncoder& encoder, WeightPredictor& predictor,
                                          const BasisSet& basis, Decoder& decoder,
                                          const torch::Tensor& inputs);

// Rebuilt inference pipelines.
struct Stage2Pipeline {
    NetworkConfig net;
    Encoder encoder{nullptr};
    WeightPredictor predictor{nullptr};
    Decoder decoder{nullptr};
    BasisSet basis;

    static Stage2Pipeline from_checkpoint(const Checkpoint& ckpt);
    AdaptiveForwardResult forward(const torch::Tensor& images);
    torch::Tensor reconstruct(const torch::Tensor& images);  // clipped, no grad
};

struct Stage3Pipeline {
    NetworkConfig net;
    RestorationTask task = RestorationTask::super_resolution;
    RestorationEncoder encoder{nullptr};
    WeightPredictor predictor{nullptr};
    Decoder decoder{nullptr};
    BasisSet basis;

    static Stage3Pipeline from_checkpoint(const Checkpoint& ckpt);
    AdaptiveForwardResult forward(const torch::Tensor& inputs);
    torch::Tensor restore(const torch::Tensor& input);  // clipped, no grad
};

// Degraded/HR and masked/HR pair construction; per-index seeds derive from the
// spec seed so pair i is independent of generation order.
struct RestorationPair {
    torch::Tensor input;  // 3ch upsampled LR (SR) or 4ch masked image + mask (inpainting)
    torch::Tensor hr;
};
std::vector<RestorationPair> build_restoration_pairs(const std::vector<torch::Tensor>& hr_patches,
                                                     RestorationTask task,
                                                     const DegradationSpec& degradation,
                                                     const MaskSpec& mask);

// Stage 1: joint training of encoder, decoder, discriminator, one class
// codebook, and the semantic projection on one class subset.
Checkpoint train_stage1(const RunConfig& config, const std::vector<torch::Tensor>& patches,
                        const std::string& class_label, int64_t codebook_entries,
                        const StepCallback& on_step = {});

// Stage 2: assembles the basis from stage-1 checkpoints (honoring
// config.basis_subset and config.merge_codebooks), freezes it bit-exactly, and
// trains encoder, weight predictor, decoder, discriminator on the mixed set.
Checkpoint train_stage2(const RunConfig& config, const std::vector<Checkpoint>& stage1,
                        const std::vector<torch::Tensor>& patches,
                        const StepCallback& on_step = {});

// Frozen stage-2 forward on an HR image; returns the blended latent.
torch::Tensor compute_z_gt(const torch::Tensor& hr, const Checkpoint& stage2);

// Stage 3: trains the restoration encoder and weight predictor against frozen
// codebooks and a frozen decoder; targets come from the frozen stage-2 model.
Checkpoint train_stage3(const RunConfig& config, const Checkpoint& stage2,
                        const std::vector<torch::Tensor>& hr_patches,
                        const StepCallback& on_step = {});

}  // namespace blendvq
