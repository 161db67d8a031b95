#pragma once

#include "blendvq/codebook.hpp"
#include "blendvq/networks.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace blendvq {

// Ordered collection of basis codebooks sharing one latent dimension.
struct BasisSet {
    std::vector<VectorCodebook> codebooks;

    BasisSet() = default;
    explicit BasisSet(std::vector<VectorCodebook> books);

    int64_t size() const { return static_cast<int64_t>(codebooks.size()); }
    int64_t dim() const;
    const VectorCodebook& at(int64_t k) const { return codebooks.at(static_cast<size_t>(k)); }
    const VectorCodebook* find(const std::string& label) const;
    std::vector<std::string> labels() const;
    void validate() const;

    // Subset in the order given; every label must exist.
    BasisSet subset(const std::vector<std::string>& labels) const;

    // One codebook concatenating all entries in basis order.
    VectorCodebook merged(const std::string& label = "merged") const;

    void freeze();
    bool frozen() const;
};

// Quantizes the latent against every basis codebook, in basis order.
std::vector<QuantizeResult> quantize_all(const torch::Tensor& latent, const BasisSet& basis);

// Per-location weighted sum of K grids: out = sum_k w_k * q_k. Linear in both
// arguments; accumulation runs in basis order so one-hot weights reproduce the
// selected grid bit-exactly. Grids (C,h,w)/(B,C,h,w), weights (K,h,w)/(B,K,h,w).
torch::Tensor combine(const std::vector<torch::Tensor>& quantized, const torch::Tensor& weights);

// Checks the weight-map contract: non-negative, per-location sums within 1e-6 of 1.
void validate_weight_map(const torch::Tensor& weights);

// Residual self-attention blocks over the latent grid followed by a 1x1
// projection to K channels and a per-location softmax.
class WeightPredictorImpl : public torch::nn::Module {
public:
    WeightPredictorImpl(const NetworkConfig& config, int64_t num_codebooks);
    torch::Tensor forward(const torch::Tensor& latent);
    int64_t num_codebooks() const { return num_codebooks_; }

private:
    int64_t num_codebooks_;
    int64_t heads_;
    int64_t latent_dim_;
    torch::nn::Conv2d embed_{nullptr}, head_{nullptr};
    std::vector<torch::nn::LayerNorm> attn_norms_, mlp_norms_;
    std::vector<torch::nn::Linear> qkv_, attn_out_, mlp_in_, mlp_out_;
};
TORCH_MODULE(WeightPredictor);

WeightPredictor make_weight_predictor(const NetworkConfig& config, int64_t num_codebooks,
                                      uint64_t seed);

// Writes one grayscale PNG per weight channel, values in [0,1].
void export_weight_maps(const torch::Tensor& weights, const std::string& directory,
                        const std::string& prefix);

}  // namespace blendvq
