#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

namespace blendvq {

// A learnable table of latent code vectors for one semantic super-class.
struct VectorCodebook {
    torch::Tensor entries;    // (N, n_z) float64
    std::string class_label;

    int64_t size() const { return entries.size(0); }
    int64_t dim() const { return entries.size(1); }

    // i.i.d. uniform init on [-1/N, +1/N].
    static VectorCodebook uniform_init(int64_t num_entries, int64_t dim, std::string label,
                                       uint64_t seed);
    void validate() const;
};

struct QuantizeResult {
    torch::Tensor quantized;  // same shape as the input latent; rows are codebook entries
    torch::Tensor indices;    // int64, latent shape minus the channel dim
};

// Replaces each latent vector with its nearest codebook entry under squared
// Euclidean distance. Ties break toward the lowest entry index. The returned
// quantized grid is differentiable w.r.t. the codebook entries (an index
// lookup), not w.r.t. the latent. Accepts (n_z,h,w) or (B,n_z,h,w).
QuantizeResult quantize(const torch::Tensor& latent, const VectorCodebook& codebook);

// continuous + stop_gradient(quantized - continuous): forward takes the
// quantized values, backward passes gradients straight to `continuous`.
torch::Tensor straight_through(const torch::Tensor& continuous, const torch::Tensor& quantized);

// ||sg[continuous] - quantized||^2 + beta * ||continuous - sg[quantized]||^2,
// each term a mean over all elements. Term 1 only reaches the quantized side,
// term 2 only the continuous side.
torch::Tensor vq_loss(const torch::Tensor& continuous, const torch::Tensor& quantized,
                      double beta);

// Per-entry usage counts for a grid of code indices.
std::vector<int64_t> code_usage(const torch::Tensor& indices, int64_t num_entries);

using DecoderHandle = std::function<torch::Tensor(const torch::Tensor&)>;

// Tiles one code entry over a 4x4 latent grid, decodes it, and clips the
// result to [0,1]; a decoder with downsample factor f yields a 4f x 4f patch.
torch::Tensor visualize_code(const VectorCodebook& codebook, int64_t index,
                             const DecoderHandle& decoder);

}  // namespace blendvq
