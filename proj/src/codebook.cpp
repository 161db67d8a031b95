#include "blendvq/codebook.hpp"

#include <cmath>
#include <stdexcept>

namespace blendvq {

VectorCodebook VectorCodebook::uniform_init(int64_t num_entries, int64_t dim, std::string label,
                                            uint64_t seed) {
    if (num_entries < 1 || dim < 1) {
        throw std::invalid_argument("codebook needs at least one entry and one dimension");
    }
    if (label.empty()) {
        throw std::invalid_argument("codebook class label must be non-empty");
    }
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
    double bound = 1.0 / static_cast<double>(num_entries);
    torch::Tensor entries =
        (torch::rand({num_entries, dim}, gen, torch::kFloat64) * 2.0 - 1.0) * bound;
    entries.set_requires_grad(true);
    return VectorCodebook{entries, std::move(label)};
}

void VectorCodebook::validate() const {
    if (!entries.defined() || entries.dim() != 2 || entries.size(0) < 1 || entries.size(1) < 1) {
        throw std::invalid_argument("codebook entries must be a non-empty (N, n_z) matrix");
    }
    if (class_label.empty()) {
        throw std::invalid_argument("codebook class label must be non-empty");
    }
    if (!entries.isfinite().all().item<bool>()) {
        throw std::invalid_argument("codebook '" + class_label + "' contains non-finite entries");
    }
}

namespace {

torch::Tensor ensure_batched(const torch::Tensor& latent, bool& was_3d) {
    if (latent.dim() == 3) {
        was_3d = true;
        return latent.unsqueeze(0);
    }
    if (latent.dim() == 4) {
        was_3d = false;
        return latent;
    }
    throw std::invalid_argument("latent grid must be (n_z,h,w) or (B,n_z,h,w)");
}

}  // namespace

QuantizeResult quantize(const torch::Tensor& latent, const VectorCodebook& codebook) {
    bool was_3d = false;
    torch::Tensor z = ensure_batched(latent, was_3d);
    if (z.size(1) != codebook.dim()) {
        throw std::invalid_argument("latent channel dim " + std::to_string(z.size(1)) +
                                    " does not match codebook dim " +
                                    std::to_string(codebook.dim()));
    }
    const int64_t batch = z.size(0);
    const int64_t height = z.size(2);
    const int64_t width = z.size(3);
    const int64_t num_entries = codebook.size();

    // (L, n_z) rows of latent vectors.
    torch::Tensor flat =
        z.permute({0, 2, 3, 1}).reshape({batch * height * width, codebook.dim()});

    torch::Tensor indices = torch::empty({batch * height * width}, torch::kInt64);
    {
        torch::NoGradGuard no_grad;
        torch::Tensor dist =
            (flat.detach().unsqueeze(1) - codebook.entries.detach().unsqueeze(0))
                .pow(2)
                .sum(-1);  // (L, N)
        auto dist_acc = dist.accessor<double, 2>();
        auto idx_acc = indices.accessor<int64_t, 1>();
        for (int64_t i = 0; i < dist.size(0); ++i) {
            int64_t best = 0;
            double best_dist = dist_acc[i][0];
            for (int64_t c = 1; c < num_entries; ++c) {
                if (dist_acc[i][c] < best_dist) {  // strict: ties keep the lowest index
                    best_dist = dist_acc[i][c];
                    best = c;
                }
            }
            idx_acc[i] = best;
        }
    }

    torch::Tensor quantized = codebook.entries.index_select(0, indices)
                                  .reshape({batch, height, width, codebook.dim()})
                                  .permute({0, 3, 1, 2});
    torch::Tensor index_grid = indices.reshape({batch, height, width});
    if (was_3d) {
        quantized = quantized.squeeze(0);
        index_grid = index_grid.squeeze(0);
    }
    return {quantized, index_grid};
}

torch::Tensor straight_through(const torch::Tensor& continuous, const torch::Tensor& quantized) {
    if (continuous.sizes() != quantized.sizes()) {
        throw std::invalid_argument("straight_through: shape mismatch");
    }
    return continuous + (quantized - continuous).detach();
}

torch::Tensor vq_loss(const torch::Tensor& continuous, const torch::Tensor& quantized,
                      double beta) {
    if (continuous.sizes() != quantized.sizes()) {
        throw std::invalid_argument("vq_loss: shape mismatch");
    }
    if (beta < 0.0) {
        throw std::invalid_argument("vq_loss: beta must be >= 0");
    }
    torch::Tensor codebook_term = (continuous.detach() - quantized).pow(2).mean();
    torch::Tensor commit_term = (continuous - quantized.detach()).pow(2).mean();
    return codebook_term + beta * commit_term;
}

std::vector<int64_t> code_usage(const torch::Tensor& indices, int64_t num_entries) {
    if (num_entries < 1) {
        throw std::invalid_argument("code_usage: need at least one entry");
    }
    torch::Tensor flat = indices.reshape({-1}).to(torch::kInt64).contiguous();
    std::vector<int64_t> histogram(static_cast<size_t>(num_entries), 0);
    auto acc = flat.accessor<int64_t, 1>();
    for (int64_t i = 0; i < flat.size(0); ++i) {
        int64_t idx = acc[i];
        if (idx < 0 || idx >= num_entries) {
            throw std::invalid_argument("code_usage: index " + std::to_string(idx) +
                                        " out of range [0," + std::to_string(num_entries) + ")");
        }
        ++histogram[static_cast<size_t>(idx)];
    }
    return histogram;
}

torch::Tensor visualize_code(const VectorCodebook& codebook, int64_t index,
                             const DecoderHandle& decoder) {
    if (index < 0 || index >= codebook.size()) {
        throw std::invalid_argument("visualize_code: index " + std::to_string(index) +
                                    " out of range [0," + std::to_string(codebook.size()) + ")");
    }
    torch::Tensor entry = codebook.entries.detach().index({index});  // (n_z)
    torch::Tensor grid = entry.reshape({1, codebook.dim(), 1, 1}).expand({1, codebook.dim(), 4, 4});
    torch::Tensor patch = decoder(grid.contiguous());
    if (patch.dim() == 4) {
        patch = patch.squeeze(0);
    }
    return patch.clamp(0.0, 1.0);
}

}  // namespace blendvq
