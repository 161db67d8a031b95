#include "blendvq/adaptive.hpp"

#include "blendvq/hashing.hpp"
#include "blendvq/image_io.hpp"

#include <filesystem>
#include <set>
#include <stdexcept>

namespace blendvq {

BasisSet::BasisSet(std::vector<VectorCodebook> books) : codebooks(std::move(books)) {
    validate();
}

int64_t BasisSet::dim() const {
    if (codebooks.empty()) {
        throw std::invalid_argument("basis set is empty");
    }
    return codebooks.front().dim();
}

const VectorCodebook* BasisSet::find(const std::string& label) const {
    for (const auto& cb : codebooks) {
        if (cb.class_label == label) return &cb;
    }
    return nullptr;
}

std::vector<std::string> BasisSet::labels() const {
    std::vector<std::string> out;
    out.reserve(codebooks.size());
    for (const auto& cb : codebooks) out.push_back(cb.class_label);
    return out;
}

void BasisSet::validate() const {
    if (codebooks.empty()) {
        throw std::invalid_argument("basis set needs at least one codebook");
    }
    std::set<std::string> seen;
    int64_t dim = codebooks.front().dim();
    for (const auto& cb : codebooks) {
        cb.validate();
        if (cb.dim() != dim) {
            throw std::invalid_argument("basis codebooks disagree on latent dim: " +
                                        std::to_string(cb.dim()) + " vs " + std::to_string(dim));
        }
        if (!seen.insert(cb.class_label).second) {
            throw std::invalid_argument("duplicate codebook label '" + cb.class_label + "'");
        }
    }
}

BasisSet BasisSet::subset(const std::vector<std::string>& labels) const {
    std::vector<VectorCodebook> picked;
    for (const auto& label : labels) {
        const VectorCodebook* cb = find(label);
        if (cb == nullptr) {
            throw std::invalid_argument("basis subset: unknown label '" + label + "'");
        }
        picked.push_back(*cb);
    }
    return BasisSet(std::move(picked));
}

VectorCodebook BasisSet::merged(const std::string& label) const {
    validate();
    std::vector<torch::Tensor> parts;
    parts.reserve(codebooks.size());
    for (const auto& cb : codebooks) parts.push_back(cb.entries.detach());
    torch::Tensor entries = torch::cat(parts, 0).clone();
    return VectorCodebook{entries, label};
}

void BasisSet::freeze() {
    for (auto& cb : codebooks) {
        cb.entries.set_requires_grad(false);
    }
}

bool BasisSet::frozen() const {
    for (const auto& cb : codebooks) {
        if (cb.entries.requires_grad()) return false;
    }
    return true;
}

std::vector<QuantizeResult> quantize_all(const torch::Tensor& latent, const BasisSet& basis) {
    basis.validate();
    if ((latent.dim() == 3 ? latent.size(0) : latent.size(1)) != basis.dim()) {
        throw std::invalid_argument("quantize_all: latent channel dim does not match basis dim");
    }
    std::vector<QuantizeResult> out;
    out.reserve(static_cast<size_t>(basis.size()));
    for (const auto& cb : basis.codebooks) {
        out.push_back(quantize(latent, cb));
    }
    return out;
}

torch::Tensor combine(const std::vector<torch::Tensor>& quantized, const torch::Tensor& weights) {
    if (quantized.empty()) {
        throw std::invalid_argument("combine: no quantized grids");
    }
    const int64_t num_books = static_cast<int64_t>(quantized.size());
    const auto& first = quantized.front();
    for (const auto& q : quantized) {
        if (q.sizes() != first.sizes()) {
            throw std::invalid_argument("combine: quantized grids disagree on shape");
        }
    }
    const bool batched = first.dim() == 4;
    if (!batched && first.dim() != 3) {
        throw std::invalid_argument("combine: grids must be (C,h,w) or (B,C,h,w)");
    }
    torch::Tensor w = weights;
    if (w.dim() != first.dim()) {
        throw std::invalid_argument("combine: weights rank must match the grids");
    }
    const int64_t k_axis = batched ? 1 : 0;
    if (w.size(k_axis) != num_books) {
        throw std::invalid_argument("combine: weight channels " + std::to_string(w.size(k_axis)) +
                                    " != number of grids " + std::to_string(num_books));
    }
    if (batched && w.size(0) != first.size(0)) {
        throw std::invalid_argument("combine: weight batch dim mismatch");
    }
    if (w.size(w.dim() - 2) != first.size(first.dim() - 2) ||
        w.size(w.dim() - 1) != first.size(first.dim() - 1)) {
        throw std::invalid_argument("combine: weight spatial dims mismatch");
    }
    torch::Tensor out;
    for (int64_t k = 0; k < num_books; ++k) {
        torch::Tensor wk = batched ? w.narrow(1, k, 1) : w.narrow(0, k, 1);
        torch::Tensor term = wk * quantized[static_cast<size_t>(k)];
        out = k == 0 ? term : out + term;
    }
    return out;
}

void validate_weight_map(const torch::Tensor& weights) {
    if (weights.dim() != 3 && weights.dim() != 4) {
        throw std::invalid_argument("weight map must be (K,h,w) or (B,K,h,w)");
    }
    if ((weights < 0).any().item<bool>()) {
        throw std::invalid_argument("weight map has negative entries");
    }
    torch::Tensor sums = weights.sum(weights.dim() == 3 ? 0 : 1);
    if ((sums - 1.0).abs().max().item<double>() > 1e-6) {
        throw std::invalid_argument("weight map locations do not sum to 1 within 1e-6");
    }
}

WeightPredictorImpl::WeightPredictorImpl(const NetworkConfig& config, int64_t num_codebooks)
    : num_codebooks_(num_codebooks),
      heads_(config.predictor_heads),
      latent_dim_(config.latent_dim) {
    config.validate();
    if (num_codebooks < 1) {
        throw std::invalid_argument("weight predictor needs K >= 1");
    }
    const int64_t dim = config.predictor_dim;
    embed_ = register_module(
        "embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_dim, dim, 1)));
    for (int64_t b = 0; b < config.predictor_blocks; ++b) {
        std::string tag = std::to_string(b);
        attn_norms_.push_back(register_module(
            "attn_norm" + tag, torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}))));
        qkv_.push_back(register_module("qkv" + tag, torch::nn::Linear(dim, 3 * dim)));
        attn_out_.push_back(register_module("attn_out" + tag, torch::nn::Linear(dim, dim)));
        mlp_norms_.push_back(register_module(
            "mlp_norm" + tag, torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}))));
        mlp_in_.push_back(register_module("mlp_in" + tag, torch::nn::Linear(dim, 2 * dim)));
        mlp_out_.push_back(register_module("mlp_out" + tag, torch::nn::Linear(2 * dim, dim)));
    }
    head_ = register_module(
        "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, num_codebooks, 1)));
}

torch::Tensor WeightPredictorImpl::forward(const torch::Tensor& latent) {
    bool was_3d = latent.dim() == 3;
    torch::Tensor z = was_3d ? latent.unsqueeze(0) : latent;
    if (z.dim() != 4 || z.size(1) != latent_dim_) {
        throw std::invalid_argument("weight predictor: expected latent with n_z = " +
                                    std::to_string(latent_dim_));
    }
    const int64_t batch = z.size(0);
    const int64_t height = z.size(2);
    const int64_t width = z.size(3);
    const int64_t tokens = height * width;

    torch::Tensor x = embed_(z);                                    // (B, D, h, w)
    const int64_t dim = x.size(1);
    x = x.flatten(2).transpose(1, 2);                               // (B, hw, D)
    const int64_t head_dim = dim / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (size_t b = 0; b < qkv_.size(); ++b) {
        torch::Tensor h = attn_norms_[b](x);
        torch::Tensor qkv = qkv_[b](h).reshape({batch, tokens, 3, heads_, head_dim});
        torch::Tensor q = qkv.select(2, 0).transpose(1, 2);          // (B, heads, hw, d)
        torch::Tensor k = qkv.select(2, 1).transpose(1, 2);
        torch::Tensor v = qkv.select(2, 2).transpose(1, 2);
        torch::Tensor attn = torch::softmax(q.matmul(k.transpose(-2, -1)) * scale, -1);
        torch::Tensor ctx = attn.matmul(v).transpose(1, 2).reshape({batch, tokens, dim});
        x = x + attn_out_[b](ctx);
        torch::Tensor m = mlp_norms_[b](x);
        x = x + mlp_out_[b](torch::gelu(mlp_in_[b](m)));
    }

    x = x.transpose(1, 2).reshape({batch, dim, height, width});
    torch::Tensor logits = head_(x);                                 // (B, K, h, w)
    torch::Tensor weights = torch::softmax(logits, 1);
    return was_3d ? weights.squeeze(0) : weights;
}

WeightPredictor make_weight_predictor(const NetworkConfig& config, int64_t num_codebooks,
                                      uint64_t seed) {
    torch::manual_seed(mix_seed(seed, "weight_predictor"));
    WeightPredictor predictor(config, num_codebooks);
    predictor->to(torch::kFloat64);
    return predictor;
}

void export_weight_maps(const torch::Tensor& weights, const std::string& directory,
                        const std::string& prefix) {
    torch::Tensor w = weights.dim() == 4 ? weights.squeeze(0) : weights;
    if (w.dim() != 3) {
        throw std::invalid_argument("export_weight_maps expects a single weight map");
    }
    std::filesystem::create_directories(directory);
    for (int64_t k = 0; k < w.size(0); ++k) {
        std::string path =
            (std::filesystem::path(directory) / (prefix + "_w" + std::to_string(k) + ".png"))
                .string();
        write_png(path, w.narrow(0, k, 1));
    }
}

}  // namespace blendvq
