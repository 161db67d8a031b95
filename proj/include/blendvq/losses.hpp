#pragma once

#include "blendvq/networks.hpp"

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

namespace blendvq {

struct LossWeights {
    double lambda = 0.1;          // adversarial / semantic weight
    double beta = 0.25;           // commitment weight
    double tau = 0.1;             // contrastive temperature
    double adv_warmup_frac = 0.25;  // fraction of iterations before adversarial terms engage
    void validate() const;
};

// Mean absolute difference.
torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b);

// Mean squared distance between frozen extractor features of the two images.
torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b,
                              FeatureExtractor& extractor);

struct AdversarialLosses {
    torch::Tensor generator;       // -mean(fake)
    torch::Tensor discriminator;   // mean(relu(1-real)) + mean(relu(1+fake))
};

// Hinge-form adversarial pair from real/fake logit grids.
AdversarialLosses adversarial_losses(const torch::Tensor& real_logits,
                                     const torch::Tensor& fake_logits);

// ||proj(latent) - phi(image)||^2 mean; the extractor is frozen, gradients
// reach the latent (encoder) and the projection only.
torch::Tensor semantic_loss(const torch::Tensor& latent, const torch::Tensor& image,
                            ConvProj& proj, FeatureExtractor& extractor);

// Contrastive loss on flattened grids with cosine similarity:
// -log( exp(s(a,p)/tau) / (exp(s(a,p)/tau) + sum_n exp(s(a,n)/tau)) ).
torch::Tensor info_nce(const torch::Tensor& anchor, const torch::Tensor& positive,
                       const std::vector<torch::Tensor>& negatives, double tau);

// Mean squared Frobenius distance between channel Gram matrices; Grams are
// normalized by spatial size, the loss by the squared channel count.
torch::Tensor style_loss(const torch::Tensor& a, const torch::Tensor& b);

struct StageObjective {
    torch::Tensor total;
    std::vector<std::pair<std::string, double>> terms;
};

// l1 + per + lambda*adv + vq + lambda*sem
StageObjective stage1_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& vq,
                                const torch::Tensor& sem, double lambda);

// l1 + per + lambda*adv + vq (codebook side of vq carries no gradient when the
// basis is frozen upstream)
StageObjective stage2_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& vq, double lambda);

// info_nce(blended, target) + style(target, blended) + beta*||continuous - sg[target]||^2.
// An empty negatives list drops the contrastive term (single-source batches).
torch::Tensor code_level_loss(const torch::Tensor& blended, const torch::Tensor& target,
                              const torch::Tensor& continuous,
                              const std::vector<torch::Tensor>& negatives, double tau,
                              double beta);

// l1 + per + lambda*adv + code
StageObjective stage3_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& code,
                                double lambda);

}  // namespace blendvq
