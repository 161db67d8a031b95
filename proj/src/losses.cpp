#include "blendvq/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace blendvq {

void LossWeights::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
    if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
    if (adv_warmup_frac < 0.0 || adv_warmup_frac > 1.0) {
        throw std::invalid_argument("adv_warmup_frac must lie in [0,1]");
    }
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }
}

}  // namespace

torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b) {
    check_same_shape(a, b, "l1_loss");
    return (a - b).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b,
                              FeatureExtractor& extractor) {
    check_same_shape(a, b, "perceptual_loss");
    return (extractor->forward(a) - extractor->forward(b)).pow(2).mean();
}

AdversarialLosses adversarial_losses(const torch::Tensor& real_logits,
                                     const torch::Tensor& fake_logits) {
    torch::Tensor disc = torch::relu(1.0 - real_logits).mean() +
                         torch::relu(1.0 + fake_logits).mean();
    torch::Tensor gen = -fake_logits.mean();
    return {gen, disc};
}

torch::Tensor semantic_loss(const torch::Tensor& latent, const torch::Tensor& image,
                            ConvProj& proj, FeatureExtractor& extractor) {
    torch::Tensor projected = proj->forward(latent);
    torch::Tensor features = extractor->forward(image);
    check_same_shape(projected, features, "semantic_loss");
    return (projected - features).pow(2).mean();
}

namespace {

torch::Tensor cosine_flat(const torch::Tensor& a, const torch::Tensor& b) {
    torch::Tensor av = a.reshape({-1});
    torch::Tensor bv = b.reshape({-1});
    torch::Tensor na = av.norm();
    torch::Tensor nb = bv.norm();
    if (na.item<double>() == 0.0 || nb.item<double>() == 0.0) {
        throw std::invalid_argument("info_nce: zero-norm grid");
    }
    return av.dot(bv) / (na * nb);
}

}  // namespace

torch::Tensor info_nce(const torch::Tensor& anchor, const torch::Tensor& positive,
                       const std::vector<torch::Tensor>& negatives, double tau) {
    if (negatives.empty()) {
        throw std::invalid_argument("info_nce: need at least one negative");
    }
    if (tau <= 0.0) {
        throw std::invalid_argument("info_nce: tau must be > 0");
    }
    check_same_shape(anchor, positive, "info_nce");
    std::vector<torch::Tensor> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(cosine_flat(anchor, positive) / tau);
    for (const auto& n : negatives) {
        check_same_shape(anchor, n, "info_nce");
        logits.push_back(cosine_flat(anchor, n) / tau);
    }
    torch::Tensor stacked = torch::stack(logits);
    return torch::logsumexp(stacked, 0) - stacked[0];
}

namespace {

torch::Tensor gram(const torch::Tensor& grid) {
    // (C,h,w) -> channel Gram normalized by spatial size
    torch::Tensor x = grid.reshape({grid.size(0), -1});  // (C, hw)
    double spatial = static_cast<double>(x.size(1));
    return x.matmul(x.transpose(0, 1)) / spatial;
}

}  // namespace

torch::Tensor style_loss(const torch::Tensor& a, const torch::Tensor& b) {
    check_same_shape(a, b, "style_loss");
    if (a.dim() == 4) {
        // mean over batch items
        torch::Tensor total = torch::zeros({}, a.options());
        for (int64_t i = 0; i < a.size(0); ++i) {
            total = total + style_loss(a[i], b[i]);
        }
        return total / static_cast<double>(a.size(0));
    }
    if (a.dim() != 3) {
        throw std::invalid_argument("style_loss: grids must be (C,h,w) or (B,C,h,w)");
    }
    return (gram(a) - gram(b)).pow(2).mean();
}

namespace {

StageObjective make_objective(std::vector<std::pair<std::string, torch::Tensor>> weighted) {
    StageObjective out;
    bool first = true;
    for (auto& [name, value] : weighted) {
        out.total = first ? value : out.total + value;
        first = false;
        out.terms.emplace_back(name, value.item<double>());
    }
    return out;
}

}  // namespace

StageObjective stage1_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& vq,
                                const torch::Tensor& sem, double lambda) {
    StageObjective obj = make_objective({{"l1", l1},
                                         {"per", per},
                                         {"adv", lambda * adv},
                                         {"vq", vq},
                                         {"sem", lambda * sem}});
    return obj;
}

StageObjective stage2_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& vq,
                                double lambda) {
    return make_objective({{"l1", l1}, {"per", per}, {"adv", lambda * adv}, {"vq", vq}});
}

torch::Tensor code_level_loss(const torch::Tensor& blended, const torch::Tensor& target,
                              const torch::Tensor& continuous,
                              const std::vector<torch::Tensor>& negatives, double tau,
                              double beta) {
    check_same_shape(blended, target, "code_level_loss");
    check_same_shape(continuous, target, "code_level_loss");
    torch::Tensor commit = beta * (continuous - target.detach()).pow(2).mean();
    torch::Tensor total = style_loss(target, blended) + commit;
    if (!negatives.empty()) {
        total = info_nce(blended, target, negatives, tau) + total;
    }
    return total;
}

StageObjective stage3_objective(const torch::Tensor& l1, const torch::Tensor& per,
                                const torch::Tensor& adv, const torch::Tensor& code,
                                double lambda) {
    return make_objective({{"l1", l1}, {"per", per}, {"adv", lambda * adv}, {"code", code}});
}

}  // namespace blendvq
