// Temporary calibration probe for the ordering experiment. Not a test.
#include "blendvq/config.hpp"
#include "blendvq/degradation.hpp"
#include "blendvq/hashing.hpp"
#include "blendvq/metrics.hpp"
#include "blendvq/networks.hpp"
#include "blendvq/training.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>

using namespace blendvq;

namespace {

RunConfig probe_config(uint64_t seed, int64_t iters, double lr) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.threads = 1;
    cfg.network.downsample_factor = 8;
    cfg.network.latent_dim = 16;
    cfg.network.channels = {16, 32, 64};
    cfg.network.feature_dim = 32;
    cfg.network.predictor_dim = 32;
    cfg.network.predictor_blocks = 2;
    cfg.network.predictor_heads = 2;
    cfg.data.num_classes = 3;
    cfg.data.patches_per_class = 48;
    cfg.data.patch_size = 32;
    cfg.loss.adv_warmup_frac = 1.0;  // adversarial off for ordering runs
    for (auto* st : {&cfg.stage1, &cfg.stage2, &cfg.stage3}) {
        st->iterations = iters;
        st->batch_size = 4;
        st->lr_generator = lr;
        st->lr_discriminator = 4 * lr;
    }
    return cfg;
}

double eval_psnr(const Checkpoint& ckpt,
                 const std::vector<std::pair<std::string, torch::Tensor>>& eval_set) {
    EvalReport rep = evaluate("reconstruction", ckpt, eval_set, DegradationSpec{}, MaskSpec{});
    return rep.mean_psnr;
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    int64_t iters = argc > 1 ? std::atoll(argv[1]) : 700;
    double lr = argc > 2 ? std::atof(argv[2]) : 1e-3;
    int64_t entries = argc > 3 ? std::atoll(argv[3]) : 32;
    uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 1;

    RunConfig cfg = probe_config(seed, iters, lr);
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0]() {
        auto now = std::chrono::steady_clock::now();
        double s = std::chrono::duration<double>(now - t0).count();
        t0 = now;
        return s;
    };

    auto classes = synthesize_toy_dataset(cfg.data, cfg.seed);
    ToyDatasetConfig eval_cfg = cfg.data;
    eval_cfg.patches_per_class = 12;
    auto eval_classes = synthesize_toy_dataset(eval_cfg, mix_seed(cfg.seed, "eval"));
    std::vector<std::pair<std::string, torch::Tensor>> eval_set;
    std::vector<torch::Tensor> mixed;
    for (const auto& cls : classes) mixed.insert(mixed.end(), cls.patches.begin(), cls.patches.end());
    for (const auto& cls : eval_classes) {
        for (size_t i = 0; i < cls.patches.size(); ++i) {
            eval_set.emplace_back(cls.label + std::to_string(i), cls.patches[i]);
        }
    }
    std::cout << "setup " << elapsed() << "s\n";

    std::vector<Checkpoint> class_ckpts;
    for (const auto& cls : classes) {
        class_ckpts.push_back(train_stage1(cfg, cls.patches, cls.label, entries));
        std::cout << "stage1 " << cls.label << " " << elapsed() << "s\n";
    }
    Checkpoint mixed_s1 = train_stage1(cfg, mixed, "mixedbook", entries);
    std::cout << "stage1 mixed " << elapsed() << "s\n";

    RunConfig c_ada = cfg;
    Checkpoint ada = train_stage2(c_ada, class_ckpts, mixed);
    double psnr_ada = eval_psnr(ada, eval_set);
    std::cout << "stage2 adacode " << elapsed() << "s psnr=" << psnr_ada << "\n";
    {
        Stage2Pipeline pipe = Stage2Pipeline::from_checkpoint(ada);
        torch::NoGradGuard ng;
        for (const auto& cls : eval_classes) {
            double p = 0, wmax = 0;
            for (const auto& img : cls.patches) {
                auto fwd = pipe.forward(img);
                p += psnr(clip01(fwd.recon), img);
                wmax += std::get<0>(fwd.weights.max(0)).mean().item<double>();
            }
            std::cout << "  class " << cls.label << " psnr=" << p / cls.patches.size()
                      << " mean_max_w=" << wmax / cls.patches.size() << "\n";
        }
    }

    RunConfig c_merge = cfg;
    c_merge.merge_codebooks = true;
    Checkpoint merged = train_stage2(c_merge, class_ckpts, mixed);
    double psnr_merged = eval_psnr(merged, eval_set);
    std::cout << "stage2 merged " << elapsed() << "s psnr=" << psnr_merged << "\n";

    Checkpoint small = train_stage2(cfg, {mixed_s1}, mixed);
    double psnr_small = eval_psnr(small, eval_set);
    std::cout << "stage2 small " << elapsed() << "s psnr=" << psnr_small << "\n";

    RunConfig c_sub = cfg;
    c_sub.basis_subset = {classes[0].label};
    Checkpoint sub1 = train_stage2(c_sub, class_ckpts, mixed);
    double psnr_sub1 = eval_psnr(sub1, eval_set);
    std::cout << "stage2 subset1 " << elapsed() << "s psnr=" << psnr_sub1 << "\n";

    std::cout << "\nordering: ada=" << psnr_ada << " merged=" << psnr_merged
              << " small=" << psnr_small << " sub1=" << psnr_sub1 << "\n";
    std::cout << "ada >= merged-0.1: " << (psnr_ada >= psnr_merged - 0.1)
              << "  merged >= small: " << (psnr_merged >= psnr_small)
              << "  ada(3) >= sub1(1): " << (psnr_ada >= psnr_sub1) << "\n";
    return 0;
}
