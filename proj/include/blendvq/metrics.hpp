#pragma once

#include "blendvq/config.hpp"
#include "blendvq/training.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace blendvq {

// 10*log10(1/MSE) over RGB in [0,1], capped at 99.0 dB (identical images
// report the cap).
double psnr(const torch::Tensor& a, const torch::Tensor& b);

// Mean local SSIM over the Rec.601 luma channel, 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, valid window positions only.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

struct EvalRow {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::string task;
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;   // arithmetic mean of rows; 0 when empty
    double mean_ssim = 0.0;
    nlohmann::json config_ref;

    std::string to_text() const;
    void write(const std::string& path) const;
};

// Runs the frozen pipeline matching `task` over named HR images and scores
// the outputs against them. reconstruction -> stage-2 checkpoint; sr /
// inpainting -> stage-3 checkpoint with a matching task.
EvalReport evaluate(const std::string& task, const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, torch::Tensor>>& dataset,
                    const DegradationSpec& degradation, const MaskSpec& mask,
                    const std::string& comparison_dir = "");

}  // namespace blendvq
