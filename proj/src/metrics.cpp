#include "blendvq/metrics.hpp"

#include "blendvq/hashing.hpp"
#include "blendvq/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace blendvq {

namespace F = torch::nn::functional;

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument("psnr: shape mismatch");
    }
    double mse = (a - b).pow(2).mean().item<double>();
    if (mse <= 0.0) {
        return 99.0;
    }
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

torch::Tensor luma601(const torch::Tensor& image) {
    if (image.size(0) == 1) {
        return image.squeeze(0);
    }
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2];
}

torch::Tensor gaussian_window(int64_t size, double sigma) {
    torch::Tensor coords = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
    torch::Tensor g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
    g = g / g.sum();
    return g.reshape({-1, 1}).matmul(g.reshape({1, -1}));
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument("ssim: shape mismatch");
    }
    constexpr int64_t kWindow = 11;
    if (a.dim() != 3 || a.size(1) < kWindow || a.size(2) < kWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;

    torch::Tensor x = luma601(a).unsqueeze(0).unsqueeze(0);
    torch::Tensor y = luma601(b).unsqueeze(0).unsqueeze(0);
    torch::Tensor w = gaussian_window(kWindow, 1.5).reshape({1, 1, kWindow, kWindow});

    auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, w); };  // valid mode
    torch::Tensor mu_x = filt(x);
    torch::Tensor mu_y = filt(y);
    torch::Tensor sigma_x = filt(x * x) - mu_x * mu_x;
    torch::Tensor sigma_y = filt(y * y) - mu_y * mu_y;
    torch::Tensor sigma_xy = filt(x * y) - mu_x * mu_y;

    torch::Tensor numerator = (2.0 * mu_x * mu_y + kC1) * (2.0 * sigma_xy + kC2);
    torch::Tensor denominator =
        (mu_x * mu_x + mu_y * mu_y + kC1) * (sigma_x + sigma_y + kC2);
    return (numerator / denominator).mean().item<double>();
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(6);
    out << "# task " << task << "\n";
    out << "# columns: id psnr ssim\n";
    for (const auto& row : rows) {
        out << row.id << " " << row.psnr << " " << row.ssim << "\n";
    }
    out << "# summary count=" << rows.size();
    if (!rows.empty()) {
        out << " mean_psnr=" << mean_psnr << " mean_ssim=" << mean_ssim;
    }
    out << "\n";
    return out.str();
}

void EvalReport::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write report '" + path + "'");
    }
    out << to_text();
}

EvalReport evaluate(const std::string& task, const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, torch::Tensor>>& dataset,
                    const DegradationSpec& degradation, const MaskSpec& mask,
                    const std::string& comparison_dir) {
    EvalReport report;
    report.task = task;
    report.config_ref = ckpt.config_snapshot;

    const bool reconstruction = task == "reconstruction";
    if (reconstruction) {
        if (ckpt.stage != 2) {
            throw std::invalid_argument("evaluate: reconstruction needs a stage-2 checkpoint");
        }
    } else if (task == "super_resolution" || task == "inpainting") {
        if (ckpt.stage != 3) {
            throw std::invalid_argument("evaluate: " + task + " needs a stage-3 checkpoint");
        }
        RunConfig cfg = RunConfig::from_json(ckpt.config_snapshot);
        if (to_string(cfg.task) != task) {
            throw std::invalid_argument("evaluate: checkpoint was trained for task '" +
                                        to_string(cfg.task) + "', not '" + task + "'");
        }
    } else {
        throw std::invalid_argument("evaluate: unknown task '" + task + "'");
    }

    if (!comparison_dir.empty()) {
        std::filesystem::create_directories(comparison_dir);
    }

    Stage2Pipeline stage2;
    Stage3Pipeline stage3;
    if (reconstruction) {
        stage2 = Stage2Pipeline::from_checkpoint(ckpt);
    } else {
        stage3 = Stage3Pipeline::from_checkpoint(ckpt);
    }

    torch::NoGradGuard no_grad;
    double sum_psnr = 0.0;
    double sum_ssim = 0.0;
    int64_t index = 0;
    for (const auto& [id, hr] : dataset) {
        torch::Tensor input_view, output;
        if (reconstruction) {
            input_view = hr;
            output = stage2.reconstruct(hr);
        } else if (task == "super_resolution") {
            DegradationSpec spec = degradation;
            spec.seed = mix_seed(degradation.seed, static_cast<uint64_t>(index));
            torch::Tensor lr = degrade(hr, spec);
            input_view = upsample_image(lr, spec.scale);
            output = stage3.restore(input_view);
        } else {
            MaskSpec spec = mask;
            spec.seed = mix_seed(mask.seed, static_cast<uint64_t>(index));
            torch::Tensor m = generate_mask(spec, hr.size(1), hr.size(2));
            torch::Tensor masked = apply_mask(hr, m);
            input_view = masked;
            output = stage3.restore(with_mask_channel(masked, m));
        }
        EvalRow row{id, psnr(output, hr), ssim(output, hr)};
        sum_psnr += row.psnr;
        sum_ssim += row.ssim;
        report.rows.push_back(row);
        if (!comparison_dir.empty() && index < 8) {
            std::string path = (std::filesystem::path(comparison_dir) /
                                ("compare_" + std::to_string(index) + ".png"))
                                   .string();
            write_png(path, hstack_images({input_view, output, hr}));
        }
        ++index;
    }
    if (!report.rows.empty()) {
        report.mean_psnr = sum_psnr / static_cast<double>(report.rows.size());
        report.mean_ssim = sum_ssim / static_cast<double>(report.rows.size());
    }
    return report;
}

}  // namespace blendvq
