#include "blendvq/degradation.hpp"

#include "blendvq/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace blendvq {

namespace F = torch::nn::functional;

Resample resample_from_string(const std::string& name) {
    if (name == "bicubic") return Resample::bicubic;
    if (name == "bilinear") return Resample::bilinear;
    if (name == "nearest") return Resample::nearest;
    throw std::invalid_argument("unknown resample mode '" + name + "'");
}

std::string to_string(Resample mode) {
    switch (mode) {
        case Resample::bicubic: return "bicubic";
        case Resample::bilinear: return "bilinear";
        case Resample::nearest: return "nearest";
    }
    return "bicubic";
}

void DegradationSpec::validate() const {
    if (blur_sigma < 0.0) throw std::invalid_argument("blur_sigma must be >= 0");
    if (scale != 1 && scale != 2 && scale != 4) {
        throw std::invalid_argument("scale must be one of {1, 2, 4}");
    }
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
}

namespace {

torch::Tensor gaussian_blur(const torch::Tensor& image, double sigma) {
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    torch::Tensor coords = torch::arange(-radius, radius + 1, torch::kFloat64);
    torch::Tensor kernel1d = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
    kernel1d = kernel1d / kernel1d.sum();
    const int64_t channels = image.size(0);
    torch::Tensor x = image.unsqueeze(0);
    torch::Tensor kh = kernel1d.reshape({1, 1, 1, -1}).repeat({channels, 1, 1, 1});
    torch::Tensor kv = kernel1d.reshape({1, 1, -1, 1}).repeat({channels, 1, 1, 1});
    x = F::pad(x, F::PadFuncOptions({radius, radius, 0, 0}).mode(torch::kReflect));
    x = F::conv2d(x, kh, F::Conv2dFuncOptions().groups(channels));
    x = F::pad(x, F::PadFuncOptions({0, 0, radius, radius}).mode(torch::kReflect));
    x = F::conv2d(x, kv, F::Conv2dFuncOptions().groups(channels));
    return x.squeeze(0);
}

torch::Tensor resample_down(const torch::Tensor& image, int64_t scale, Resample mode) {
    std::vector<int64_t> size{image.size(1) / scale, image.size(2) / scale};
    auto opts = F::InterpolateFuncOptions().size(size);
    switch (mode) {
        case Resample::bicubic:
            opts = opts.mode(torch::kBicubic).align_corners(false);
            break;
        case Resample::bilinear:
            opts = opts.mode(torch::kBilinear).align_corners(false);
            break;
        case Resample::nearest:
            opts = opts.mode(torch::kNearest);
            break;
    }
    return F::interpolate(image.unsqueeze(0), opts).squeeze(0);
}

torch::Tensor seeded_normal(torch::IntArrayRef shape, uint64_t seed) {
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
    return torch::randn(shape, gen, torch::kFloat64);
}

}  // namespace

torch::Tensor degrade(const torch::Tensor& hr, const DegradationSpec& spec) {
    spec.validate();
    if (hr.dim() != 3 || hr.size(0) != 3) {
        throw std::invalid_argument("degrade expects a (3,H,W) image");
    }
    if (hr.size(1) % spec.scale != 0 || hr.size(2) % spec.scale != 0) {
        throw std::invalid_argument("degrade: dims " + std::to_string(hr.size(1)) + "x" +
                                    std::to_string(hr.size(2)) + " not divisible by scale " +
                                    std::to_string(spec.scale));
    }
    torch::Tensor out = hr;
    if (spec.blur_sigma > 0.0) {
        out = gaussian_blur(out, spec.blur_sigma);
    }
    if (spec.scale > 1) {
        out = resample_down(out, spec.scale, spec.resample);
    }
    if (spec.noise_std > 0.0) {
        out = out + spec.noise_std * seeded_normal(out.sizes(), spec.seed);
    }
    return out.clamp(0.0, 1.0);
}

torch::Tensor upsample_image(const torch::Tensor& image, int64_t scale) {
    if (image.dim() != 3) {
        throw std::invalid_argument("upsample_image expects a (C,H,W) image");
    }
    if (scale < 1) {
        throw std::invalid_argument("upsample_image: scale must be >= 1");
    }
    if (scale == 1) {
        return image;
    }
    std::vector<int64_t> size{image.size(1) * scale, image.size(2) * scale};
    torch::Tensor up = F::interpolate(
        image.unsqueeze(0),
        F::InterpolateFuncOptions().size(size).mode(torch::kBicubic).align_corners(false));
    return up.squeeze(0).clamp(0.0, 1.0);
}

void MaskSpec::validate() const {
    if (num_strokes < 0) throw std::invalid_argument("num_strokes must be >= 0");
    if (max_vertices < 2) throw std::invalid_argument("max_vertices must be >= 2");
    if (min_width < 1 || max_width < min_width) {
        throw std::invalid_argument("stroke width range invalid");
    }
}

namespace {

void stamp_disc(torch::TensorAccessor<double, 2> mask, int64_t height, int64_t width, double cx,
                double cy, double radius) {
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - radius)));
    const int64_t y1 = std::min<int64_t>(height - 1, static_cast<int64_t>(std::ceil(cy + radius)));
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - radius)));
    const int64_t x1 = std::min<int64_t>(width - 1, static_cast<int64_t>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int64_t y = y0; y <= y1; ++y) {
        for (int64_t x = x0; x <= x1; ++x) {
            double dx = x - cx;
            double dy = y - cy;
            if (dx * dx + dy * dy <= r2) {
                mask[y][x] = 1.0;
            }
        }
    }
}

}  // namespace

torch::Tensor generate_mask(const MaskSpec& spec, int64_t height, int64_t width) {
    spec.validate();
    if (height < 4 || width < 4) {
        throw std::invalid_argument("generate_mask: degenerate dims");
    }
    torch::Tensor mask = torch::zeros({height, width}, torch::kFloat64);
    auto acc = mask.accessor<double, 2>();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double diag = std::min(height, width);
    for (int64_t s = 0; s < spec.num_strokes; ++s) {
        double x = (0.1 + 0.8 * unit(rng)) * width;
        double y = (0.1 + 0.8 * unit(rng)) * height;
        int64_t vertices = 3 + static_cast<int64_t>(unit(rng) * static_cast<double>(
                                                                    spec.max_vertices - 2));
        vertices = std::min(vertices, spec.max_vertices);
        double angle = unit(rng) * 2.0 * M_PI;
        double half_width =
            0.5 * (spec.min_width + unit(rng) * static_cast<double>(spec.max_width - spec.min_width));
        for (int64_t v = 1; v < vertices; ++v) {
            angle += (unit(rng) - 0.5) * 1.2;
            double length = (0.12 + 0.15 * unit(rng)) * diag;
            double nx = std::clamp(x + std::cos(angle) * length, 0.0, width - 1.0);
            double ny = std::clamp(y + std::sin(angle) * length, 0.0, height - 1.0);
            double seg_len = std::hypot(nx - x, ny - y);
            int64_t steps = std::max<int64_t>(1, static_cast<int64_t>(seg_len * 2.0));
            for (int64_t t = 0; t <= steps; ++t) {
                double frac = static_cast<double>(t) / static_cast<double>(steps);
                stamp_disc(acc, height, width, x + (nx - x) * frac, y + (ny - y) * frac,
                           half_width);
            }
            x = nx;
            y = ny;
        }
    }
    return mask.unsqueeze(0);
}

torch::Tensor apply_mask(const torch::Tensor& image, const torch::Tensor& mask) {
    if (image.dim() != 3) {
        throw std::invalid_argument("apply_mask expects a (C,H,W) image");
    }
    torch::Tensor m = mask.dim() == 2 ? mask.unsqueeze(0) : mask;
    if (m.dim() != 3 || m.size(0) != 1 || m.size(1) != image.size(1) ||
        m.size(2) != image.size(2)) {
        throw std::invalid_argument("apply_mask: mask shape mismatch");
    }
    return image * (1.0 - m) + 0.5 * m;
}

torch::Tensor with_mask_channel(const torch::Tensor& image, const torch::Tensor& mask) {
    torch::Tensor m = mask.dim() == 2 ? mask.unsqueeze(0) : mask;
    if (image.dim() != 3 || m.size(1) != image.size(1) || m.size(2) != image.size(2)) {
        throw std::invalid_argument("with_mask_channel: shape mismatch");
    }
    return torch::cat({image, m}, 0);
}

LabelMapping LabelMapping::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open mapping file '" + path + "'");
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string fine, super;
        if (!(ss >> fine >> super)) {
            throw std::runtime_error("bad mapping line: '" + line + "'");
        }
        pairs.emplace_back(fine, super);
    }
    return from_pairs(pairs);
}

LabelMapping LabelMapping::from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    LabelMapping mapping;
    for (const auto& [fine, super] : pairs) {
        if (mapping.fine_to_super.count(fine)) {
            throw std::invalid_argument("duplicate fine label '" + fine + "' in mapping");
        }
        mapping.fine_to_super[fine] = super;
        if (std::find(mapping.super_classes.begin(), mapping.super_classes.end(), super) ==
            mapping.super_classes.end()) {
            mapping.super_classes.push_back(super);
        }
    }
    return mapping;
}

const std::string& LabelMapping::super_of(const std::string& fine_label) const {
    auto it = fine_to_super.find(fine_label);
    if (it == fine_to_super.end()) {
        throw std::invalid_argument("unmapped fine label '" + fine_label + "'");
    }
    return it->second;
}

std::vector<ClassPatches> group_patches(
    const std::vector<std::pair<torch::Tensor, std::string>>& items,
    const LabelMapping& mapping) {
    std::vector<ClassPatches> groups;
    groups.reserve(mapping.super_classes.size());
    for (const auto& super : mapping.super_classes) {
        groups.push_back(ClassPatches{super, {}});
    }
    for (const auto& [patch, fine] : items) {
        const std::string& super = mapping.super_of(fine);
        for (auto& group : groups) {
            if (group.label == super) {
                group.patches.push_back(patch);
                break;
            }
        }
    }
    return groups;
}

std::vector<std::pair<std::string, std::string>> load_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open label file '" + path + "'");
    }
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string rel, fine;
        if (!(ss >> rel >> fine)) {
            throw std::runtime_error("bad label line: '" + line + "'");
        }
        out.emplace_back(rel, fine);
    }
    return out;
}

void ToyDatasetConfig::validate() const {
    if (num_classes < 1 ||
        num_classes > static_cast<int64_t>(toy_class_labels().size())) {
        throw std::invalid_argument("num_classes must lie in [1," +
                                    std::to_string(toy_class_labels().size()) + "]");
    }
    if (patches_per_class < 1) throw std::invalid_argument("patches_per_class must be >= 1");
    if (patch_size < 8) throw std::invalid_argument("patch_size must be >= 8");
}

const std::vector<std::string>& toy_class_labels() {
    static const std::vector<std::string> labels = {"checker", "stripes", "gradient", "blobs",
                                                    "noise"};
    return labels;
}

namespace {

struct Rng {
    std::mt19937_64 engine;
    std::uniform_real_distribution<double> unit{0.0, 1.0};
    explicit Rng(uint64_t seed) : engine(seed) {}
    double operator()() { return unit(engine); }
};

torch::Tensor hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double r = std::clamp(std::abs(h * 6.0 - 3.0) - 1.0, 0.0, 1.0);
    double g = std::clamp(2.0 - std::abs(h * 6.0 - 2.0), 0.0, 1.0);
    double b = std::clamp(2.0 - std::abs(h * 6.0 - 4.0), 0.0, 1.0);
    auto mixv = [&](double c) { return v * (1.0 + s * (c - 1.0)); };
    return torch::tensor({mixv(r), mixv(g), mixv(b)}, torch::kFloat64).reshape({3, 1, 1});
}

// Each family draws from its own hue band so the class statistics stay
// visually distinct; structure within a class still varies per patch.
struct Palette {
    double hue_lo;
    double hue_hi;
};

Palette family_palette(const std::string& family) {
    if (family == "checker") return {0.00, 0.10};   // reds/oranges
    if (family == "stripes") return {0.28, 0.42};   // greens
    if (family == "gradient") return {0.55, 0.68};  // blues
    if (family == "blobs") return {0.75, 0.90};     // purples
    return {0.12, 0.19};                            // yellows (noise)
}

torch::Tensor palette_color(Rng& rng, const Palette& pal) {
    double h = pal.hue_lo + rng() * (pal.hue_hi - pal.hue_lo);
    double s = 0.55 + 0.45 * rng();
    double v = 0.35 + 0.6 * rng();
    return hsv_to_rgb(h, s, v);
}

// Two palette colors with enough contrast to make the structure visible.
std::pair<torch::Tensor, torch::Tensor> contrast_pair(Rng& rng, const Palette& pal) {
    torch::Tensor a = palette_color(rng, pal);
    torch::Tensor b = palette_color(rng, pal);
    for (int tries = 0; (a - b).abs().sum().item<double>() < 0.45 && tries < 32; ++tries) {
        b = palette_color(rng, pal);
    }
    return {a, b};
}

torch::Tensor coord_grid(int64_t size) {
    torch::Tensor ys = torch::arange(size, torch::kFloat64).reshape({size, 1}).expand({size, size});
    torch::Tensor xs = torch::arange(size, torch::kFloat64).reshape({1, size}).expand({size, size});
    return torch::stack({ys, xs});
}

torch::Tensor make_checker(Rng& rng, int64_t size) {
    auto [c1, c2] = contrast_pair(rng, family_palette("checker"));
    int64_t cell = 2 + static_cast<int64_t>(rng() * 5.0);  // 2..6 px
    int64_t oy = static_cast<int64_t>(rng() * static_cast<double>(cell));
    int64_t ox = static_cast<int64_t>(rng() * static_cast<double>(cell));
    torch::Tensor g = coord_grid(size);
    torch::Tensor pattern =
        (((g[0] + oy) / cell).floor() + ((g[1] + ox) / cell).floor()).remainder(2.0);
    pattern = pattern.unsqueeze(0);
    return c1 * pattern + c2 * (1.0 - pattern);
}

torch::Tensor make_stripes(Rng& rng, int64_t size) {
    auto [c1, c2] = contrast_pair(rng, family_palette("stripes"));
    double angle = rng() * M_PI;
    double freq = (3.0 + rng() * 5.0) * 2.0 * M_PI / static_cast<double>(size);
    double phase = rng() * 2.0 * M_PI;
    torch::Tensor g = coord_grid(size);
    torch::Tensor proj = g[0] * std::sin(angle) + g[1] * std::cos(angle);
    torch::Tensor wave = (torch::sin(proj * freq + phase) > 0).to(torch::kFloat64).unsqueeze(0);
    return c1 * wave + c2 * (1.0 - wave);
}

torch::Tensor make_gradient(Rng& rng, int64_t size) {
    auto [c1, c2] = contrast_pair(rng, family_palette("gradient"));
    double angle = rng() * 2.0 * M_PI;
    torch::Tensor g = coord_grid(size);
    torch::Tensor proj = g[0] * std::sin(angle) + g[1] * std::cos(angle);
    proj = (proj - proj.min()) / (proj.max() - proj.min() + 1e-12);
    proj = proj.unsqueeze(0);
    return c1 * proj + c2 * (1.0 - proj);
}

torch::Tensor make_blobs(Rng& rng, int64_t size) {
    Palette pal = family_palette("blobs");
    torch::Tensor base = palette_color(rng, pal) * torch::ones({3, size, size}, torch::kFloat64);
    torch::Tensor g = coord_grid(size);
    int64_t blobs = 4 + static_cast<int64_t>(rng() * 5.0);
    for (int64_t i = 0; i < blobs; ++i) {
        double cy = rng() * size;
        double cx = rng() * size;
        double sigma = (0.05 + rng() * 0.12) * size;
        torch::Tensor bump = torch::exp(
            -((g[0] - cy).pow(2) + (g[1] - cx).pow(2)) / (2.0 * sigma * sigma));
        base = base * (1.0 - bump.unsqueeze(0)) + palette_color(rng, pal) * bump.unsqueeze(0);
    }
    return base.clamp(0.0, 1.0);
}

torch::Tensor make_noise(Rng& rng, int64_t size) {
    torch::Tensor tint = palette_color(rng, family_palette("noise"));
    uint64_t noise_seed = rng.engine();
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(noise_seed);
    torch::Tensor field = torch::rand({1, size, size}, gen, torch::kFloat64);
    return (tint * 0.4 + field * 0.6).clamp(0.0, 1.0);
}

torch::Tensor make_patch(const std::string& family, Rng& rng, int64_t size) {
    if (family == "checker") return make_checker(rng, size);
    if (family == "stripes") return make_stripes(rng, size);
    if (family == "gradient") return make_gradient(rng, size);
    if (family == "blobs") return make_blobs(rng, size);
    return make_noise(rng, size);
}

}  // namespace

std::vector<ClassPatches> synthesize_toy_dataset(const ToyDatasetConfig& config, uint64_t seed) {
    config.validate();
    std::vector<ClassPatches> out;
    for (int64_t k = 0; k < config.num_classes; ++k) {
        const std::string& label = toy_class_labels()[static_cast<size_t>(k)];
        ClassPatches cls{label, {}};
        cls.patches.reserve(static_cast<size_t>(config.patches_per_class));
        for (int64_t i = 0; i < config.patches_per_class; ++i) {
            // per-patch seed so generation order or parallelism cannot matter
            Rng rng(mix_seed(seed, label + ":" + std::to_string(i)));
            cls.patches.push_back(make_patch(label, rng, config.patch_size));
        }
        out.push_back(std::move(cls));
    }
    return out;
}

}  // namespace blendvq
