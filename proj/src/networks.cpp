#include "blendvq/networks.hpp"

#include "blendvq/hashing.hpp"

#include <cmath>
#include <stdexcept>

namespace blendvq {

namespace {

namespace F = torch::nn::functional;

torch::Tensor lrelu(const torch::Tensor& x) {
    return torch::leaky_relu(x, 0.2);
}

void check_divisible(const torch::Tensor& image, int64_t factor, const char* who) {
    if (image.dim() != 4) {
        throw std::invalid_argument(std::string(who) + ": expected a (B,C,H,W) tensor");
    }
    if (image.size(2) % factor != 0 || image.size(3) % factor != 0) {
        throw std::invalid_argument(std::string(who) + ": spatial dims " +
                                    std::to_string(image.size(2)) + "x" +
                                    std::to_string(image.size(3)) +
                                    " not divisible by factor " + std::to_string(factor));
    }
}

torch::Tensor as_batched(const torch::Tensor& x, bool& was_3d) {
    if (x.dim() == 3) {
        was_3d = true;
        return x.unsqueeze(0);
    }
    was_3d = false;
    return x;
}

}  // namespace

int64_t NetworkConfig::levels() const {
    int64_t f = downsample_factor;
    int64_t n = 0;
    while (f > 1) {
        f /= 2;
        ++n;
    }
    return n;
}

void NetworkConfig::validate() const {
    if (downsample_factor != 4 && downsample_factor != 8 && downsample_factor != 16) {
        throw std::invalid_argument("downsample_factor must be one of {4, 8, 16}");
    }
    if (latent_dim < 1) {
        throw std::invalid_argument("latent_dim must be >= 1");
    }
    if (channels.size() != static_cast<size_t>(levels())) {
        throw std::invalid_argument("channels must list one width per downsample level (" +
                                    std::to_string(levels()) + ")");
    }
    for (int64_t c : channels) {
        if (c < 1) throw std::invalid_argument("channel widths must be >= 1");
    }
    if (feature_dim < 1 || predictor_dim < 1 || predictor_blocks < 1 || predictor_heads < 1) {
        throw std::invalid_argument("network dims must be >= 1");
    }
    if (predictor_dim % predictor_heads != 0) {
        throw std::invalid_argument("predictor_dim must be divisible by predictor_heads");
    }
    int64_t s = disc_stride;
    while (s > 1 && s % 2 == 0) s /= 2;
    if (s != 1) {
        throw std::invalid_argument("disc_stride must be a power of two");
    }
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1_ = register_module(
        "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    conv2_ = register_module(
        "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    torch::Tensor h = conv1_(lrelu(x));
    h = conv2_(lrelu(h));
    return x + h;
}

EncoderImpl::EncoderImpl(const NetworkConfig& config, int64_t in_channels)
    : factor_(config.downsample_factor) {
    config.validate();
    const auto& ch = config.channels;
    stem_ = register_module(
        "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, ch[0], 3).padding(1)));
    body_ = torch::nn::Sequential();
    int64_t width = ch[0];
    for (int64_t i = 0; i < config.levels(); ++i) {
        int64_t next = ch[static_cast<size_t>(std::min<int64_t>(i + 1, config.levels() - 1))];
        body_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(width, next, 3).stride(2).padding(1)));
        body_->push_back(ResidualBlock(next));
        width = next;
    }
    register_module("body", body_);
    head_ = register_module(
        "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, config.latent_dim, 1)));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& image) {
    bool was_3d = false;
    torch::Tensor x = as_batched(image, was_3d);
    check_divisible(x, factor_, "encoder");
    torch::Tensor z = head_(body_->forward(stem_(x)));
    return was_3d ? z.squeeze(0) : z;
}

DecoderImpl::DecoderImpl(const NetworkConfig& config)
    : factor_(config.downsample_factor), latent_dim_(config.latent_dim) {
    config.validate();
    const auto& ch = config.channels;
    const int64_t levels = config.levels();
    stem_ = register_module(
        "stem",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_dim, ch.back(), 3).padding(1)));
    body_ = torch::nn::Sequential();
    int64_t width = ch.back();
    for (int64_t i = levels - 1; i >= 0; --i) {
        int64_t next = ch[static_cast<size_t>(std::max<int64_t>(i - 1, 0))];
        body_->push_back(ResidualBlock(width));
        body_->push_back(torch::nn::Upsample(
            torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0})
                .mode(torch::kNearest)));
        body_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(width, next, 3).padding(1)));
        width = next;
    }
    register_module("body", body_);
    head_ = register_module(
        "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 3, 3).padding(1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& latent) {
    bool was_3d = false;
    torch::Tensor z = as_batched(latent, was_3d);
    if (z.size(1) != latent_dim_) {
        throw std::invalid_argument("decoder: latent channel dim " + std::to_string(z.size(1)) +
                                    " does not match configured n_z " +
                                    std::to_string(latent_dim_));
    }
    torch::Tensor y = head_(lrelu(body_->forward(stem_(z))));
    return was_3d ? y.squeeze(0) : y;
}

DiscriminatorImpl::DiscriminatorImpl(const NetworkConfig& config) : stride_(config.disc_stride) {
    config.validate();
    net_ = torch::nn::Sequential();
    int64_t levels = 0;
    for (int64_t s = stride_; s > 1; s /= 2) ++levels;
    int64_t width = 3;
    for (int64_t i = 0; i < levels; ++i) {
        int64_t next =
            config.channels[static_cast<size_t>(std::min<int64_t>(i, config.levels() - 1))];
        net_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(width, next, 3).stride(2).padding(1)));
        net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
        width = next;
    }
    net_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 1, 1)));
    register_module("net", net_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
    bool was_3d = false;
    torch::Tensor x = as_batched(image, was_3d);
    check_divisible(x, stride_, "discriminator");
    torch::Tensor logits = net_->forward(x).squeeze(1);  // (B, H/s, W/s)
    return was_3d ? logits.squeeze(0) : logits;
}

FeatureExtractorImpl::FeatureExtractorImpl(const NetworkConfig& config)
    : factor_(config.downsample_factor) {
    config.validate();
    torch::manual_seed(config.feature_seed);
    net_ = torch::nn::Sequential();
    int64_t width = 3;
    for (int64_t i = 0; i < config.levels(); ++i) {
        int64_t next = i + 1 == config.levels() ? config.feature_dim
                                                : std::max<int64_t>(8, config.feature_dim >> (config.levels() - 1 - i));
        net_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(width, next, 3).stride(2).padding(1)));
        if (i + 1 < config.levels()) {
            net_->push_back(
                torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
        }
        width = next;
    }
    register_module("net", net_);
    this->to(torch::kFloat64);
    for (auto& p : this->parameters()) {
        p.set_requires_grad(false);
    }
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& image) {
    bool was_3d = false;
    torch::Tensor x = as_batched(image, was_3d);
    check_divisible(x, factor_, "feature extractor");
    torch::Tensor feats = net_->forward(x);
    return was_3d ? feats.squeeze(0) : feats;
}

ConvProjImpl::ConvProjImpl(const NetworkConfig& config) {
    config.validate();
    proj = register_module(
        "proj",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_dim, config.feature_dim, 1)));
}

torch::Tensor ConvProjImpl::forward(const torch::Tensor& latent) {
    bool was_3d = false;
    torch::Tensor z = as_batched(latent, was_3d);
    if (z.size(1) != proj->options.in_channels()) {
        throw std::invalid_argument("conv_proj: latent channel dim mismatch");
    }
    torch::Tensor out = proj(z);
    return was_3d ? out.squeeze(0) : out;
}

RestorationEncoderImpl::RestorationEncoderImpl(const NetworkConfig& config, int64_t in_channels)
    : factor_(config.downsample_factor), in_channels_(in_channels) {
    config.validate();
    const auto& ch = config.channels;
    stem_ = register_module(
        "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, ch[0], 3).padding(1)));
    body_ = torch::nn::Sequential();
    int64_t width = ch[0];
    for (int64_t i = 0; i < config.levels(); ++i) {
        int64_t next = ch[static_cast<size_t>(std::min<int64_t>(i + 1, config.levels() - 1))];
        body_->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(width, next, 3).stride(2).padding(1)));
        body_->push_back(ResidualBlock(next));
        width = next;
    }
    register_module("body", body_);
    head_ = register_module(
        "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, config.latent_dim, 1)));
    pool_ = register_module(
        "pool", torch::nn::AvgPool2d(torch::nn::AvgPool2dOptions(factor_).stride(factor_)));
    shortcut_ = register_module(
        "shortcut", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[0], config.latent_dim, 1)));
}

torch::Tensor RestorationEncoderImpl::forward(const torch::Tensor& image) {
    bool was_3d = false;
    torch::Tensor x = as_batched(image, was_3d);
    if (x.size(1) != in_channels_) {
        throw std::invalid_argument("restoration encoder: expected " +
                                    std::to_string(in_channels_) + " input channels, got " +
                                    std::to_string(x.size(1)));
    }
    check_divisible(x, factor_, "restoration encoder");
    torch::Tensor shallow = stem_(x);
    torch::Tensor deep = head_(body_->forward(shallow));
    torch::Tensor skip = shortcut_(pool_(shallow));
    torch::Tensor z = deep + skip;
    return was_3d ? z.squeeze(0) : z;
}

void RestorationEncoderImpl::zero_shortcut() {
    torch::NoGradGuard no_grad;
    shortcut_->weight.zero_();
    shortcut_->bias.zero_();
}

namespace {

template <typename M>
M seeded_double(M module, uint64_t seed) {
    (void)seed;  // seeding happens before construction; kept for clarity at call sites
    module->to(torch::kFloat64);
    return module;
}

}  // namespace

Encoder make_encoder(const NetworkConfig& config, uint64_t seed, int64_t in_channels) {
    torch::manual_seed(mix_seed(seed, "encoder"));
    return seeded_double(Encoder(config, in_channels), seed);
}

Decoder make_decoder(const NetworkConfig& config, uint64_t seed) {
    torch::manual_seed(mix_seed(seed, "decoder"));
    return seeded_double(Decoder(config), seed);
}

Discriminator make_discriminator(const NetworkConfig& config, uint64_t seed) {
    torch::manual_seed(mix_seed(seed, "discriminator"));
    return seeded_double(Discriminator(config), seed);
}

FeatureExtractor make_feature_extractor(const NetworkConfig& config) {
    // seeds itself from config.feature_seed
    FeatureExtractor phi(config);
    return phi;
}

ConvProj make_conv_proj(const NetworkConfig& config, uint64_t seed) {
    torch::manual_seed(mix_seed(seed, "conv_proj"));
    return seeded_double(ConvProj(config), seed);
}

RestorationEncoder make_restoration_encoder(const NetworkConfig& config, uint64_t seed,
                                            int64_t in_channels) {
    torch::manual_seed(mix_seed(seed, "restoration_encoder"));
    return seeded_double(RestorationEncoder(config, in_channels), seed);
}

torch::Tensor clip01(const torch::Tensor& image) {
    return image.clamp(0.0, 1.0);
}

}  // namespace blendvq
