#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace blendvq {

// Architecture hyperparameters shared by all networks. Everything a
// checkpoint needs to rebuild its modules lives here.
struct NetworkConfig {
    int64_t downsample_factor = 8;            // f, one of {4, 8, 16}
    int64_t latent_dim = 32;                  // n_z
    std::vector<int64_t> channels = {32, 64, 128};  // widths after each downsample
    int64_t feature_dim = 64;                 // d_phi of the frozen feature extractor
    int64_t disc_stride = 8;                  // total stride of the patch discriminator
    int64_t predictor_dim = 64;               // token width inside the weight predictor
    int64_t predictor_blocks = 4;
    int64_t predictor_heads = 2;
    uint64_t feature_seed = 2023;             // init seed of the frozen extractor

    int64_t levels() const;                   // log2(downsample_factor)
    void validate() const;
};

// Activation + two 3x3 convs with an additive skip, fixed LeakyReLU(0.2).
// No normalization layers anywhere in this family.
class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Strided-conv pyramid: (B,in,H,W) -> (B,n_z,H/f,W/f).
class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(const NetworkConfig& config, int64_t in_channels = 3);
    torch::Tensor forward(const torch::Tensor& image);
    int64_t downsample_factor() const { return factor_; }

private:
    int64_t factor_;
    torch::nn::Conv2d stem_{nullptr}, head_{nullptr};
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Encoder);

// Nearest-neighbor upsample + conv mirror of the encoder:
// (B,n_z,h,w) -> (B,3,h*f,w*f). Output is raw; clip at evaluation time only.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const NetworkConfig& config);
    torch::Tensor forward(const torch::Tensor& latent);
    int64_t downsample_factor() const { return factor_; }

private:
    int64_t factor_;
    int64_t latent_dim_;
    torch::nn::Conv2d stem_{nullptr}, head_{nullptr};
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Decoder);

// Plain patch discriminator: strided convs down to a logit grid.
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const NetworkConfig& config);
    torch::Tensor forward(const torch::Tensor& image);
    int64_t stride() const { return stride_; }

private:
    int64_t stride_;
    torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Discriminator);

// Frozen, seeded conv pyramid standing in for a pretrained deep feature
// extractor. Outputs (B,d_phi,H/f,W/f); parameters are never trained.
class FeatureExtractorImpl : public torch::nn::Module {
public:
    explicit FeatureExtractorImpl(const NetworkConfig& config);
    torch::Tensor forward(const torch::Tensor& image);

private:
    int64_t factor_;
    torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(FeatureExtractor);

// 1x1 conv mapping n_z -> d_phi for the semantic loss.
class ConvProjImpl : public torch::nn::Module {
public:
    explicit ConvProjImpl(const NetworkConfig& config);
    torch::Tensor forward(const torch::Tensor& latent);
    torch::nn::Conv2d proj{nullptr};
};
TORCH_MODULE(ConvProj);

// Restoration-stage encoder: the plain encoder path plus a shallow residual
// shortcut (pooled stem features, 1x1-projected) added to the latent output.
class RestorationEncoderImpl : public torch::nn::Module {
public:
    RestorationEncoderImpl(const NetworkConfig& config, int64_t in_channels);
    torch::Tensor forward(const torch::Tensor& image);
    int64_t in_channels() const { return in_channels_; }

    // Zeroes the shortcut projection so the output reduces to the plain path.
    void zero_shortcut();

private:
    int64_t factor_;
    int64_t in_channels_;
    torch::nn::Conv2d stem_{nullptr}, head_{nullptr}, shortcut_{nullptr};
    torch::nn::Sequential body_{nullptr};
    torch::nn::AvgPool2d pool_{nullptr};
};
TORCH_MODULE(RestorationEncoder);

// Seeded builders; all modules are float64.
Encoder make_encoder(const NetworkConfig& config, uint64_t seed, int64_t in_channels = 3);
Decoder make_decoder(const NetworkConfig& config, uint64_t seed);
Discriminator make_discriminator(const NetworkConfig& config, uint64_t seed);
FeatureExtractor make_feature_extractor(const NetworkConfig& config);
ConvProj make_conv_proj(const NetworkConfig& config, uint64_t seed);
RestorationEncoder make_restoration_encoder(const NetworkConfig& config, uint64_t seed,
                                            int64_t in_channels);

torch::Tensor clip01(const torch::Tensor& image);

}  // namespace blendvq
