#include "blendvq/training.hpp"

#include "blendvq/hashing.hpp"
#include "blendvq/losses.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace blendvq {

using nlohmann::json;

// ---------------------------------------------------------------------------
// checkpoint container

uint64_t ParamGroup::content_hash() const {
    uint64_t state = 0xcbf29ce484222325ull;
    for (const auto& [name, tensor] : tensors) {
        state = fnv1a64(name.data(), name.size(), state);
        state = tensor_bytes_hash(tensor, state);
    }
    return state;
}

const ParamGroup* Checkpoint::find_group(const std::string& name) const {
    for (const auto& g : groups) {
        if (g.name == name) return &g;
    }
    return nullptr;
}

ParamGroup& Checkpoint::add_group(const std::string& name, bool frozen) {
    groups.push_back(ParamGroup{name, frozen, {}});
    return groups.back();
}

std::vector<std::string> Checkpoint::codebook_labels() const {
    std::vector<std::string> labels;
    for (const auto& g : groups) {
        if (g.name.rfind("codebook:", 0) == 0) {
            labels.push_back(g.name.substr(9));
        }
    }
    return labels;
}

ParamGroup snapshot_module(const std::string& name, const torch::nn::Module& module,
                           bool frozen) {
    ParamGroup group{name, frozen, {}};
    for (const auto& p : module.named_parameters()) {
        group.tensors.emplace_back(p.key(),
                                   p.value().detach().to(torch::kFloat64).contiguous().clone());
    }
    return group;
}

ParamGroup snapshot_codebook(const VectorCodebook& codebook, bool frozen) {
    ParamGroup group{"codebook:" + codebook.class_label, frozen, {}};
    group.tensors.emplace_back("entries",
                               codebook.entries.detach().to(torch::kFloat64).contiguous().clone());
    return group;
}

void load_module_group(torch::nn::Module& module, const ParamGroup& group) {
    torch::NoGradGuard no_grad;
    auto params = module.named_parameters();
    if (params.size() != group.tensors.size()) {
        throw std::runtime_error("checkpoint format error: group '" + group.name + "' has " +
                                 std::to_string(group.tensors.size()) + " tensors, module needs " +
                                 std::to_string(params.size()));
    }
    for (const auto& [name, stored] : group.tensors) {
        torch::Tensor* dst = params.find(name);
        if (dst == nullptr) {
            throw std::runtime_error("checkpoint format error: group '" + group.name +
                                     "' missing parameter '" + name + "'");
        }
        if (dst->sizes() != stored.sizes()) {
            throw std::runtime_error("checkpoint format error: parameter '" + name +
                                     "' shape mismatch in group '" + group.name + "'");
        }
        dst->copy_(stored);
    }
}

VectorCodebook codebook_from_group(const ParamGroup& group) {
    if (group.name.rfind("codebook:", 0) != 0 || group.tensors.size() != 1 ||
        group.tensors.front().first != "entries") {
        throw std::runtime_error("checkpoint format error: '" + group.name +
                                 "' is not a codebook group");
    }
    VectorCodebook cb{group.tensors.front().second.clone(), group.name.substr(9)};
    cb.entries.set_requires_grad(false);
    return cb;
}

namespace {

constexpr char kMagic[8] = {'B', 'V', 'Q', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json manifest;
    manifest["version"] = 1;
    manifest["stage"] = ckpt.stage;
    manifest["iteration"] = ckpt.iteration;
    manifest["config"] = ckpt.config_snapshot;
    json groups = json::array();
    std::string payload;
    for (const auto& group : ckpt.groups) {
        json jg;
        jg["name"] = group.name;
        jg["frozen"] = group.frozen;
        jg["hash"] = to_hex(group.content_hash());
        json tensors = json::array();
        for (const auto& [name, tensor] : group.tensors) {
            torch::Tensor t = tensor.detach().to(torch::kFloat64).contiguous();
            json jt;
            jt["name"] = name;
            jt["shape"] = std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
            tensors.push_back(jt);
            payload.append(reinterpret_cast<const char*>(t.data_ptr<double>()),
                           static_cast<size_t>(t.numel()) * sizeof(double));
        }
        jg["tensors"] = tensors;
        groups.push_back(jg);
    }
    manifest["groups"] = groups;

    std::string header = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint '" + path + "'");
    }
    out.write(kMagic, sizeof(kMagic));
    uint64_t header_size = header.size();
    out.write(reinterpret_cast<const char*>(&header_size), sizeof(header_size));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw std::runtime_error("short write while saving checkpoint '" + path + "'");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint '" + path + "'");
    }
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t offset = 0;
    auto need = [&](size_t n, const char* what) {
        if (blob.size() - offset < n) {
            throw std::runtime_error("checkpoint format error: truncated " + std::string(what) +
                                     " in '" + path + "'");
        }
    };
    need(sizeof(kMagic), "magic");
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint format error: bad magic in '" + path + "'");
    }
    offset += sizeof(kMagic);
    need(sizeof(uint64_t), "header size");
    uint64_t header_size = 0;
    std::memcpy(&header_size, blob.data() + offset, sizeof(header_size));
    offset += sizeof(header_size);
    need(header_size, "manifest");
    json manifest;
    try {
        manifest = json::parse(blob.substr(offset, header_size));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("checkpoint format error: bad manifest in '" + path + "': " +
                                 e.what());
    }
    offset += header_size;

    Checkpoint ckpt;
    try {
        ckpt.stage = manifest.at("stage").get<int>();
        ckpt.iteration = manifest.at("iteration").get<int64_t>();
        ckpt.config_snapshot = manifest.at("config");
        for (const auto& jg : manifest.at("groups")) {
            ParamGroup group;
            group.name = jg.at("name").get<std::string>();
            group.frozen = jg.at("frozen").get<bool>();
            for (const auto& jt : jg.at("tensors")) {
                auto shape = jt.at("shape").get<std::vector<int64_t>>();
                int64_t numel = 1;
                for (int64_t d : shape) numel *= d;
                need(static_cast<size_t>(numel) * sizeof(double), "tensor payload");
                torch::Tensor t = torch::empty(shape, torch::kFloat64);
                std::memcpy(t.data_ptr<double>(), blob.data() + offset,
                            static_cast<size_t>(numel) * sizeof(double));
                offset += static_cast<size_t>(numel) * sizeof(double);
                group.tensors.emplace_back(jt.at("name").get<std::string>(), t);
            }
            uint64_t stored_hash = std::stoull(jg.at("hash").get<std::string>(), nullptr, 16);
            if (stored_hash != group.content_hash()) {
                throw std::runtime_error("checkpoint corruption: hash mismatch for group '" +
                                         group.name + "' in '" + path + "'");
            }
            ckpt.groups.push_back(std::move(group));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint format error in '" + path + "': " + e.what());
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// forward compositions

namespace {

template <typename EncoderModule>
AdaptiveForwardResult blended_forward(EncoderModule& encoder, WeightPredictor& predictor,
                                      const BasisSet& basis, Decoder& decoder,
                                      const torch::Tensor& images) {
    AdaptiveForwardResult out;
    out.continuous = encoder->forward(images);
    out.quantized = quantize_all(out.continuous, basis);
    std::vector<torch::Tensor> passed, raw;
    passed.reserve(out.quantized.size());
    raw.reserve(out.quantized.size());
    for (const auto& q : out.quantized) {
        passed.push_back(straight_through(out.continuous, q.quantized));
        raw.push_back(q.quantized);
    }
    out.weights = predictor->forward(out.continuous);
    out.blended = combine(passed, out.weights);
    out.blended_raw = combine(raw, out.weights);
    out.recon = decoder->forward(out.blended);
    return out;
}

}  // namespace

AdaptiveForwardResult adaptive_forward(Encoder& encoder, WeightPredictor& predictor,
                                       const BasisSet& basis, Decoder& decoder,
                                       const torch::Tensor& images) {
    return blended_forward(encoder, predictor, basis, decoder, images);
}

AdaptiveForwardResult restoration_forward(RestorationEncoder& encoder, WeightPredictor& predictor,
                                          const BasisSet& basis, Decoder& decoder,
                                          const torch::Tensor& inputs) {
    return blended_forward(encoder, predictor, basis, decoder, inputs);
}

// ---------------------------------------------------------------------------
// pipelines

namespace {

NetworkConfig network_from_snapshot(const json& snapshot) {
    RunConfig cfg = RunConfig::from_json(snapshot);
    return cfg.network;
}

BasisSet basis_from_checkpoint(const Checkpoint& ckpt) {
    std::vector<VectorCodebook> books;
    for (const auto& group : ckpt.groups) {
        if (group.name.rfind("codebook:", 0) == 0) {
            books.push_back(codebook_from_group(group));
        }
    }
    BasisSet basis(std::move(books));
    basis.freeze();
    return basis;
}

const ParamGroup& require_group(const Checkpoint& ckpt, const std::string& name) {
    const ParamGroup* group = ckpt.find_group(name);
    if (group == nullptr) {
        throw std::runtime_error("checkpoint format error: missing group '" + name + "'");
    }
    return *group;
}

void freeze_module(torch::nn::Module& module) {
    for (auto& p : module.parameters()) {
        p.set_requires_grad(false);
    }
}

}  // namespace

Stage2Pipeline Stage2Pipeline::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.stage != 2) {
        throw std::invalid_argument("expected a stage-2 checkpoint, got stage " +
                                    std::to_string(ckpt.stage));
    }
    Stage2Pipeline p;
    p.net = network_from_snapshot(ckpt.config_snapshot);
    p.basis = basis_from_checkpoint(ckpt);
    p.encoder = make_encoder(p.net, 0);
    p.predictor = make_weight_predictor(p.net, p.basis.size(), 0);
    p.decoder = make_decoder(p.net, 0);
    load_module_group(*p.encoder, require_group(ckpt, "encoder"));
    load_module_group(*p.predictor, require_group(ckpt, "weight_predictor"));
    load_module_group(*p.decoder, require_group(ckpt, "decoder"));
    freeze_module(*p.encoder);
    freeze_module(*p.predictor);
    freeze_module(*p.decoder);
    return p;
}

AdaptiveForwardResult Stage2Pipeline::forward(const torch::Tensor& images) {
    return adaptive_forward(encoder, predictor, basis, decoder, images);
}

torch::Tensor Stage2Pipeline::reconstruct(const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    return clip01(forward(images).recon);
}

Stage3Pipeline Stage3Pipeline::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.stage != 3) {
        throw std::invalid_argument("expected a stage-3 checkpoint, got stage " +
                                    std::to_string(ckpt.stage));
    }
    Stage3Pipeline p;
    RunConfig cfg = RunConfig::from_json(ckpt.config_snapshot);
    p.net = cfg.network;
    p.task = cfg.task;
    p.basis = basis_from_checkpoint(ckpt);
    const int64_t in_channels = p.task == RestorationTask::inpainting ? 4 : 3;
    p.encoder = make_restoration_encoder(p.net, 0, in_channels);
    p.predictor = make_weight_predictor(p.net, p.basis.size(), 0);
    p.decoder = make_decoder(p.net, 0);
    load_module_group(*p.encoder, require_group(ckpt, "restoration_encoder"));
    load_module_group(*p.predictor, require_group(ckpt, "weight_predictor"));
    load_module_group(*p.decoder, require_group(ckpt, "decoder"));
    freeze_module(*p.encoder);
    freeze_module(*p.predictor);
    freeze_module(*p.decoder);
    return p;
}

AdaptiveForwardResult Stage3Pipeline::forward(const torch::Tensor& inputs) {
    return restoration_forward(encoder, predictor, basis, decoder, inputs);
}

torch::Tensor Stage3Pipeline::restore(const torch::Tensor& input) {
    torch::NoGradGuard no_grad;
    return clip01(forward(input).recon);
}

// ---------------------------------------------------------------------------
// pair construction

std::vector<RestorationPair> build_restoration_pairs(const std::vector<torch::Tensor>& hr_patches,
                                                     RestorationTask task,
                                                     const DegradationSpec& degradation,
                                                     const MaskSpec& mask) {
    std::vector<RestorationPair> pairs;
    pairs.reserve(hr_patches.size());
    for (size_t i = 0; i < hr_patches.size(); ++i) {
        const torch::Tensor& hr = hr_patches[i];
        if (task == RestorationTask::super_resolution) {
            DegradationSpec spec = degradation;
            spec.seed = mix_seed(degradation.seed, static_cast<uint64_t>(i));
            torch::Tensor lr = degrade(hr, spec);
            pairs.push_back({upsample_image(lr, spec.scale), hr});
        } else {
            MaskSpec spec = mask;
            spec.seed = mix_seed(mask.seed, static_cast<uint64_t>(i));
            torch::Tensor m = generate_mask(spec, hr.size(1), hr.size(2));
            pairs.push_back({with_mask_channel(apply_mask(hr, m), m), hr});
        }
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// training loops

namespace {

struct BatchSampler {
    std::mt19937_64 rng;
    int64_t dataset_size;
    BatchSampler(uint64_t seed, int64_t size) : rng(seed), dataset_size(size) {}

    std::vector<int64_t> next(int64_t batch_size) {
        std::uniform_int_distribution<int64_t> dist(0, dataset_size - 1);
        std::vector<int64_t> indices(static_cast<size_t>(batch_size));
        for (auto& idx : indices) idx = dist(rng);
        return indices;
    }
};

torch::Tensor stack_batch(const std::vector<torch::Tensor>& data,
                          const std::vector<int64_t>& indices) {
    std::vector<torch::Tensor> items;
    items.reserve(indices.size());
    for (int64_t idx : indices) items.push_back(data[static_cast<size_t>(idx)]);
    return torch::stack(items);
}

bool adversarial_active(int64_t step, int64_t total, double warmup_frac) {
    return static_cast<double>(step) > warmup_frac * static_cast<double>(total);
}

void check_finite(const StageObjective& obj, const char* stage, int64_t step) {
    for (const auto& [name, value] : obj.terms) {
        if (!std::isfinite(value)) {
            throw std::runtime_error(std::string(stage) + ": non-finite loss term '" + name +
                                     "' at step " + std::to_string(step));
        }
    }
}

void append_params(std::vector<torch::Tensor>& out, const torch::nn::Module& module) {
    for (const auto& p : module.parameters()) out.push_back(p);
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, double lr) {
    // paper-default internal coefficients
    return torch::optim::Adam(std::move(params),
                              torch::optim::AdamOptions(lr).betas({0.9, 0.999}).eps(1e-8));
}

void emit(const StepCallback& cb, int64_t step, const StageObjective& obj, double disc_loss) {
    if (!cb) return;
    StepRecord record;
    record.step = step;
    record.terms = obj.terms;
    record.terms.emplace_back("total", obj.total.item<double>());
    record.terms.emplace_back("disc", disc_loss);
    cb(record);
}

}  // namespace

Checkpoint train_stage1(const RunConfig& config, const std::vector<torch::Tensor>& patches,
                        const std::string& class_label, int64_t codebook_entries,
                        const StepCallback& on_step) {
    config.validate();
    if (patches.empty()) {
        throw std::invalid_argument("train_stage1: dataset for class '" + class_label +
                                    "' is empty");
    }
    // One shared init across all class runs: the codebooks diverge through
    // their training subsets alone.
    const uint64_t seed = mix_seed(config.seed, "stage1");
    const NetworkConfig& net = config.network;

    Encoder encoder = make_encoder(net, seed);
    Decoder decoder = make_decoder(net, seed);
    Discriminator disc = make_discriminator(net, seed);
    ConvProj proj = make_conv_proj(net, seed);
    FeatureExtractor phi = make_feature_extractor(net);
    VectorCodebook codebook = VectorCodebook::uniform_init(
        codebook_entries, net.latent_dim, class_label, mix_seed(seed, "codebook"));

    std::vector<torch::Tensor> gen_params;
    append_params(gen_params, *encoder);
    append_params(gen_params, *decoder);
    append_params(gen_params, *proj);
    gen_params.push_back(codebook.entries);
    torch::optim::Adam opt_g = make_adam(gen_params, config.stage1.lr_generator);
    torch::optim::Adam opt_d = make_adam(disc->parameters(), config.stage1.lr_discriminator);

    BatchSampler sampler(mix_seed(seed, "data:" + class_label),
                         static_cast<int64_t>(patches.size()));
    const int64_t iterations = config.stage1.iterations;

    for (int64_t step = 1; step <= iterations; ++step) {
        torch::Tensor x = stack_batch(patches, sampler.next(config.stage1.batch_size));
        const bool adv_on = adversarial_active(step, iterations, config.loss.adv_warmup_frac);

        torch::Tensor z_hat = encoder->forward(x);
        QuantizeResult q = quantize(z_hat, codebook);
        torch::Tensor y_hat = decoder->forward(straight_through(z_hat, q.quantized));

        torch::Tensor adv = torch::zeros({}, torch::kFloat64);
        if (adv_on) {
            torch::Tensor fake_logits = disc->forward(y_hat);
            adv = adversarial_losses(fake_logits.detach(), fake_logits).generator;
        }
        StageObjective obj = stage1_objective(
            blendvq::l1_loss(y_hat, x), perceptual_loss(y_hat, x, phi), adv,
            vq_loss(z_hat, q.quantized, config.loss.beta),
            semantic_loss(z_hat, x, proj, phi), config.loss.lambda);
        check_finite(obj, "stage1", step);
        opt_g.zero_grad();
        obj.total.backward();
        opt_g.step();

        double disc_loss = 0.0;
        if (adv_on) {
            AdversarialLosses pair =
                adversarial_losses(disc->forward(x), disc->forward(y_hat.detach()));
            opt_d.zero_grad();
            pair.discriminator.backward();
            opt_d.step();
            disc_loss = pair.discriminator.item<double>();
        }
        emit(on_step, step, obj, disc_loss);
    }

    Checkpoint ckpt;
    ckpt.stage = 1;
    ckpt.iteration = iterations;
    ckpt.config_snapshot = config.to_json();
    ckpt.groups.push_back(snapshot_module("encoder", *encoder, false));
    ckpt.groups.push_back(snapshot_module("decoder", *decoder, false));
    ckpt.groups.push_back(snapshot_module("discriminator", *disc, false));
    ckpt.groups.push_back(snapshot_module("conv_proj", *proj, false));
    ckpt.groups.push_back(snapshot_module("feature_extractor", *phi, true));
    ckpt.groups.push_back(snapshot_codebook(codebook, false));
    return ckpt;
}

Checkpoint train_stage2(const RunConfig& config, const std::vector<Checkpoint>& stage1,
                        const std::vector<torch::Tensor>& patches,
                        const StepCallback& on_step) {
    config.validate();
    if (stage1.empty()) {
        throw std::invalid_argument("train_stage2: need at least one stage-1 checkpoint");
    }
    if (patches.empty()) {
        throw std::invalid_argument("train_stage2: dataset is empty");
    }
    std::vector<VectorCodebook> books;
    for (const auto& ckpt : stage1) {
        if (ckpt.stage != 1) {
            throw std::invalid_argument("train_stage2: expected stage-1 checkpoints, got stage " +
                                        std::to_string(ckpt.stage));
        }
        for (const auto& group : ckpt.groups) {
            if (group.name.rfind("codebook:", 0) == 0) {
                books.push_back(codebook_from_group(group));
            }
        }
    }
    for (const auto& cb : books) {
        if (cb.dim() != books.front().dim()) {
            throw std::invalid_argument("train_stage2: stage-1 codebooks disagree on n_z (" +
                                        std::to_string(cb.dim()) + " vs " +
                                        std::to_string(books.front().dim()) + ")");
        }
    }
    BasisSet basis(std::move(books));
    if (!config.basis_subset.empty()) {
        basis = basis.subset(config.basis_subset);
    }
    if (config.merge_codebooks) {
        basis = BasisSet({basis.merged()});
    }
    basis.freeze();

    const uint64_t seed = mix_seed(config.seed, "stage2");
    const NetworkConfig& net = config.network;
    if (net.latent_dim != basis.dim()) {
        throw std::invalid_argument("train_stage2: configured latent_dim does not match basis");
    }

    Encoder encoder = make_encoder(net, seed);
    WeightPredictor predictor = make_weight_predictor(net, basis.size(), seed);
    Decoder decoder = make_decoder(net, seed);
    Discriminator disc = make_discriminator(net, seed);
    FeatureExtractor phi = make_feature_extractor(net);

    std::vector<torch::Tensor> gen_params;
    append_params(gen_params, *encoder);
    append_params(gen_params, *predictor);
    append_params(gen_params, *decoder);
    torch::optim::Adam opt_g = make_adam(gen_params, config.stage2.lr_generator);
    torch::optim::Adam opt_d = make_adam(disc->parameters(), config.stage2.lr_discriminator);

    BatchSampler sampler(mix_seed(seed, "data"), static_cast<int64_t>(patches.size()));
    const int64_t iterations = config.stage2.iterations;

    for (int64_t step = 1; step <= iterations; ++step) {
        torch::Tensor x = stack_batch(patches, sampler.next(config.stage2.batch_size));
        const bool adv_on = adversarial_active(step, iterations, config.loss.adv_warmup_frac);

        AdaptiveForwardResult fwd = adaptive_forward(encoder, predictor, basis, decoder, x);

        torch::Tensor adv = torch::zeros({}, torch::kFloat64);
        if (adv_on) {
            torch::Tensor fake_logits = disc->forward(fwd.recon);
            adv = adversarial_losses(fake_logits.detach(), fake_logits).generator;
        }
        StageObjective obj = stage2_objective(
            blendvq::l1_loss(fwd.recon, x), perceptual_loss(fwd.recon, x, phi), adv,
            vq_loss(fwd.continuous, fwd.blended_raw, config.loss.beta), config.loss.lambda);
        check_finite(obj, "stage2", step);
        opt_g.zero_grad();
        obj.total.backward();
        opt_g.step();

        double disc_loss = 0.0;
        if (adv_on) {
            AdversarialLosses pair =
                adversarial_losses(disc->forward(x), disc->forward(fwd.recon.detach()));
            opt_d.zero_grad();
            pair.discriminator.backward();
            opt_d.step();
            disc_loss = pair.discriminator.item<double>();
        }
        emit(on_step, step, obj, disc_loss);
    }

    Checkpoint ckpt;
    ckpt.stage = 2;
    ckpt.iteration = iterations;
    ckpt.config_snapshot = config.to_json();
    ckpt.groups.push_back(snapshot_module("encoder", *encoder, false));
    ckpt.groups.push_back(snapshot_module("weight_predictor", *predictor, false));
    ckpt.groups.push_back(snapshot_module("decoder", *decoder, false));
    ckpt.groups.push_back(snapshot_module("discriminator", *disc, false));
    ckpt.groups.push_back(snapshot_module("feature_extractor", *phi, true));
    for (const auto& cb : basis.codebooks) {
        ckpt.groups.push_back(snapshot_codebook(cb, true));
    }
    return ckpt;
}

torch::Tensor compute_z_gt(const torch::Tensor& hr, const Checkpoint& stage2) {
    if (stage2.stage != 2) {
        throw std::invalid_argument("compute_z_gt: expected a stage-2 checkpoint, got stage " +
                                    std::to_string(stage2.stage));
    }
    Stage2Pipeline pipeline = Stage2Pipeline::from_checkpoint(stage2);
    torch::NoGradGuard no_grad;
    return pipeline.forward(hr).blended;
}

Checkpoint train_stage3(const RunConfig& config, const Checkpoint& stage2,
                        const std::vector<torch::Tensor>& hr_patches,
                        const StepCallback& on_step) {
    config.validate();
    if (stage2.stage != 2) {
        throw std::invalid_argument("train_stage3: expected a stage-2 checkpoint, got stage " +
                                    std::to_string(stage2.stage));
    }
    if (hr_patches.empty()) {
        throw std::invalid_argument("train_stage3: dataset is empty");
    }

    Stage2Pipeline reference = Stage2Pipeline::from_checkpoint(stage2);
    BasisSet basis = reference.basis;  // frozen

    const uint64_t seed = mix_seed(config.seed, "stage3");
    const NetworkConfig& net = reference.net;
    const int64_t in_channels = config.task == RestorationTask::inpainting ? 4 : 3;

    RestorationEncoder encoder = make_restoration_encoder(net, seed, in_channels);
    WeightPredictor predictor = make_weight_predictor(net, basis.size(), seed);
    load_module_group(*predictor, *stage2.find_group("weight_predictor"));
    Decoder decoder = reference.decoder;  // frozen stage-2 decoder
    Discriminator disc = make_discriminator(net, seed);
    FeatureExtractor phi = make_feature_extractor(net);

    std::vector<torch::Tensor> gen_params;
    append_params(gen_params, *encoder);
    append_params(gen_params, *predictor);
    torch::optim::Adam opt_g = make_adam(gen_params, config.stage3.lr_generator);
    torch::optim::Adam opt_d = make_adam(disc->parameters(), config.stage3.lr_discriminator);

    std::vector<RestorationPair> pairs =
        build_restoration_pairs(hr_patches, config.task, config.degradation, config.mask);

    BatchSampler sampler(mix_seed(seed, "data"), static_cast<int64_t>(pairs.size()));
    const int64_t iterations = config.stage3.iterations;

    for (int64_t step = 1; step <= iterations; ++step) {
        std::vector<int64_t> indices = sampler.next(config.stage3.batch_size);
        std::vector<torch::Tensor> inputs, targets;
        for (int64_t idx : indices) {
            inputs.push_back(pairs[static_cast<size_t>(idx)].input);
            targets.push_back(pairs[static_cast<size_t>(idx)].hr);
        }
        torch::Tensor x_in = torch::stack(inputs);
        torch::Tensor hr = torch::stack(targets);
        const bool adv_on = adversarial_active(step, iterations, config.loss.adv_warmup_frac);

        AdaptiveForwardResult fwd = restoration_forward(encoder, predictor, basis, decoder, x_in);

        torch::Tensor z_gt;
        {
            torch::NoGradGuard no_grad;
            z_gt = reference.forward(hr).blended;
        }

        // in-batch negatives: blended latents and targets of the other items
        const int64_t batch = x_in.size(0);
        torch::Tensor code = torch::zeros({}, torch::kFloat64);
        for (int64_t i = 0; i < batch; ++i) {
            std::vector<torch::Tensor> negatives;
            for (int64_t j = 0; j < batch; ++j) {
                if (j == i) continue;
                negatives.push_back(fwd.blended[j]);
                negatives.push_back(z_gt[j]);
            }
            code = code + code_level_loss(fwd.blended[i], z_gt[i], fwd.continuous[i], negatives,
                                          config.loss.tau, config.loss.beta);
        }
        code = code / static_cast<double>(batch);

        torch::Tensor adv = torch::zeros({}, torch::kFloat64);
        if (adv_on) {
            torch::Tensor fake_logits = disc->forward(fwd.recon);
            adv = adversarial_losses(fake_logits.detach(), fake_logits).generator;
        }
        StageObjective obj = stage3_objective(blendvq::l1_loss(fwd.recon, hr),
                                              perceptual_loss(fwd.recon, hr, phi), adv, code,
                                              config.loss.lambda);
        check_finite(obj, "stage3", step);
        opt_g.zero_grad();
        obj.total.backward();
        opt_g.step();

        double disc_loss = 0.0;
        if (adv_on) {
            AdversarialLosses pair =
                adversarial_losses(disc->forward(hr), disc->forward(fwd.recon.detach()));
            opt_d.zero_grad();
            pair.discriminator.backward();
            opt_d.step();
            disc_loss = pair.discriminator.item<double>();
        }
        emit(on_step, step, obj, disc_loss);
    }

    Checkpoint ckpt;
    ckpt.stage = 3;
    ckpt.iteration = iterations;
    ckpt.config_snapshot = config.to_json();
    ckpt.groups.push_back(snapshot_module("restoration_encoder", *encoder, false));
    ckpt.groups.push_back(snapshot_module("weight_predictor", *predictor, false));
    ckpt.groups.push_back(snapshot_module("decoder", *decoder, true));
    ckpt.groups.push_back(snapshot_module("discriminator", *disc, false));
    ckpt.groups.push_back(snapshot_module("feature_extractor", *phi, true));
    for (const auto& cb : basis.codebooks) {
        ckpt.groups.push_back(snapshot_codebook(cb, true));
    }
    return ckpt;
}

}  // namespace blendvq
