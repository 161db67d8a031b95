#include "blendvq/config.hpp"

#include <fstream>

namespace blendvq {

using nlohmann::json;

RestorationTask task_from_string(const std::string& name) {
    if (name == "sr" || name == "super_resolution") return RestorationTask::super_resolution;
    if (name == "inpaint" || name == "inpainting") return RestorationTask::inpainting;
    throw ConfigError("unknown task '" + name + "' (expected sr or inpaint)");
}

std::string to_string(RestorationTask task) {
    return task == RestorationTask::super_resolution ? "super_resolution" : "inpainting";
}

void StageTrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_generator <= 0.0 || lr_discriminator <= 0.0) {
        throw ConfigError("learning rates must be > 0");
    }
}

int64_t RunConfig::codebook_size_for(int64_t class_index) const {
    if (codebook_sizes.empty()) throw ConfigError("codebook_sizes is empty");
    return codebook_sizes[static_cast<size_t>(class_index) % codebook_sizes.size()];
}

RunConfig RunConfig::desk_preset() {
    RunConfig cfg;  // defaults are the desk preset
    return cfg;
}

RunConfig RunConfig::paper_preset() {
    RunConfig cfg;
    cfg.network.downsample_factor = 16;
    cfg.network.latent_dim = 256;
    cfg.network.channels = {64, 128, 256, 512};
    cfg.network.feature_dim = 256;
    cfg.network.disc_stride = 16;
    cfg.network.predictor_dim = 256;
    cfg.data.num_classes = 5;
    cfg.data.patches_per_class = 40000;
    cfg.data.patch_size = 512;
    cfg.codebook_sizes = {512, 256, 512, 256, 256};
    for (StageTrainConfig* stage : {&cfg.stage1, &cfg.stage2, &cfg.stage3}) {
        stage->iterations = 350000;
        stage->batch_size = 32;
    }
    return cfg;
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void read_network(const json& j, NetworkConfig& net) {
    read_if(j, "downsample_factor", net.downsample_factor);
    read_if(j, "latent_dim", net.latent_dim);
    read_if(j, "channels", net.channels);
    read_if(j, "feature_dim", net.feature_dim);
    read_if(j, "disc_stride", net.disc_stride);
    read_if(j, "predictor_dim", net.predictor_dim);
    read_if(j, "predictor_blocks", net.predictor_blocks);
    read_if(j, "predictor_heads", net.predictor_heads);
    read_if(j, "feature_seed", net.feature_seed);
}

json network_json(const NetworkConfig& net) {
    return json{{"downsample_factor", net.downsample_factor},
                {"latent_dim", net.latent_dim},
                {"channels", net.channels},
                {"feature_dim", net.feature_dim},
                {"disc_stride", net.disc_stride},
                {"predictor_dim", net.predictor_dim},
                {"predictor_blocks", net.predictor_blocks},
                {"predictor_heads", net.predictor_heads},
                {"feature_seed", net.feature_seed}};
}

void read_stage(const json& j, StageTrainConfig& stage) {
    read_if(j, "iterations", stage.iterations);
    read_if(j, "batch_size", stage.batch_size);
    read_if(j, "lr_generator", stage.lr_generator);
    read_if(j, "lr_discriminator", stage.lr_discriminator);
}

json stage_json(const StageTrainConfig& stage) {
    return json{{"iterations", stage.iterations},
                {"batch_size", stage.batch_size},
                {"lr_generator", stage.lr_generator},
                {"lr_discriminator", stage.lr_discriminator}};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    read_if(j, "seed", cfg.seed);
    read_if(j, "output_root", cfg.output_root);
    read_if(j, "threads", cfg.threads);
    if (j.contains("network")) read_network(j.at("network"), cfg.network);
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        read_if(l, "lambda", cfg.loss.lambda);
        read_if(l, "beta", cfg.loss.beta);
        read_if(l, "tau", cfg.loss.tau);
        read_if(l, "adv_warmup_frac", cfg.loss.adv_warmup_frac);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        read_if(d, "num_classes", cfg.data.num_classes);
        read_if(d, "patches_per_class", cfg.data.patches_per_class);
        read_if(d, "patch_size", cfg.data.patch_size);
        read_if(d, "eval_patches_per_class", cfg.eval_patches_per_class);
        read_if(d, "root", cfg.data_root);
        read_if(d, "label_file", cfg.label_file);
        read_if(d, "mapping_file", cfg.mapping_file);
    }
    read_if(j, "codebook_sizes", cfg.codebook_sizes);
    if (j.contains("stage1")) read_stage(j.at("stage1"), cfg.stage1);
    if (j.contains("stage2")) read_stage(j.at("stage2"), cfg.stage2);
    if (j.contains("stage3")) read_stage(j.at("stage3"), cfg.stage3);
    read_if(j, "basis_subset", cfg.basis_subset);
    read_if(j, "merge_codebooks", cfg.merge_codebooks);
    if (j.contains("task")) cfg.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("degradation")) {
        const json& d = j.at("degradation");
        read_if(d, "blur_sigma", cfg.degradation.blur_sigma);
        read_if(d, "scale", cfg.degradation.scale);
        read_if(d, "noise_std", cfg.degradation.noise_std);
        if (d.contains("resample")) {
            cfg.degradation.resample = resample_from_string(d.at("resample").get<std::string>());
        }
        read_if(d, "seed", cfg.degradation.seed);
    }
    if (j.contains("mask")) {
        const json& m = j.at("mask");
        read_if(m, "num_strokes", cfg.mask.num_strokes);
        read_if(m, "max_vertices", cfg.mask.max_vertices);
        read_if(m, "min_width", cfg.mask.min_width);
        read_if(m, "max_width", cfg.mask.max_width);
        read_if(m, "seed", cfg.mask.seed);
    }
    return cfg;
}

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["output_root"] = output_root;
    j["threads"] = threads;
    j["network"] = network_json(network);
    j["loss"] = json{{"lambda", loss.lambda},
                     {"beta", loss.beta},
                     {"tau", loss.tau},
                     {"adv_warmup_frac", loss.adv_warmup_frac}};
    j["data"] = json{{"num_classes", data.num_classes},
                     {"patches_per_class", data.patches_per_class},
                     {"patch_size", data.patch_size},
                     {"eval_patches_per_class", eval_patches_per_class},
                     {"root", data_root},
                     {"label_file", label_file},
                     {"mapping_file", mapping_file}};
    j["codebook_sizes"] = codebook_sizes;
    j["stage1"] = stage_json(stage1);
    j["stage2"] = stage_json(stage2);
    j["stage3"] = stage_json(stage3);
    j["basis_subset"] = basis_subset;
    j["merge_codebooks"] = merge_codebooks;
    j["task"] = to_string(task);
    j["degradation"] = json{{"blur_sigma", degradation.blur_sigma},
                            {"scale", degradation.scale},
                            {"noise_std", degradation.noise_std},
                            {"resample", to_string(degradation.resample)},
                            {"seed", degradation.seed}};
    j["mask"] = json{{"num_strokes", mask.num_strokes},
                     {"max_vertices", mask.max_vertices},
                     {"min_width", mask.min_width},
                     {"max_width", mask.max_width},
                     {"seed", mask.seed}};
    return j;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write config file '" + path + "'");
    }
    out << to_json().dump(2) << "\n";
}

void RunConfig::validate() const {
    try {
        network.validate();
        loss.validate();
        data.validate();
        stage1.validate();
        stage2.validate();
        stage3.validate();
        degradation.validate();
        mask.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (eval_patches_per_class < 0) throw ConfigError("eval_patches_per_class must be >= 0");
    if (codebook_sizes.empty()) throw ConfigError("codebook_sizes must not be empty");
    for (int64_t n : codebook_sizes) {
        if (n < 1) throw ConfigError("codebook sizes must be >= 1");
    }
    if (data.patch_size % network.downsample_factor != 0) {
        throw ConfigError("patch_size must be divisible by downsample_factor");
    }
    if (data.patch_size % degradation.scale != 0) {
        throw ConfigError("patch_size must be divisible by the degradation scale");
    }
}

}  // namespace blendvq
