// blendvq command-line driver: dataset synthesis, stage training, evaluation,
// restoration, and code visualization, all driven by one JSON config.

#include "blendvq/adaptive.hpp"
#include "blendvq/config.hpp"
#include "blendvq/degradation.hpp"
#include "blendvq/hashing.hpp"
#include "blendvq/image_io.hpp"
#include "blendvq/metrics.hpp"
#include "blendvq/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

namespace fs = std::filesystem;
using namespace blendvq;

namespace {

struct CliOverrides {
    std::string config_path;
    int64_t seed = -1;
    int64_t iterations = -1;
    std::string output_root;
    std::string data_root;
};

RunConfig resolve_config(const CliOverrides& over) {
    RunConfig cfg = over.config_path.empty() ? RunConfig::desk_preset()
                                             : RunConfig::load(over.config_path);
    if (over.seed >= 0) cfg.seed = static_cast<uint64_t>(over.seed);
    if (!over.output_root.empty()) cfg.output_root = over.output_root;
    if (!over.data_root.empty()) cfg.data_root = over.data_root;
    if (const char* env_root = std::getenv("BLENDVQ_OUTPUT_ROOT")) {
        cfg.output_root = env_root;
    }
    if (cfg.data_root.empty()) {
        cfg.data_root = (fs::path(cfg.output_root) / "dataset").string();
    }
    cfg.validate();
    torch::set_num_threads(cfg.threads);
    return cfg;
}

void persist_snapshot(const RunConfig& cfg) {
    fs::create_directories(cfg.output_root);
    cfg.save((fs::path(cfg.output_root) / "config.resolved.json").string());
}

std::string stage1_ckpt_path(const RunConfig& cfg, const std::string& label) {
    return (fs::path(cfg.output_root) / "checkpoints" / ("stage1_" + label + ".ckpt")).string();
}

std::string stage2_ckpt_path(const RunConfig& cfg) {
    return (fs::path(cfg.output_root) / "checkpoints" / "stage2.ckpt").string();
}

std::string stage3_ckpt_path(const RunConfig& cfg) {
    return (fs::path(cfg.output_root) / "checkpoints" /
            ("stage3_" + to_string(cfg.task) + ".ckpt"))
        .string();
}

// JSONL writer for per-step loss breakdowns.
StepCallback log_writer(std::ofstream& out) {
    return [&out](const StepRecord& record) {
        nlohmann::json j;
        j["step"] = record.step;
        for (const auto& [name, value] : record.terms) j[name] = value;
        out << j.dump() << "\n";
    };
}

std::ofstream open_log(const RunConfig& cfg, const std::string& name) {
    fs::path dir = fs::path(cfg.output_root) / "logs";
    fs::create_directories(dir);
    std::ofstream out(dir / (name + ".jsonl"));
    if (!out) throw std::runtime_error("cannot open training log for '" + name + "'");
    return out;
}

// Loaded dataset: per-class training patches plus named eval images.
struct LoadedDataset {
    std::vector<ClassPatches> classes;
    std::vector<std::pair<std::string, torch::Tensor>> eval_images;
};

LoadedDataset load_dataset(const RunConfig& cfg, bool need_eval) {
    fs::path root(cfg.data_root);
    std::string mapping_path = cfg.mapping_file.empty() ? (root / "mapping.txt").string()
                                                        : cfg.mapping_file;
    std::string label_path = cfg.label_file.empty() ? (root / "labels.txt").string()
                                                    : cfg.label_file;
    if (!fs::exists(mapping_path) || !fs::exists(label_path)) {
        throw ConfigError("dataset not found under '" + cfg.data_root +
                          "' (run synth-data first or point data.root at a dataset)");
    }
    LabelMapping mapping = LabelMapping::load(mapping_path);
    std::vector<std::pair<torch::Tensor, std::string>> items;
    for (const auto& [rel, fine] : load_label_file(label_path)) {
        items.emplace_back(read_png((root / rel).string()), fine);
    }
    LoadedDataset ds;
    ds.classes = group_patches(items, mapping);
    if (need_eval) {
        std::string eval_path = (root / "eval_labels.txt").string();
        if (fs::exists(eval_path)) {
            for (const auto& [rel, fine] : load_label_file(eval_path)) {
                ds.eval_images.emplace_back(rel, read_png((root / rel).string()));
            }
        }
    }
    return ds;
}

std::vector<torch::Tensor> mixed_patches(const std::vector<ClassPatches>& classes) {
    std::vector<torch::Tensor> all;
    for (const auto& cls : classes) {
        all.insert(all.end(), cls.patches.begin(), cls.patches.end());
    }
    return all;
}

int cmd_synth_data(const RunConfig& cfg) {
    persist_snapshot(cfg);
    fs::path root(cfg.data_root);
    fs::create_directories(root);

    auto train = synthesize_toy_dataset(cfg.data, cfg.seed);
    ToyDatasetConfig eval_cfg = cfg.data;
    eval_cfg.patches_per_class = std::max<int64_t>(1, cfg.eval_patches_per_class);
    auto eval = synthesize_toy_dataset(eval_cfg, mix_seed(cfg.seed, "eval"));

    std::ofstream labels(root / "labels.txt");
    std::ofstream eval_labels(root / "eval_labels.txt");
    std::ofstream mapping(root / "mapping.txt");
    for (const auto& cls : train) {
        mapping << cls.label << " " << cls.label << "\n";
        fs::create_directories(root / "train" / cls.label);
        for (size_t i = 0; i < cls.patches.size(); ++i) {
            std::string rel = "train/" + cls.label + "/patch_" + std::to_string(i) + ".png";
            write_png((root / rel).string(), cls.patches[i]);
            labels << rel << " " << cls.label << "\n";
        }
        std::cout << cls.label << ": " << cls.patches.size() << " train patches\n";
    }
    if (cfg.eval_patches_per_class > 0) {
        for (const auto& cls : eval) {
            fs::create_directories(root / "eval" / cls.label);
            for (size_t i = 0; i < cls.patches.size(); ++i) {
                std::string rel = "eval/" + cls.label + "/patch_" + std::to_string(i) + ".png";
                write_png((root / rel).string(), cls.patches[i]);
                eval_labels << rel << " " << cls.label << "\n";
            }
        }
    }
    std::cout << "dataset written to " << root << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, int stage, int64_t iterations_override) {
    RunConfig run = cfg;
    if (iterations_override >= 0) {
        if (stage == 1) run.stage1.iterations = iterations_override;
        if (stage == 2) run.stage2.iterations = iterations_override;
        if (stage == 3) run.stage3.iterations = iterations_override;
    }
    persist_snapshot(run);
    fs::create_directories(fs::path(run.output_root) / "checkpoints");

    if (stage == 1) {
        LoadedDataset ds = load_dataset(run, false);
        int64_t class_index = 0;
        for (const auto& cls : ds.classes) {
            std::ofstream log = open_log(run, "stage1_" + cls.label);
            Checkpoint ckpt = train_stage1(run, cls.patches, cls.label,
                                           run.codebook_size_for(class_index), log_writer(log));
            save_checkpoint(ckpt, stage1_ckpt_path(run, cls.label));
            std::cout << "stage 1 [" << cls.label << "] -> "
                      << stage1_ckpt_path(run, cls.label) << "\n";
            ++class_index;
        }
        return 0;
    }

    if (stage == 2) {
        LoadedDataset ds = load_dataset(run, false);
        std::vector<std::string> wanted = run.basis_subset;
        if (wanted.empty()) {
            for (const auto& cls : ds.classes) wanted.push_back(cls.label);
        }
        std::vector<Checkpoint> stage1;
        std::vector<std::string> missing;
        for (const auto& label : wanted) {
            std::string path = stage1_ckpt_path(run, label);
            if (!fs::exists(path)) {
                missing.push_back(path);
            } else {
                stage1.push_back(load_checkpoint(path));
            }
        }
        if (!missing.empty()) {
            std::string joined;
            for (const auto& m : missing) joined += "\n  " + m;
            throw ConfigError("stage 2 needs stage-1 checkpoints; missing:" + joined);
        }
        std::ofstream log = open_log(run, "stage2");
        Checkpoint ckpt = train_stage2(run, stage1, mixed_patches(ds.classes), log_writer(log));
        save_checkpoint(ckpt, stage2_ckpt_path(run));
        std::cout << "stage 2 -> " << stage2_ckpt_path(run) << "\n";
        return 0;
    }

    if (stage == 3) {
        std::string path = stage2_ckpt_path(run);
        if (!fs::exists(path)) {
            throw ConfigError("stage 3 needs the stage-2 checkpoint; missing:\n  " + path);
        }
        LoadedDataset ds = load_dataset(run, false);
        std::ofstream log = open_log(run, "stage3_" + to_string(run.task));
        Checkpoint ckpt = train_stage3(run, load_checkpoint(path), mixed_patches(ds.classes),
                                       log_writer(log));
        save_checkpoint(ckpt, stage3_ckpt_path(run));
        std::cout << "stage 3 (" << to_string(run.task) << ") -> " << stage3_ckpt_path(run)
                  << "\n";
        return 0;
    }
    throw ConfigError("train: stage must be 1, 2, or 3");
}

int cmd_eval(const RunConfig& cfg, const std::string& task, const std::string& ckpt_path) {
    persist_snapshot(cfg);
    std::string resolved_task = task == "sr" ? "super_resolution"
                               : task == "inpaint" ? "inpainting"
                                                    : task;
    std::string path = ckpt_path;
    if (path.empty()) {
        path = resolved_task == "reconstruction" ? stage2_ckpt_path(cfg) : stage3_ckpt_path(cfg);
    }
    if (!fs::exists(path)) {
        throw ConfigError("eval: checkpoint not found: " + path);
    }
    LoadedDataset ds = load_dataset(cfg, true);
    if (ds.eval_images.empty()) {
        throw ConfigError("eval: dataset has no eval split");
    }
    fs::path report_dir = fs::path(cfg.output_root) / "reports";
    fs::create_directories(report_dir);
    EvalReport report =
        evaluate(resolved_task, load_checkpoint(path), ds.eval_images, cfg.degradation, cfg.mask,
                 (report_dir / ("compare_" + resolved_task)).string());
    std::string report_path = (report_dir / ("eval_" + resolved_task + ".txt")).string();
    report.write(report_path);
    std::cout << report.to_text();
    std::cout << "report -> " << report_path << "\n";
    return 0;
}

int cmd_restore(const RunConfig& cfg, const std::string& task, const std::string& ckpt_path,
                const std::vector<std::string>& inputs, const std::string& out_dir,
                bool export_weights) {
    persist_snapshot(cfg);
    RestorationTask wanted = task_from_string(task);
    std::string path = ckpt_path.empty() ? stage3_ckpt_path(cfg) : ckpt_path;
    if (!fs::exists(path)) {
        throw ConfigError("restore: checkpoint not found: " + path);
    }
    Checkpoint ckpt = load_checkpoint(path);
    Stage3Pipeline pipeline = Stage3Pipeline::from_checkpoint(ckpt);
    if (pipeline.task != wanted) {
        throw ConfigError("restore: checkpoint task is '" + to_string(pipeline.task) +
                          "', requested '" + to_string(wanted) + "'");
    }
    RunConfig ckpt_cfg = RunConfig::from_json(ckpt.config_snapshot);
    fs::create_directories(out_dir);

    int64_t index = 0;
    for (const auto& input_path : inputs) {
        torch::Tensor image = read_png(input_path);
        torch::Tensor model_input, restored;
        if (wanted == RestorationTask::super_resolution) {
            model_input = upsample_image(image, ckpt_cfg.degradation.scale);
            restored = pipeline.restore(model_input);
        } else {
            MaskSpec spec = cfg.mask;
            spec.seed = mix_seed(cfg.mask.seed, static_cast<uint64_t>(index));
            torch::Tensor mask = generate_mask(spec, image.size(1), image.size(2));
            torch::Tensor masked = apply_mask(image, mask);
            model_input = with_mask_channel(masked, mask);
            restored = pipeline.restore(model_input);
        }
        std::string stem = fs::path(input_path).stem().string();
        write_png((fs::path(out_dir) / (stem + "_restored.png")).string(), restored);
        if (export_weights) {
            torch::NoGradGuard no_grad;
            export_weight_maps(pipeline.forward(model_input).weights, out_dir, stem);
        }
        ++index;
    }
    std::cout << "restored " << inputs.size() << " image(s) -> " << out_dir << "\n";
    return 0;
}

int cmd_viz_codes(const RunConfig& cfg, const std::string& ckpt_path, const std::string& label,
                  std::vector<int64_t> indices, int64_t sample_count,
                  const std::string& out_path) {
    persist_snapshot(cfg);
    if (!fs::exists(ckpt_path)) {
        throw ConfigError("viz-codes: checkpoint not found: " + ckpt_path);
    }
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (ckpt.stage != 1 && ckpt.stage != 2) {
        throw ConfigError("viz-codes: needs a stage-1 or stage-2 checkpoint");
    }
    const ParamGroup* group = ckpt.find_group("codebook:" + label);
    if (group == nullptr) {
        std::string available;
        for (const auto& l : ckpt.codebook_labels()) available += " " + l;
        throw ConfigError("viz-codes: unknown codebook '" + label + "'; available:" + available);
    }
    VectorCodebook codebook = codebook_from_group(*group);

    RunConfig ckpt_cfg = RunConfig::from_json(ckpt.config_snapshot);
    Decoder decoder = make_decoder(ckpt_cfg.network, 0);
    load_module_group(*decoder, *ckpt.find_group("decoder"));
    for (auto& p : decoder->parameters()) p.set_requires_grad(false);
    DecoderHandle handle = [&decoder](const torch::Tensor& grid) {
        torch::NoGradGuard no_grad;
        return decoder->forward(grid);
    };

    if (indices.empty()) {
        std::mt19937_64 rng(mix_seed(cfg.seed, "viz"));
        std::uniform_int_distribution<int64_t> dist(0, codebook.size() - 1);
        for (int64_t i = 0; i < sample_count; ++i) indices.push_back(dist(rng));
    }
    std::vector<torch::Tensor> tiles;
    for (int64_t idx : indices) {
        tiles.push_back(visualize_code(codebook, idx, handle));
    }
    write_png(out_path, hstack_images(tiles));
    std::cout << "wrote " << tiles.size() << "-tile grid -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-codebook VQ autoencoders with learned per-location blending"};
    app.require_subcommand(1);

    CliOverrides over;
    app.add_option("--config", over.config_path, "JSON config file (defaults to desk preset)");
    app.add_option("--seed", over.seed, "override config seed");
    app.add_option("--output", over.output_root, "override output root");
    app.add_option("--data-root", over.data_root, "override dataset root");

    auto* synth = app.add_subcommand("synth-data", "generate the procedural toy dataset");

    auto* train = app.add_subcommand("train", "run one training stage");
    int stage = 0;
    int64_t iterations_override = -1;
    std::string task_flag;
    train->add_option("--stage", stage, "training stage (1, 2, or 3)")->required();
    train->add_option("--iterations", iterations_override, "override iteration count");
    train->add_option("--task", task_flag, "stage-3 task: sr or inpaint");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
    std::string eval_task = "reconstruction";
    std::string eval_ckpt;
    eval_cmd->add_option("--task", eval_task, "reconstruction, sr, or inpaint");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path (defaults by task)");

    auto* restore = app.add_subcommand("restore", "restore input images with a stage-3 model");
    std::string restore_task = "sr";
    std::string restore_ckpt, restore_out = "restored";
    std::vector<std::string> restore_inputs;
    bool restore_weights = false;
    restore->add_option("--task", restore_task, "sr or inpaint")->required();
    restore->add_option("--checkpoint", restore_ckpt, "stage-3 checkpoint path");
    restore->add_option("--input", restore_inputs, "input PNG files")->required();
    restore->add_option("--out", restore_out, "output directory");
    restore->add_flag("--weight-maps", restore_weights, "also export blending weight maps");

    auto* viz = app.add_subcommand("viz-codes", "decode codebook entries into texture tiles");
    std::string viz_ckpt, viz_label, viz_out = "codes.png";
    std::vector<int64_t> viz_indices;
    int64_t viz_sample = 10;
    viz->add_option("--checkpoint", viz_ckpt, "stage-1 or stage-2 checkpoint")->required();
    viz->add_option("--label", viz_label, "codebook class label")->required();
    viz->add_option("--indices", viz_indices, "explicit entry indices");
    viz->add_option("--sample", viz_sample, "number of random entries when no indices given");
    viz->add_option("--out", viz_out, "output PNG path");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve_config(over);
        if (synth->parsed()) return cmd_synth_data(cfg);
        if (train->parsed()) {
            if (!task_flag.empty()) cfg.task = task_from_string(task_flag);
            return cmd_train(cfg, stage, iterations_override);
        }
        if (eval_cmd->parsed()) return cmd_eval(cfg, eval_task, eval_ckpt);
        if (restore->parsed()) {
            return cmd_restore(cfg, restore_task, restore_ckpt, restore_inputs, restore_out,
                               restore_weights);
        }
        if (viz->parsed()) {
            return cmd_viz_codes(cfg, viz_ckpt, viz_label, viz_indices, viz_sample, viz_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
