#include "bdg/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "bdg/checkpoint.hpp"
#include "bdg/errors.hpp"
#include "bdg/image_io.hpp"

namespace bdg {

namespace fs = std::filesystem;

namespace {

std::string sigma_dir(double sigma) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "sigma-%g", sigma);
    return buf;
}

const std::vector<std::string>& image_extensions() {
    static const std::vector<std::string> ext = DatasetLayout{}.extensions;
    return ext;
}

std::vector<SampleRecord> select(std::vector<SampleRecord> records, const SplitManifest* split, bool test_side) {
    if (split == nullptr) return records;
    std::vector<SampleRecord> kept;
    for (auto& r : records) {
        const auto it = split->datasets.find(r.dataset);
        if (it == split->datasets.end()) continue;
        const auto& ids = test_side ? it->second.second : it->second.first;
        if (std::find(ids.begin(), ids.end(), r.id) != ids.end()) kept.push_back(std::move(r));
    }
    return kept;
}

std::string flops_line(const NetworkConfig& cfg) {
    const FlopBreakdown f = count_flops(cfg);
    char buf[160];
    std::snprintf(buf, sizeof buf, "FLOPs at %dx%d: %lld (%.3f G)", cfg.input_size, cfg.input_size,
                  static_cast<long long>(f.total()), static_cast<double>(f.total()) * 1e-9);
    return buf;
}

}  // namespace

std::size_t cmd_gen_bdm(const GenBdmOptions& opt) {
    if (opt.sigmas.empty()) throw std::invalid_argument("gen-bdm: at least one sigma is required");
    for (double s : opt.sigmas) {
        if (!(s > 0.0)) throw std::invalid_argument("gen-bdm: sigma must be > 0");
    }
    if (!fs::is_directory(opt.masks)) throw DataError("mask directory not found: " + opt.masks.string());
    const auto masks = list_by_stem(opt.masks, image_extensions());
    std::size_t written = 0;
    for (const auto& [stem, path] : masks) {
        const BinaryMask mask = read_mask(path);
        const DistanceField field = distance_transform(extract_boundary(mask, opt.boundary));
        for (double sigma : opt.sigmas) {
            const fs::path dir = opt.sigmas.size() == 1 ? opt.out : opt.out / sigma_dir(sigma);
            const BoundaryDistributionMap bdm = bdm_from_distance(field, sigma, opt.normalized);
            Grid<double> shown = bdm.values;
            if (!opt.normalized) {
                // Literal maps peak well below 1; scale the preview to the peak.
                double peak = 0.0;
                for (double v : shown.values()) peak = std::max(peak, v);
                if (peak > 0.0) {
                    for (double& v : shown.values()) v /= peak;
                }
            }
            write_gray(dir / (stem + ".png"), to_preview(shown));
            write_bdm_raw(dir / (stem + ".bdm"), bdm);
            written += 2;
        }
    }
    return written;
}

std::vector<PreparedSample> load_samples(const RunConfig& cfg, bool test_side) {
    if (cfg.manifest.empty()) throw std::invalid_argument("no layout manifest given");
    std::optional<SplitManifest> split;
    if (!cfg.split.empty()) split = read_split(cfg.split);
    const PreprocessOptions opt = cfg.preprocess_options();
    std::vector<PreparedSample> out;
    for (const auto& layout : read_layout(cfg.manifest)) {
        for (const auto& r : select(ingest(layout), split ? &*split : nullptr, test_side)) {
            out.push_back(preprocess(r, opt));
        }
    }
    if (out.empty()) throw DataError("no samples selected from " + cfg.manifest.string());
    return out;
}

TrainResult cmd_train(const RunConfig& cfg, std::ostream* progress) {
    cfg.validate();
    const std::vector<PreparedSample> samples = load_samples(cfg, false);
    BDGNet<float> net(cfg.network, cfg.seed);
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream os(cfg.output_dir / "config.ini");
        os << to_text(cfg);
    }
    const int every = std::max(1, cfg.optimizer.iterations / 20);
    return train(net, samples, cfg, [&](const LossRow& row) {
        if (progress != nullptr && (row.iteration % every == 0 || row.iteration == 1)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter %d  total %.5f  bdm %.5f  wbce %.5f  wiou %.5f\n", row.iteration,
                          row.total, row.bdm, row.wbce, row.wiou);
            *progress << buf << std::flush;
        }
    });
}

EvalResult cmd_eval(const EvalOptions& opt, std::ostream& os) {
    LoadedModel model = load_checkpoint(opt.checkpoint);
    RunConfig cfg = model.config;
    if (!opt.manifest.empty()) cfg.manifest = opt.manifest;
    if (cfg.manifest.empty()) throw std::invalid_argument("eval: no layout manifest given");
    std::optional<SplitManifest> split;
    if (!opt.split.empty()) split = read_split(opt.split);
    const PreprocessOptions popt = cfg.preprocess_options();

    EvalResult result;
    fs::create_directories(opt.out);
    for (const auto& layout : read_layout(cfg.manifest)) {
        const auto records = select(ingest(layout), split ? &*split : nullptr, true);
        if (records.empty()) continue;
        std::vector<EvalPair> pairs;
        constexpr std::size_t kChunk = 8;
        for (std::size_t start = 0; start < records.size(); start += kChunk) {
            std::vector<PreparedSample> chunk;
            for (std::size_t i = start; i < std::min(records.size(), start + kChunk); ++i) {
                chunk.push_back(preprocess(records[i], popt));
            }
            std::vector<std::size_t> idx(chunk.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            auto preds = predict(*model.net, make_batch(chunk, idx).images);
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                const BinaryMask& gt = records[start + i].mask;
                pairs.push_back({chunk[i].id, resize_prediction(preds[i].probability, gt.height(), gt.width()), gt});
            }
        }
        MetricsReport report = evaluate_dataset(pairs, opt.threshold);
        std::ofstream csv(opt.out / ("metrics-" + layout.name + ".csv"));
        report.write_csv(csv);
        std::ofstream txt(opt.out / ("metrics-" + layout.name + ".txt"));
        txt << report.table();
        if (!csv || !txt) throw DataError("cannot write metrics in " + opt.out.string());
        os << "[" << layout.name << "] " << report.count() << " images\n" << report.table();
        result.reports.emplace(layout.name, std::move(report));
    }
    result.flops = count_flops(cfg.network);
    os << flops_line(cfg.network) << '\n';
    return result;
}

std::size_t cmd_infer(const InferOptions& opt) {
    LoadedModel model = load_checkpoint(opt.checkpoint);
    const RunConfig& cfg = model.config;
    if (!fs::is_directory(opt.images)) throw DataError("image directory not found: " + opt.images.string());
    std::size_t count = 0;
    for (const auto& [stem, path] : list_by_stem(opt.images, image_extensions())) {
        const RgbImage image = read_rgb(path);
        Tensor<float> input = resize_image(image, cfg.network.input_size);
        standardize(input, cfg.norm);
        const Prediction p = predict(*model.net, input).front();
        const PredictionMap prob = resize_prediction(p.probability, image.height, image.width);
        const PredictionMap bdm = resize_prediction(p.bdm, image.height, image.width);
        write_mask(opt.out / (stem + "_mask.png"), binarize(prob, opt.threshold));
        write_gray(opt.out / (stem + "_bdm.png"), to_preview(bdm));
        ++count;
    }
    return count;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Boundary-guided polyp segmentation: BDM generation, training, evaluation and inference"};
    app.require_subcommand(1);

    GenBdmOptions gen;
    std::string gen_boundary = "inner";
    bool gen_literal = false;
    auto* gen_cmd = app.add_subcommand("gen-bdm", "Write boundary distribution maps for a directory of masks");
    gen_cmd->add_option("--masks", gen.masks, "mask directory")->required();
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--sigma", gen.sigmas, "one or more widths; several give one subdirectory each")
        ->delimiter(',');
    gen_cmd->add_flag("--literal", gen_literal, "unnormalised maps (peak 1/(sqrt(2 pi) sigma))");
    gen_cmd->add_option("--boundary", gen_boundary, "inner or symmetric")->check(CLI::IsMember({"inner", "symmetric"}));

    auto* train_cmd = app.add_subcommand("train", "Train from a configuration file and flags");
    std::string config_path;
    train_cmd->add_option("--config", config_path, "configuration file");
    std::map<std::string, std::string> overrides;
    std::vector<std::pair<std::string, CLI::Option*>> key_options;
    for (const auto& key : config_keys()) {
        key_options.emplace_back(key.name, train_cmd->add_option("--" + key.name, overrides[key.name], key.help));
    }
    bool no_bdgm = false, no_bdgd = false;
    train_cmd->add_flag("--no-bdgm", no_bdgm, "gate the decoder with ones instead of the generated map");
    train_cmd->add_flag("--no-bdgd", no_bdgd, "plain upsample-add decoder");
    bool print_config = false;
    train_cmd->add_flag("--print-config", print_config, "print the resolved configuration and exit");

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset layout");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint directory")->required();
    eval_cmd->add_option("--manifest", eval.manifest, "layout manifest (default: the training manifest)");
    eval_cmd->add_option("--split", eval.split, "evaluate the test ids of this split manifest");
    eval_cmd->add_option("--out", eval.out, "report directory");
    eval_cmd->add_option("--threshold", eval.threshold, "binarisation threshold for Dice and IoU");

    InferOptions infer;
    auto* infer_cmd = app.add_subcommand("infer", "Predict masks and boundary maps for a directory of images");
    infer_cmd->add_option("--checkpoint", infer.checkpoint, "checkpoint directory")->required();
    infer_cmd->add_option("--images", infer.images, "image directory")->required();
    infer_cmd->add_option("--out", infer.out, "output directory")->required();
    infer_cmd->add_option("--threshold", infer.threshold, "binarisation threshold");

    std::size_t train_count = 0;
    std::uint64_t split_seed = 0;
    std::string split_manifest, split_out;
    auto* split_cmd = app.add_subcommand("split", "Write a seeded train/test split of a dataset layout");
    split_cmd->add_option("--manifest", split_manifest, "layout manifest")->required();
    split_cmd->add_option("--train-count", train_count, "training images per dataset")->required();
    split_cmd->add_option("--seed", split_seed, "shuffle seed");
    split_cmd->add_option("--out", split_out, "split manifest to write")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            gen.normalized = !gen_literal;
            gen.boundary = gen_boundary == "inner" ? BoundaryMode::inner : BoundaryMode::symmetric;
            out << cmd_gen_bdm(gen) << " files written to " << gen.out.string() << '\n';
        } else if (train_cmd->parsed()) {
            RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
            for (const auto& [name, option] : key_options) {
                if (option->count() > 0) apply_setting(cfg, name, overrides[name]);
            }
            if (no_bdgm) cfg.network.use_bdgm = false;
            if (no_bdgd) cfg.network.use_bdgd = false;
            cfg.validate();
            if (print_config) {
                out << to_text(cfg);
                return kExitOk;
            }
            const TrainResult r = cmd_train(cfg, &out);
            out << "final checkpoint: " << r.final_checkpoint.string() << '\n';
        } else if (eval_cmd->parsed()) {
            cmd_eval(eval, out);
        } else if (infer_cmd->parsed()) {
            out << cmd_infer(infer) << " images written to " << infer.out.string() << '\n';
        } else if (split_cmd->parsed()) {
            std::vector<SampleRecord> records;
            for (const auto& layout : read_layout(split_manifest)) {
                auto r = ingest(layout);
                records.insert(records.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
            }
            write_split(split_out, make_split(records, train_count, split_seed));
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace bdg
