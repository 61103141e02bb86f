// faceswap command line: make-synthetic, train, swap-image, swap-video, eval.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include "faceswap/pipeline.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace fswap;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool needs_checkpoint) {
    cmd->add_option("--config", c.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Seed overriding the config");
    auto* ck = cmd->add_option("--checkpoint", c.checkpoint,
                               needs_checkpoint ? "Trained checkpoint" : "Checkpoint to resume from");
    if (needs_checkpoint) ck->required()->check(CLI::ExistingFile);
}

PipelineConfig resolve_config(const Common& c) {
    PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_pipeline_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.train.seed = *c.seed;
    }
    cfg.validate();
    return cfg;
}

FaceInput load_input(const std::string& path) { return {read_png(path), path}; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Face swapping with an attribute-preserving generator, eye loss and adaptive blending"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Common common;

    // make-synthetic
    auto* synth = app.add_subcommand("make-synthetic", "Render a deterministic cartoon-face dataset");
    std::string synth_out;
    int persons = 2, frames = 8, size = 64;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output dataset root")->required();
    synth->add_option("--persons", persons, "Number of persons")->check(CLI::PositiveNumber);
    synth->add_option("--frames", frames, "Frames per person")->check(CLI::PositiveNumber);
    synth->add_option("--size", size, "Frame size in pixels")->check(CLI::Range(16, 4096));
    synth->add_option("--seed", synth_seed, "Dataset seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train on <data>/<person>/<frame>.png");
    add_common(train_cmd, common, false);
    std::string data_dir, train_out, preset;
    std::optional<int> epochs;
    train_cmd->add_option("--data", data_dir, "Dataset root (defaults to paths.data)");
    train_cmd->add_option("--out", train_out, "Output directory (defaults to paths.out)");
    train_cmd->add_option("--preset", preset, "Training preset")->check(CLI::IsMember({"desk", "paper"}));
    train_cmd->add_option("--epochs", epochs, "Override the number of epochs")->check(CLI::NonNegativeNumber);

    // swap-image
    auto* image_cmd = app.add_subcommand("swap-image", "Put the source identity into the target image");
    add_common(image_cmd, common, true);
    std::string source, target, image_out;
    image_cmd->add_option("--source", source, "Source image (identity)")->required()->check(CLI::ExistingFile);
    image_cmd->add_option("--target", target, "Target image (attributes)")->required()->check(CLI::ExistingFile);
    image_cmd->add_option("--out", image_out, "Output PNG")->required();

    // swap-video
    auto* video_cmd = app.add_subcommand("swap-video", "Swap every frame of a frames directory");
    add_common(video_cmd, common, true);
    std::string video_source, frames_dir, video_out;
    std::optional<int> workers;
    video_cmd->add_option("--source", video_source, "Source image (identity)")->required()->check(CLI::ExistingFile);
    video_cmd->add_option("--frames", frames_dir, "Input frames directory")->required()->check(CLI::ExistingDirectory);
    video_cmd->add_option("--out", video_out, "Output frames directory")->required();
    video_cmd->add_option("--workers", workers, "Parallel workers")->check(CLI::PositiveNumber);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score swaps listed in a source,target,swap manifest");
    add_common(eval_cmd, common, true);
    std::string manifest, report_out, method = "ours";
    eval_cmd->add_option("--manifest", manifest, "Triples manifest")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", report_out, "CSV report path");
    eval_cmd->add_option("--method", method, "Method name for the report row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            make_synthetic(default_synthetic_specs(persons, frames, size, synth_seed), synth_out);
            std::cout << "wrote " << persons << " persons × " << frames << " frames to " << synth_out << '\n';
        } else if (*train_cmd) {
            PipelineConfig cfg = resolve_config(common);
            if (preset == "desk") cfg.train = TrainConfig::desk();
            if (preset == "paper") cfg.train = TrainConfig::paper();
            if (common.seed) cfg.train.seed = *common.seed;
            if (epochs) cfg.train.epochs = *epochs;
            cfg.train.validate();
            const std::string data = data_dir.empty() ? cfg.data_dir : data_dir;
            const std::string out = train_out.empty() ? cfg.out_dir : train_out;
            if (data.empty() || out.empty()) {
                std::cerr << "train needs --data and --out (or paths in the config)\n";
                return 1;
            }
            const auto provider = make_landmark_provider(cfg.plugins);
            const Dataset dataset = load_dataset(data, *provider, cfg.generator.crop_size);
            FaceSwapModel<float> model(cfg.generator, cfg.seed);
            TrainOptions options;
            options.out_dir = out;
            if (!common.checkpoint.empty()) options.resume_from = common.checkpoint;
            options.on_step = [](std::int64_t step, const LossReport& r) {
                if (step % 10 == 0) std::cout << "step " << step << " total " << r.total << '\n';
            };
            const TrainResult result = train(model, dataset, cfg.train, cfg.weights, cfg.eye_loss, options);
            save_pipeline_config(fs::path(out) / "config.json", cfg);
            std::cout << "trained " << result.steps << " steps; checkpoint " << result.checkpoint.string() << '\n';
        } else if (*image_cmd) {
            const PipelineConfig cfg = resolve_config(common);
            const SwapEngine engine(cfg, read_checkpoint(common.checkpoint));
            write_png(image_out, engine.swap_image(load_input(source), load_input(target)));
            std::cout << "wrote " << image_out << '\n';
        } else if (*video_cmd) {
            const PipelineConfig cfg = resolve_config(common);
            const SwapEngine engine(cfg, read_checkpoint(common.checkpoint));
            const auto summary = engine.swap_video(load_input(video_source), frames_dir, video_out,
                                                   workers.value_or(cfg.workers));
            for (const auto& e : summary.errors) std::cerr << "frame " << e.frame << ": " << e.message << '\n';
            std::cout << "swapped " << summary.swapped << " of " << summary.frames << " frames into " << video_out
                      << '\n';
        } else if (*eval_cmd) {
            const PipelineConfig cfg = resolve_config(common);
            const SwapEngine engine(cfg, read_checkpoint(common.checkpoint));
            const MetricReport report = evaluate(engine, read_manifest(manifest));
            const MetricTable table = MetricTable::from_reports({{method, report}});
            std::cout << table.to_text();
            if (!report_out.empty()) {
                std::ofstream out(report_out);
                if (!out) throw IoFailure("cannot write " + report_out);
                out << table.to_csv();
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
