// Command-line front end: train / deblur / eval / visualize / profile / synth.
// Every subcommand is a thin shell over the library calls; failures print one
// machine-parsable "error: <kind>: <message>" line and exit nonzero.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "memdeblur/memdeblur.hpp"

namespace fs = std::filesystem;
using namespace memdeblur;

namespace {

using Scalar = float; // training/inference dtype; checkpoints are float32

struct ConfigFile {
    ModelConfig model;
    TrainConfig train;
};

ConfigFile load_config_file(const std::string& path, const std::string& preset) {
    ConfigFile cfg;
    if (preset == "toy") {
        cfg.model = ModelConfig::toy();
        cfg.train = TrainConfig::toy();
    } else if (preset == "full") {
        cfg.model = ModelConfig::full_scale();
        cfg.train = TrainConfig();
    } else if (!preset.empty()) {
        throw UsageError("unknown preset: " + preset);
    }
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config: " + path);
        nlohmann::json j = nlohmann::json::parse(is, nullptr, true, true);
        if (j.contains("model")) j.at("model").get_to(cfg.model);
        if (j.contains("train")) j.at("train").get_to(cfg.train);
    }
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

std::array<int, 3> parse_periods(const std::string& csv) {
    std::array<int, 3> out{5, 2, 1};
    std::stringstream ss(csv);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',') && i < 3) out[static_cast<std::size_t>(i++)] = std::stoi(item);
    if (i != 3) throw UsageError("--periods expects three comma-separated integers, e.g. 5,2,1");
    return out;
}

int cmd_train(const std::string& config_path, const std::string& preset,
              const std::string& data_dir, const std::string& out_dir, std::uint64_t seed,
              const std::string& resume_path) {
    ConfigFile cfg = load_config_file(config_path, preset);
    auto dataset = load_dataset<Scalar>(data_dir);

    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        cfg.model = resume->model;
        cfg.train = resume->train;
    }

    Model<Scalar> model(cfg.model, seed);
    auto result = train_loop(dataset, model, cfg.train, seed, out_dir, resume);
    save_checkpoint(out_dir + "/model.mdar", result.checkpoint);

    const auto& last = result.metrics.back();
    std::cout << "trained " << cfg.train.total_epochs << " epochs; final loss " << last.loss
              << ", val psnr " << last.psnr_val << " dB\n"
              << "checkpoint: " << out_dir << "/model.mdar\n";
    return 0;
}

int cmd_deblur(const std::string& ckpt_path, const std::string& input_dir,
               const std::string& output_dir, int scales, int capacity,
               const std::string& periods_csv, const std::string& trace_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ModelConfig cfg = ckpt.model;
    if (scales > 0) cfg.scales = scales;
    if (capacity > 0) cfg.capacity = capacity;
    if (!periods_csv.empty()) cfg.periods = parse_periods(periods_csv);
    cfg.validate();

    Model<Scalar> model(cfg, 0);
    apply_params(ckpt, model);

    auto frames = load_sequence<Scalar>(input_dir);
    RestoreOptions<Scalar> opts;
    opts.record_traces = !trace_path.empty();

    const auto t0 = std::chrono::steady_clock::now();
    auto result = restore_sequence(frames, model, opts);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_sequence(output_dir, result.restored[0]);
    if (!trace_path.empty()) save_traces(trace_path, result.traces);

    ComputeProfile prof =
        count_macs(cfg, frames[0].dim(1), frames[0].dim(2), static_cast<int>(frames.size()));
    prof.wall_seconds = secs;
    std::cout << "restored " << frames.size() << " frames at " << cfg.scales
              << " scale(s) in " << prof.wall_seconds << " s -> " << output_dir << "\n"
              << "compute: " << prof.gmacs << " gmacs (analytic), " << prof.params
              << " params\n";
    if (!trace_path.empty())
        std::cout << "attention trace (" << result.traces.size() << " readouts): "
                  << trace_path << "\n";
    return 0;
}

int cmd_eval(const std::string& restored_dir, const std::string& reference_dir) {
    auto restored = load_sequence<Scalar>(restored_dir);
    auto reference = load_sequence<Scalar>(reference_dir);
    MetricReport rep = evaluate_sequence(restored, reference);
    for (std::size_t i = 0; i < rep.per_frame_psnr.size(); ++i) {
        nlohmann::json j{{"frame", i},
                         {"psnr", std::isinf(rep.per_frame_psnr[i])
                                      ? nlohmann::json("inf")
                                      : nlohmann::json(rep.per_frame_psnr[i])},
                         {"ssim", rep.per_frame_ssim[i]}};
        std::cout << j.dump() << "\n";
    }
    std::cout << "mean_psnr_db " << rep.psnr_db << "\n";
    std::cout << "mean_ssim " << rep.ssim_value << "\n";
    return 0;
}

int cmd_visualize(const std::string& trace_path, int frame, int scale,
                  const std::string& direction, const std::string& loc,
                  const std::string& out_prefix) {
    auto traces = load_traces<Scalar>(trace_path);
    const Direction dir = direction_from_string(direction);

    int qy = -1, qx = -1;
    if (std::sscanf(loc.c_str(), "%d,%d", &qy, &qx) != 2)
        throw UsageError("--loc expects row,col in the query key grid");

    for (const auto& tr : traces) {
        if (tr.frame_index != frame || tr.scale != scale || tr.bank_direction != dir) continue;
        auto files = attention_heatmap(tr, qy, qx, out_prefix);
        for (const auto& f : files) std::cout << f << "\n";
        return 0;
    }
    throw UsageError("no trace recorded for frame " + std::to_string(frame) + " scale " +
                     std::to_string(scale) + " direction " + direction);
}

int cmd_profile(const std::string& config_path, const std::string& preset, int height,
                int width, int frames) {
    ConfigFile cfg = load_config_file(config_path, preset);
    ComputeProfile prof = count_macs(cfg.model, height, width, frames);
    nlohmann::json j{{"gmacs", prof.gmacs},
                     {"params", prof.params},
                     {"breakdown", prof.breakdown}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_synth(const std::string& input_dir, const std::string& out_dir, int window) {
    auto sharp = load_sequence<Scalar>(input_dir);
    auto pair = synthesize_blur(sharp, window);
    save_sequence(out_dir + "/blurry", pair.blurry);
    save_sequence(out_dir + "/sharp", pair.sharp);
    std::cout << "wrote " << pair.blurry.size() << " paired frames under " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-based multi-scale video deblurring"};
    app.require_subcommand(1);

    // train
    std::string config_path, preset = "toy", data_dir, out_dir, resume_path;
    std::uint64_t seed = 0;
    auto* train = app.add_subcommand("train", "train a model on a paired dataset");
    train->add_option("--config", config_path, "JSON config with model/train sections");
    train->add_option("--preset", preset, "base preset: toy or full")
        ->check(CLI::IsMember({"toy", "full"}));
    train->add_option("--data", data_dir, "dataset directory (blurry/ + sharp/)")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--seed", seed, "rng seed");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    // deblur
    std::string ckpt_path, input_dir, output_dir, periods_csv, trace_path;
    int scales = 0, capacity = 0;
    auto* deblur = app.add_subcommand("deblur", "restore a blurry sequence");
    deblur->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    deblur->add_option("--input", input_dir, "blurry frame directory")->required();
    deblur->add_option("--output", output_dir, "restored frame directory")->required();
    deblur->add_option("--scales", scales, "override scale count (1..3)");
    deblur->add_option("--capacity", capacity, "override memory capacity");
    deblur->add_option("--periods", periods_csv, "override periods, e.g. 5,2,1");
    deblur->add_option("--attention-trace", trace_path, "write attention traces here");

    // eval
    std::string restored_dir, reference_dir;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of restored vs reference frames");
    eval->add_option("--restored", restored_dir, "restored frame directory")->required();
    eval->add_option("--reference", reference_dir, "ground-truth frame directory")->required();

    // visualize
    std::string vis_trace, vis_loc, vis_dir = "forward", vis_out;
    int vis_frame = 1, vis_scale = 1;
    auto* vis = app.add_subcommand("visualize", "render attention heatmaps from a trace");
    vis->add_option("--trace", vis_trace, "trace file from deblur --attention-trace")->required();
    vis->add_option("--frame", vis_frame, "query frame index (1-based)")->required();
    vis->add_option("--scale", vis_scale, "query scale (1..3)");
    vis->add_option("--direction", vis_dir, "bank direction: forward or backward")
        ->check(CLI::IsMember({"forward", "backward"}));
    vis->add_option("--loc", vis_loc, "query location row,col in the key grid")->required();
    vis->add_option("--out", vis_out, "output path prefix")->required();

    // profile
    std::string prof_config, prof_preset = "full";
    int prof_h = 720, prof_w = 1280, prof_n = 100;
    auto* prof = app.add_subcommand("profile", "analytic MAC/parameter counts");
    prof->add_option("--config", prof_config, "JSON config");
    prof->add_option("--preset", prof_preset, "base preset: toy or full")
        ->check(CLI::IsMember({"toy", "full"}));
    prof->add_option("--height", prof_h, "frame height");
    prof->add_option("--width", prof_w, "frame width");
    prof->add_option("--frames", prof_n, "sequence length");

    // synth
    std::string synth_in, synth_out;
    int synth_window = 5;
    auto* synth = app.add_subcommand("synth", "make a blurry/sharp pair from sharp frames");
    synth->add_option("--input", synth_in, "sharp frame directory")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--window", synth_window, "odd temporal averaging window");

    try {
        app.parse(argc, argv);
        if (*train) return cmd_train(config_path, preset, data_dir, out_dir, seed, resume_path);
        if (*deblur)
            return cmd_deblur(ckpt_path, input_dir, output_dir, scales, capacity, periods_csv,
                              trace_path);
        if (*eval) return cmd_eval(restored_dir, reference_dir);
        if (*vis) return cmd_visualize(vis_trace, vis_frame, vis_scale, vis_dir, vis_loc, vis_out);
        if (*prof) return cmd_profile(prof_config, prof_preset, prof_h, prof_w, prof_n);
        if (*synth) return cmd_synth(synth_in, synth_out, synth_window);
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: validation: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return 1;
    } catch (const TrainingError& e) {
        std::cerr << "error: training: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
