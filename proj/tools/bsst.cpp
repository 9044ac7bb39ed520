// bsst: blur maps, restoration runs, FLOPs sweeps and sparsity statistics from the command line.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bsst/commands.hpp"

namespace {

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

bsst::AttentionMode mode_from(const std::string& s) { return bsst::parse_mode(s); }

}  // namespace

int main(int argc, char** argv) {
    using namespace bsst::cli;
    CLI::App app{"Blur-aware sparse video restoration"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    BlurmapOptions blur;
    std::string blur_flows, blur_synth;
    auto* cmd_b = app.add_subcommand("blurmap", "Blur maps from a flow directory or a synthetic spec");
    cmd_b->add_option("--flows", blur_flows, "Directory of forward_NNNN.flo / backward_NNNN.flo");
    cmd_b->add_option("--synthetic", blur_synth, "Synthetic motion spec (JSON)");
    cmd_b->add_option("--out", blur.out, "Output directory")->required();

    RunOptions run;
    std::string run_config, run_frames, run_flows, run_weights, run_manifest;
    std::uint64_t run_seed = 0;
    auto* cmd_r = app.add_subcommand("run", "Restore a clip");
    cmd_r->add_option("--config", run_config, "Model config (JSON)");
    cmd_r->add_option("--frames", run_frames, "Directory of frame_NNNN.ppm");
    cmd_r->add_option("--flows", run_flows, "Directory of quarter-resolution flows");
    cmd_r->add_option("--weights", run_weights, "Weights manifest written by --dump-weights");
    cmd_r->add_option("--manifest", run_manifest, "Repeat the run recorded in a manifest");
    auto* seed_opt = cmd_r->add_option("--seed", run_seed, "Weight seed (overrides config)");
    cmd_r->add_option("--out", run.out, "Output directory")->required();
    cmd_r->add_flag("--instrumented", run.instrumented, "Count MACs and write flops.csv");
    cmd_r->add_flag("--dump-weights", run.dump_weights, "Write weights.bin / weights.json");

    FlopsOptions flops;
    std::string flops_config, flops_out;
    std::vector<std::string> flops_modes{"dense", "sparse"};
    auto* cmd_f = app.add_subcommand("flops", "Analytic MAC counts per stage");
    cmd_f->add_option("--config", flops_config, "Model config (JSON)");
    cmd_f->add_option("--frames,-T", flops.frames, "Clip lengths")->delimiter(',');
    cmd_f->add_option("--modes", flops_modes, "Attention modes")->delimiter(',');
    cmd_f->add_option("--height", flops.height, "Frame height");
    cmd_f->add_option("--width", flops.width, "Frame width");
    cmd_f->add_option("--out", flops_out, "CSV file (default stdout)");
    cmd_f->add_flag("--instrumented", flops.instrumented, "Append cross-checks from small instrumented runs");

    SparsityOptions sparsity;
    std::string sp_config, sp_flows, sp_synth, sp_out;
    auto* cmd_s = app.add_subcommand("sparsity-stats", "Per-layer sparsity plans and token retention");
    cmd_s->add_option("--config", sp_config, "Model config (JSON)");
    cmd_s->add_option("--flows", sp_flows, "Flow directory (feature resolution)");
    cmd_s->add_option("--synthetic", sp_synth, "Synthetic motion spec (JSON)");
    cmd_s->add_option("--out", sp_out, "JSON file (default stdout)");

    SynthOptions synth;
    auto* cmd_y = app.add_subcommand("synth", "Write a synthetic clip and its flows");
    cmd_y->add_option("--spec", synth.spec, "Synthetic motion spec (JSON)")->required();
    cmd_y->add_option("--out", synth.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
        if (s.empty()) return std::nullopt;
        return std::filesystem::path(s);
    };

    const char* stage = "bsst";
    try {
        if (*cmd_b) {
            stage = "blurmap";
            blur.flow_dir = opt_path(blur_flows);
            blur.synthetic = opt_path(blur_synth);
            cmd_blurmap(blur);
        } else if (*cmd_r) {
            stage = "run";
            run.config = opt_path(run_config);
            run.frames_dir = opt_path(run_frames);
            run.flow_dir = opt_path(run_flows);
            run.weights = opt_path(run_weights);
            run.manifest = opt_path(run_manifest);
            if (*seed_opt) run.seed = run_seed;
            const auto summary = cmd_run(run);
            std::cout << summary.manifest.string() << "\n";
        } else if (*cmd_f) {
            stage = "flops";
            flops.config = opt_path(flops_config);
            flops.modes.clear();
            for (const auto& m : flops_modes) flops.modes.push_back(mode_from(m));
            const std::string csv = cmd_flops(flops);
            if (flops_out.empty())
                std::cout << csv;
            else
                bsst::io::write_text(flops_out, csv);
        } else if (*cmd_s) {
            stage = "sparsity-stats";
            sparsity.config = opt_path(sp_config);
            sparsity.flow_dir = opt_path(sp_flows);
            sparsity.synthetic = opt_path(sp_synth);
            const std::string text = cmd_sparsity_stats(sparsity).dump(2) + "\n";
            if (sp_out.empty())
                std::cout << text;
            else
                bsst::io::write_text(sp_out, text);
        } else if (*cmd_y) {
            stage = "synth";
            cmd_synth(synth);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << stage << ": " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
