#pragma once

// Implementations behind the `bsst` command-line tool. Each command takes a plain options struct
// and throws on failure; the tool front-end turns exceptions into a one-line error and exit code.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsst/blur_map.hpp"
#include "bsst/bsst.hpp"
#include "bsst/config.hpp"
#include "bsst/flops.hpp"
#include "bsst/io.hpp"
#include "bsst/pipeline.hpp"
#include "bsst/serialize.hpp"
#include "bsst/synthetic.hpp"

namespace bsst::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "0.3.0";

inline std::string indexed(const char* prefix, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu%s", prefix, i, ext);
    return buf;
}

inline json read_json(const fs::path& path) {
    const auto bytes = io::read_bytes(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw io::IoError(path.string() + ": byte offset " + std::to_string(e.byte) + ": invalid JSON");
    }
}

inline ModelConfig load_config(const std::optional<fs::path>& path) {
    if (!path) return ModelConfig{};
    return config_from_json(read_json(*path));
}

/// 64-bit FNV-1a of a file's bytes, used to validate manifests.
inline std::string file_digest(const fs::path& path) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : io::read_bytes(path)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Loads forward_NNNN.flo / backward_NNNN.flo from `dir`. When `frames` is given exactly
/// frames - 1 flows per direction are required.
inline FlowSequence load_flow_dir(const fs::path& dir, std::optional<std::size_t> frames = std::nullopt) {
    if (!fs::is_directory(dir)) throw io::IoError(dir.string() + ": flow directory does not exist");
    auto count = [&](const char* prefix) {
        std::size_t n = 0;
        while (fs::exists(dir / indexed(prefix, n, ".flo"))) ++n;
        return n;
    };
    const std::size_t nf = count("forward"), nb = count("backward");
    std::size_t expected = nf;
    if (frames) {
        expected = *frames - 1;
        for (std::size_t t = 0; t < expected; ++t)
            for (const char* prefix : {"forward", "backward"}) {
                const fs::path p = dir / indexed(prefix, t, ".flo");
                if (!fs::exists(p))
                    throw io::IoError("missing flow file " + p.string() + " (expected " + std::to_string(expected) +
                                      " flows per direction for " + std::to_string(*frames) + " frames)");
            }
        if (nf != expected || nb != expected)
            throw io::IoError(dir.string() + ": flow count mismatch: expected " + std::to_string(expected) +
                              " per direction for " + std::to_string(*frames) + " frames, found " +
                              std::to_string(nf) + " forward and " + std::to_string(nb) + " backward");
    } else {
        if (nf == 0) throw io::IoError(dir.string() + ": no forward_0000.flo found");
        if (nf != nb)
            throw io::IoError(dir.string() + ": flow count mismatch: " + std::to_string(nf) + " forward vs " +
                              std::to_string(nb) + " backward");
    }
    if (expected == 0) throw io::IoError(dir.string() + ": a single-frame clip has no flows to load");

    std::vector<Flow> fwd, bwd;
    Shape shape;
    fs::path first;
    for (std::size_t t = 0; t < expected; ++t)
        for (const char* prefix : {"forward", "backward"}) {
            const fs::path p = dir / indexed(prefix, t, ".flo");
            Flow f = io::read_flo(p);
            if (shape.empty()) {
                shape = f.shape();
                first = p;
            } else if (f.shape() != shape) {
                throw io::IoError("flow shape mismatch: " + first.string() + " is " + shape_str(shape) + " but " +
                                  p.string() + " is " + shape_str(f.shape()));
            }
            (prefix[0] == 'f' ? fwd : bwd).push_back(std::move(f));
        }
    return FlowSequence(shape[0], shape[1], std::move(fwd), std::move(bwd));
}

/// Loads frame_NNNN.ppm files as [T,H,W,3].
inline Tensor load_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw io::IoError(dir.string() + ": frame directory does not exist");
    std::vector<Tensor> frames;
    for (std::size_t t = 0; fs::exists(dir / indexed("frame", t, ".ppm")); ++t) {
        const fs::path p = dir / indexed("frame", t, ".ppm");
        Tensor img = io::read_pnm(p);
        if (img.rank() != 3) throw io::IoError(p.string() + ": expected a colour (P6) frame");
        if (!frames.empty() && img.shape() != frames.front().shape())
            throw io::IoError(p.string() + ": frame size " + shape_str(img.shape()) + " differs from " +
                              shape_str(frames.front().shape()));
        frames.push_back(std::move(img));
    }
    if (frames.empty()) throw io::IoError(dir.string() + ": no frame_0000.ppm found");
    return stack(frames);
}

// ---------------------------------------------------------------------------------------------
// blurmap

struct BlurmapOptions {
    std::optional<fs::path> flow_dir;
    std::optional<fs::path> synthetic;
    fs::path out;
};

inline BlurMapSequence cmd_blurmap(const BlurmapOptions& opt) {
    require(opt.flow_dir.has_value() != opt.synthetic.has_value(), "blurmap: give exactly one of --flows or --synthetic");
    const FlowSequence flows =
        opt.flow_dir ? load_flow_dir(*opt.flow_dir) : synthetic_flows(synthetic_from_json(read_json(*opt.synthetic)));
    BlurMapSequence maps = estimate_blur_maps(flows);
    fs::create_directories(opt.out);

    json frames = json::array();
    const std::size_t T = flows.frames();
    for (std::size_t t = 0; t < T; ++t) {
        const Tensor raw = maps.raw.frame(t);
        const auto [mn, mx] = std::minmax_element(raw.values().begin(), raw.values().end());
        double sum = 0.0;
        for (float v : raw.values()) sum += v;
        const std::string file = indexed("blur", t, ".pgm");
        io::write_pgm(opt.out / file, maps.blur.frame(t));
        frames.push_back({{"t", t}, {"file", file}, {"raw_min", *mn}, {"raw_max", *mx},
                          {"raw_mean", sum / static_cast<double>(raw.size())}});
    }
    const auto [gmn, gmx] = std::minmax_element(maps.raw.values().begin(), maps.raw.values().end());
    json summary = {{"tool_version", kToolVersion}, {"frames", frames}, {"height", flows.height},
                    {"width", flows.width},        {"raw_min", *gmn},  {"raw_max", *gmx},
                    {"degenerate", *gmx == *gmn}};
    io::write_text(opt.out / "blurmap.json", summary.dump(2) + "\n");
    return maps;
}

// ---------------------------------------------------------------------------------------------
// synth

struct SynthOptions {
    fs::path spec;
    fs::path out;
};

/// Writes frame_NNNN.ppm at the spec's size and quarter-resolution flows next to them.
inline void cmd_synth(const SynthOptions& opt) {
    const SyntheticSpec spec = synthetic_from_json(read_json(opt.spec));
    require(spec.height % 4 == 0 && spec.width % 4 == 0, "synth: H and W must be divisible by 4");
    fs::create_directories(opt.out);
    const Tensor video = synthetic_video(spec);
    for (std::size_t t = 0; t < spec.frames; ++t) io::write_ppm(opt.out / indexed("frame", t, ".ppm"), video.frame(t));
    const FlowSequence flows = synthetic_flows(spec, 4);
    for (std::size_t t = 0; t + 1 < spec.frames; ++t) {
        io::write_flo(opt.out / indexed("forward", t, ".flo"), flows.forward[t]);
        io::write_flo(opt.out / indexed("backward", t, ".flo"), flows.backward[t]);
    }
}

// ---------------------------------------------------------------------------------------------
// run

struct RunOptions {
    std::optional<fs::path> config;
    std::optional<fs::path> frames_dir;
    std::optional<fs::path> flow_dir;
    std::optional<fs::path> weights;
    std::optional<fs::path> manifest;  // rerun from a previous manifest
    std::optional<std::uint64_t> seed;
    fs::path out;
    bool instrumented = false;
    bool dump_weights = false;
};

struct RunSummary {
    fs::path manifest;
    ForwardResult result;
};

inline json plans_json(const std::vector<SparsityPlan>& plans) {
    json arr = json::array();
    for (std::size_t l = 0; l < plans.size(); ++l) {
        json p = to_json(plans[l]);
        p["layer"] = l;
        arr.push_back(p);
    }
    return arr;
}

inline RunSummary cmd_run(RunOptions opt) {
    ModelConfig cfg;
    if (opt.manifest) {
        const json m = read_json(*opt.manifest);
        require(m.value("kind", "") == "bsst-run", "run: " + opt.manifest->string() + " is not a run manifest");
        cfg = config_from_json(m.at("config"));
        const json& in = m.at("inputs");
        opt.frames_dir = in.at("frames").get<std::string>();
        opt.flow_dir = in.at("flows").get<std::string>();
        if (!in.at("weights").is_null()) opt.weights = in.at("weights").get<std::string>();
        if (m.contains("options")) {
            opt.instrumented = opt.instrumented || m["options"].value("instrumented", false);
            opt.dump_weights = opt.dump_weights || m["options"].value("dump_weights", false);
        }
    } else {
        cfg = load_config(opt.config);
    }
    if (opt.seed) cfg.seed = *opt.seed;
    require(opt.frames_dir && opt.flow_dir, "run: --frames and --flows are required (or --manifest)");

    ModelWeights weights;
    if (opt.weights) {
        LoadedWeights lw = load_weights(*opt.weights);
        cfg = lw.config;
        if (opt.seed) cfg.seed = *opt.seed;
        weights = std::move(lw.weights);
    } else {
        weights = ModelWeights::random(cfg);
    }

    const Tensor video = load_frames(*opt.frames_dir);
    const FlowSequence flows = load_flow_dir(*opt.flow_dir, video.dim(0));

    FlopsCounter counter;
    if (opt.instrumented) counter.enable();
    ForwardResult result = forward(video, flows, cfg, weights, &counter);

    fs::create_directories(opt.out);
    json outputs = json::array();
    auto record = [&](const std::string& file) {
        outputs.push_back({{"file", file}, {"fnv1a64", file_digest(opt.out / file)}});
    };
    for (std::size_t t = 0; t < result.restored.dim(0); ++t) {
        const std::string file = indexed("frame", t, ".ppm");
        io::write_ppm(opt.out / file, result.restored.frame(t));
        record(file);
    }
    io::write_text(opt.out / "plans.json", plans_json(result.plans).dump(2) + "\n");
    record("plans.json");
    if (opt.instrumented) {
        const FlopsReport r = instrumented_flops(counter, cfg, video.dim(0), cfg.mode);
        io::write_text(opt.out / "flops.csv", std::string(kFlopsCsvHeader) + flops_csv_rows(r));
        record("flops.csv");
    }
    if (opt.dump_weights) {
        save_weights(opt.out / "weights", weights, cfg);
        record("weights.json");
        record("weights.bin");
    }

    json timings = json::array();
    for (const auto& s : result.timings) timings.push_back({{"stage", s.stage}, {"ms", s.milliseconds}});
    const json manifest = {
        {"kind", "bsst-run"},
        {"tool_version", kToolVersion},
        {"config", to_json(cfg)},
        {"seed", cfg.seed},
        {"inputs",
         {{"frames", fs::absolute(*opt.frames_dir).string()},
          {"flows", fs::absolute(*opt.flow_dir).string()},
          {"weights", opt.weights ? json(fs::absolute(*opt.weights).string()) : json(nullptr)}}},
        {"options", {{"instrumented", opt.instrumented}, {"dump_weights", opt.dump_weights}}},
        {"output_dir", fs::absolute(opt.out).string()},
        {"frames", video.dim(0)},
        {"timings", timings},
        {"outputs", outputs}};
    const fs::path manifest_path = opt.out / "manifest.json";
    io::write_text(manifest_path, manifest.dump(2) + "\n");
    return {manifest_path, std::move(result)};
}

/// Checks every output listed in a run manifest exists next to it with the recorded digest.
inline void validate_manifest(const fs::path& manifest_path) {
    const json m = read_json(manifest_path);
    require(m.value("kind", "") == "bsst-run", manifest_path.string() + ": not a run manifest");
    config_from_json(m.at("config"));
    const fs::path dir = manifest_path.parent_path();
    const auto& outs = m.at("outputs");
    require(outs.is_array() && !outs.empty(), manifest_path.string() + ": manifest lists no outputs");
    for (const auto& o : outs) {
        const fs::path p = dir / o.at("file").get<std::string>();
        if (!fs::exists(p)) throw io::IoError(manifest_path.string() + ": listed output " + p.string() + " is missing");
        if (file_digest(p) != o.at("fnv1a64").get<std::string>())
            throw io::IoError(manifest_path.string() + ": digest mismatch for " + p.string());
    }
}

// ---------------------------------------------------------------------------------------------
// flops

struct FlopsOptions {
    std::optional<fs::path> config;
    std::vector<std::size_t> frames{12, 24, 36, 48};
    std::vector<AttentionMode> modes{AttentionMode::dense, AttentionMode::sparse};
    std::size_t height = 256;
    std::size_t width = 256;
    bool instrumented = false;
};

/// Clip used for instrumented cross-checks: constant global motion, so every window is blurry
/// in the interior frames.
inline std::pair<Tensor, FlowSequence> blurry_clip(std::size_t frames, std::size_t height, std::size_t width) {
    SyntheticSpec spec;
    spec.frames = frames;
    spec.height = height;
    spec.width = width;
    spec.u = 4.0f;
    return {synthetic_video(spec), synthetic_flows(spec, 4)};
}

/// Analytic sweep as CSV text. With `instrumented`, small forwards (T = 4, 8 at 64x64) are run
/// and their counters appended as `<mode>:instrumented` rows next to `<mode>:analytic` rows;
/// any disagreement is an error.
inline std::string cmd_flops(const FlopsOptions& opt) {
    ModelConfig cfg = load_config(opt.config);
    require(opt.height % 4 == 0 && opt.width % 4 == 0, "flops: height and width must be divisible by 4");
    std::ostringstream csv;
    csv << kFlopsCsvHeader;
    for (std::size_t T : opt.frames) {
        require(T >= 1, "flops: T must be positive");
        for (AttentionMode mode : opt.modes)
            csv << flops_csv_rows(analytic_pipeline_flops(cfg, T, opt.height, opt.width, mode));
    }
    if (opt.instrumented) {
        for (std::size_t T : {std::size_t{4}, std::size_t{8}}) {
            for (AttentionMode mode : opt.modes) {
                ModelConfig c = cfg;
                c.mode = mode;
                const auto [video, flows] = blurry_clip(T, 64, 64);
                FlopsCounter counter;
                counter.enable();
                const ModelWeights w = ModelWeights::random(c);
                forward(video, flows, c, w, &counter);
                FlopsReport measured = instrumented_flops(counter, c, T, mode);
                FlopsReport expected = analytic_pipeline_flops(c, T, 64, 64, mode);
                require(measured == expected, "flops: instrumented count disagrees with analytic count at T=" +
                                                  std::to_string(T) + " (" + to_string(mode) + ")");
                std::string rows_a = flops_csv_rows(expected), rows_i = flops_csv_rows(measured);
                const std::string tag = "," + to_string(mode) + ",";
                auto retag = [&](std::string rows, const std::string& suffix) {
                    std::string out;
                    std::istringstream lines(rows);
                    for (std::string line; std::getline(lines, line);) {
                        const auto pos = line.find(tag);
                        out += line.substr(0, pos) + "," + to_string(mode) + suffix + "," +
                               line.substr(pos + tag.size()) + "\n";
                    }
                    return out;
                };
                csv << retag(rows_a, ":analytic") << retag(rows_i, ":instrumented");
            }
        }
    }
    return csv.str();
}

// ---------------------------------------------------------------------------------------------
// sparsity-stats

struct SparsityOptions {
    std::optional<fs::path> config;
    std::optional<fs::path> flow_dir;
    std::optional<fs::path> synthetic;
};

/// Blur maps and per-layer sparsity plans for a set of flows (taken at feature resolution),
/// with token-retention statistics.
inline json cmd_sparsity_stats(const SparsityOptions& opt) {
    require(opt.flow_dir.has_value() != opt.synthetic.has_value(),
            "sparsity-stats: give exactly one of --flows or --synthetic");
    const ModelConfig cfg = load_config(opt.config);
    const FlowSequence flows =
        opt.flow_dir ? load_flow_dir(*opt.flow_dir) : synthetic_flows(synthetic_from_json(read_json(*opt.synthetic)));
    const BlurMapSequence maps = estimate_blur_maps(flows);
    const WindowGeometry g = geometry_for_features(cfg, flows.frames(), flows.height, flows.width);
    const std::size_t Hp = g.grid_h * cfg.stride, Wp = g.grid_w * cfg.stride;
    std::vector<Tensor> padded;
    for (std::size_t t = 0; t < flows.frames(); ++t) padded.push_back(ops::reflect_pad_to(maps.blur.frame(t), Hp, Wp));
    const Tensor levels = window_levels(downsample_blur(stack(padded), cfg.patch, cfg.stride), g.window_h, g.window_w);

    json layers = json::array();
    const double all_queries = static_cast<double>(g.frames * g.grid_h * g.grid_w);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const SparsityPlan plan = cfg.mode == AttentionMode::dense
                                      ? dense_plan(g.frames, g.windows_y(), g.windows_x())
                                      : build_plan(levels, cfg.theta, cfg.k_q, cfg.k_kv, cfg.layer_parity(l));
        json p = to_json(plan);
        p["layer"] = l;
        const std::size_t sparse_q = plan.sparse_query_tokens(g.window_tokens());
        p["selected_windows"] = plan.selected.size();
        p["sparse_query_tokens"] = sparse_q;
        p["selected_query_fraction"] =
            plan.selected.empty() ? 0.0
                                  : static_cast<double>(sparse_q) /
                                        static_cast<double>(plan.selected.size() * g.frames * g.window_tokens());
        p["retained_query_fraction"] =
            (static_cast<double>(sparse_q) +
             static_cast<double>((g.window_count() - plan.selected.size()) * g.frames * g.window_tokens())) /
            all_queries;
        layers.push_back(p);
    }
    return {{"tool_version", kToolVersion},
            {"config", to_json(cfg)},
            {"geometry",
             {{"frames", g.frames},
              {"grid", {g.grid_h, g.grid_w}},
              {"window", {g.window_h, g.window_w}},
              {"windows", {g.windows_y(), g.windows_x()}}}},
            {"layers", layers}};
}

}  // namespace bsst::cli
