#pragma once

// Structured records: weight snapshots (raw little-endian float32 + JSON manifest), sparsity
// plans as JSON, and FLOPs reports as CSV.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsst/bsst.hpp"
#include "bsst/config.hpp"
#include "bsst/flops.hpp"
#include "bsst/io.hpp"
#include "bsst/pipeline.hpp"

namespace bsst {

using nlohmann::json;

/// Visits every tensor of the model with a stable dotted name.
template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, Fn&& fn) {
    fn("encoder.conv1.weight", w.enc1_weight);
    fn("encoder.conv1.bias", w.enc1_bias);
    fn("encoder.conv2.weight", w.enc2_weight);
    fn("encoder.conv2.bias", w.enc2_bias);
    for (std::size_t j = 0; j < w.branches.size(); ++j) {
        auto& b = w.branches[j];
        const std::string p = "bbfp.branch" + std::to_string(j) + ".";
        fn(p + "offset.weight", b.offset_weight);
        fn(p + "offset.bias", b.offset_bias);
        fn(p + "dcn.weight", b.dcn_weight);
        fn(p + "fusion.weight", b.fusion_weight);
        fn(p + "fusion.bias", b.fusion_bias);
    }
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& L = w.layers[l];
        const std::string p = "bsst.layer" + std::to_string(l) + ".";
        fn(p + "norm1.gamma", L.norm1_gamma);
        fn(p + "norm1.beta", L.norm1_beta);
        fn(p + "q.weight", L.q_weight);
        fn(p + "q.bias", L.q_bias);
        fn(p + "k.weight", L.k_weight);
        fn(p + "k.bias", L.k_bias);
        fn(p + "v.weight", L.v_weight);
        fn(p + "v.bias", L.v_bias);
        fn(p + "pool.kernel", L.pool_kernel);
        fn(p + "global_k.weight", L.global_k_weight);
        fn(p + "global_k.bias", L.global_k_bias);
        fn(p + "global_v.weight", L.global_v_weight);
        fn(p + "global_v.bias", L.global_v_bias);
        fn(p + "out.weight", L.out_weight);
        fn(p + "out.bias", L.out_bias);
        fn(p + "norm2.gamma", L.norm2_gamma);
        fn(p + "norm2.beta", L.norm2_beta);
        fn(p + "ffn1.weight", L.ffn1_weight);
        fn(p + "ffn1.bias", L.ffn1_bias);
        fn(p + "ffn2.weight", L.ffn2_weight);
        fn(p + "ffn2.bias", L.ffn2_bias);
    }
    fn("decoder.conv1.weight", w.dec1_weight);
    fn("decoder.conv1.bias", w.dec1_bias);
    fn("decoder.conv2.weight", w.dec2_weight);
    fn("decoder.conv2.bias", w.dec2_bias);
}

/// Writes `<stem>.bin` (concatenated float32 LE) and `<stem>.json` (shape manifest + config).
inline void save_weights(const std::filesystem::path& stem, const ModelWeights& w, const ModelConfig& cfg) {
    json tensors = json::array();
    std::vector<char> blob;
    for_each_tensor(w, [&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
        const auto* p = reinterpret_cast<const char*>(t.data());
        blob.insert(blob.end(), p, p + t.size() * sizeof(float));
    });
    const std::filesystem::path bin = stem.string() + ".bin";
    json manifest = {{"format", "bsst-weights"},
                     {"version", 1},
                     {"dtype", "float32"},
                     {"byte_order", "little"},
                     {"binary", bin.filename().string()},
                     {"heads", cfg.heads},
                     {"config", to_json(cfg)},
                     {"tensors", tensors}};
    io::write_atomic(bin, blob.data(), blob.size());
    io::write_text(stem.string() + ".json", manifest.dump(2) + "\n");
}

struct LoadedWeights {
    ModelConfig config;
    ModelWeights weights;
};

inline LoadedWeights load_weights(const std::filesystem::path& manifest_path) {
    const auto text = io::read_bytes(manifest_path);
    const json manifest = json::parse(text.begin(), text.end());
    if (manifest.value("format", "") != "bsst-weights" || manifest.value("dtype", "") != "float32")
        throw io::IoError(manifest_path.string() + ": not a float32 bsst weight manifest");
    LoadedWeights out;
    out.config = config_from_json(manifest.at("config"));
    out.weights = ModelWeights::random(out.config);
    const auto blob = io::read_bytes(manifest_path.parent_path() / manifest.at("binary").get<std::string>());
    std::map<std::string, json> entries;
    for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    for_each_tensor(out.weights, [&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw io::IoError(manifest_path.string() + ": missing tensor " + name);
        const Shape shape = it->second.at("shape").get<Shape>();
        if (shape != t.shape())
            throw io::IoError(manifest_path.string() + ": tensor " + name + " has shape " + shape_str(shape) +
                              ", expected " + shape_str(t.shape()));
        const std::size_t offset = it->second.at("offset").get<std::size_t>();
        if (offset + t.size() * sizeof(float) > blob.size())
            throw io::IoError(manifest_path.string() + ": tensor " + name + " runs past the end of the binary");
        std::memcpy(t.data(), blob.data() + offset, t.size() * sizeof(float));
    });
    out.weights.validate(out.config);
    return out;
}

inline json to_json(const SparsityPlan& plan) {
    json mask = json::array();
    for (std::size_t i = 0; i < plan.windows_y; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < plan.windows_x; ++j) row.push_back(plan.spatial_mask(i, j) != 0.0f ? 1 : 0);
        mask.push_back(row);
    }
    json selected = json::array();
    for (const auto& s : plan.selected)
        selected.push_back({{"window", {s.row, s.col}}, {"query_frames", s.query_frames}, {"kv_frames", s.kv_frames}});
    return {{"mode", to_string(plan.mode)},
            {"parity", to_string(plan.parity)},
            {"theta", plan.theta},
            {"k_q", plan.k_q},
            {"k_kv", plan.k_kv},
            {"frames", plan.frames},
            {"windows", {plan.windows_y, plan.windows_x}},
            {"spatial_mask", mask},
            {"selected", selected}};
}

inline SparsityPlan plan_from_json(const json& j) {
    SparsityPlan plan;
    plan.mode = parse_mode(j.at("mode").get<std::string>());
    const std::string parity = j.at("parity").get<std::string>();
    plan.parity = parity == "odd" ? Parity::odd : parity == "even" ? Parity::even : Parity::off;
    plan.theta = j.at("theta").get<float>();
    plan.k_q = j.at("k_q").get<std::size_t>();
    plan.k_kv = j.at("k_kv").get<std::size_t>();
    plan.frames = j.at("frames").get<std::size_t>();
    plan.windows_y = j.at("windows").at(0).get<std::size_t>();
    plan.windows_x = j.at("windows").at(1).get<std::size_t>();
    plan.spatial_mask = Tensor({plan.windows_y, plan.windows_x});
    for (std::size_t i = 0; i < plan.windows_y; ++i)
        for (std::size_t jj = 0; jj < plan.windows_x; ++jj)
            plan.spatial_mask(i, jj) = j.at("spatial_mask").at(i).at(jj).get<float>();
    for (const auto& s : j.at("selected"))
        plan.selected.push_back({s.at("window").at(0).get<std::size_t>(), s.at("window").at(1).get<std::size_t>(),
                                 s.at("query_frames").get<std::vector<std::size_t>>(),
                                 s.at("kv_frames").get<std::vector<std::size_t>>()});
    return plan;
}

inline constexpr const char* kFlopsCsvHeader = "T,mode,stage,macs\n";

/// One CSV row per stage, in stage order.
inline std::string flops_csv_rows(const FlopsReport& r, std::size_t first_stage = 0,
                                  std::size_t last_stage = kStageCount) {
    std::ostringstream os;
    for (std::size_t i = first_stage; i < last_stage; ++i)
        os << r.frames << ',' << to_string(r.mode) << ',' << stage_name(static_cast<Stage>(i)) << ',' << r.macs[i]
           << '\n';
    return os.str();
}

}  // namespace bsst
