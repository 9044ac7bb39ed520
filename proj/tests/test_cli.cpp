#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bsst/commands.hpp"

namespace fs = std::filesystem;
namespace cli = bsst::cli;
using bsst::Tensor;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("bsst_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write_json(const std::string& name, const json& j) {
        const fs::path p = dir_ / name;
        std::ofstream(p) << j.dump();
        return p;
    }

    // Synthesizes a clip into dir_/clip and returns that directory.
    fs::path clip(const json& spec) {
        cli::cmd_synth({write_json("spec.json", spec), dir_ / "clip"});
        return dir_ / "clip";
    }

    fs::path small_config() {
        return write_json("config.json", {{"channels", 2}, {"layers", 2}, {"heads", 2}, {"k_q", 4}, {"k_kv", 4}});
    }

    fs::path dir_;
};

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const fs::path& p) {
    const auto b = bsst::io::read_bytes(p);
    return {b.begin(), b.end()};
}

const json kBox = {{"type", "moving_box"}, {"T", 8},         {"H", 64},
                   {"W", 64},              {"box", {8, 20, 16, 12}}, {"velocity", {4, 1}}};

std::map<std::string, std::uint64_t> csv_macs(const std::string& csv) {
    std::map<std::string, std::uint64_t> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto last = line.rfind(',');
        out[line.substr(0, last)] = std::stoull(line.substr(last + 1));
    }
    return out;
}

struct Proc {
    int code;
    std::string err;
};

Proc run_cli(const std::string& args, const fs::path& err_file) {
    const std::string cmd = std::string(BSST_CLI_PATH) + " " + args + " >/dev/null 2>" + err_file.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err_file)};
}

}  // namespace

TEST_F(CliTest, BlurmapZeroFlowGivesBlackFrames) {
    const auto spec = write_json("zero.json", {{"type", "constant"}, {"u", 0}, {"v", 0}, {"T", 4}, {"H", 12}, {"W", 10}});
    cli::cmd_blurmap({std::nullopt, spec, dir_ / "out"});
    for (std::size_t t = 0; t < 4; ++t) {
        const Tensor img = bsst::io::read_pnm(dir_ / "out" / cli::indexed("blur", t, ".pgm"));
        EXPECT_EQ(img, Tensor({12, 10}));
    }
    EXPECT_FALSE(fs::exists(dir_ / "out" / "blur_0004.pgm"));
    const json summary = cli::read_json(dir_ / "out" / "blurmap.json");
    EXPECT_TRUE(summary["degenerate"].get<bool>());
    EXPECT_EQ(summary["frames"].size(), 4u);
}

TEST_F(CliTest, BlurmapMovingBoxMatchesModuleAndPeaksInBox) {
    json spec = kBox;
    spec["T"] = 5;
    const auto maps = cli::cmd_blurmap({std::nullopt, write_json("box.json", spec), dir_ / "out"});
    const auto s = bsst::synthetic_from_json(spec);
    const auto want = bsst::estimate_blur_maps(bsst::synthetic_flows(s));
    EXPECT_EQ(maps.blur, want.blur);
    for (std::size_t t = 0; t < 5; ++t) {
        const Tensor img = bsst::io::read_pnm(dir_ / "out" / cli::indexed("blur", t, ".pgm"));
        for (std::size_t i = 0; i < img.size(); ++i)
            EXPECT_EQ(std::lround(img.data()[i] * 255.0f), std::lround(want.blur.slab(t)[i] * 255.0f));
        const auto it = std::max_element(img.values().begin(), img.values().end());
        const auto q = static_cast<std::size_t>(it - img.values().begin());
        float x0, y0, x1, y1;
        s.box_at(t, 1.0f, x0, y0, x1, y1);
        const float x = static_cast<float>(q % 64) + 0.5f, y = static_cast<float>(q / 64) + 0.5f;
        EXPECT_TRUE(x >= x0 && x < x1 && y >= y0 && y < y1) << "t=" << t << " argmax " << x << "," << y;
    }
    const json summary = cli::read_json(dir_ / "out" / "blurmap.json");
    EXPECT_GT(summary["frames"][2]["raw_max"].get<double>(), 0.0);
}

TEST_F(CliTest, BlurmapMismatchedFlowShapesListBoth) {
    fs::create_directories(dir_ / "flows");
    bsst::io::write_flo(dir_ / "flows" / "forward_0000.flo", Tensor({4, 6, 2}));
    bsst::io::write_flo(dir_ / "flows" / "backward_0000.flo", Tensor({4, 6, 2}));
    bsst::io::write_flo(dir_ / "flows" / "forward_0001.flo", Tensor({5, 6, 2}));
    bsst::io::write_flo(dir_ / "flows" / "backward_0001.flo", Tensor({4, 6, 2}));
    const std::string msg = error_of([&] { cli::cmd_blurmap({dir_ / "flows", std::nullopt, dir_ / "out"}); });
    EXPECT_NE(msg.find("[4,6,2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[5,6,2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("forward_0001.flo"), std::string::npos) << msg;
}

TEST_F(CliTest, RunWritesValidatedOutputsAndRerunsBitExactly) {
    const fs::path in = clip(kBox);
    cli::RunOptions opt;
    opt.config = small_config();
    opt.frames_dir = in;
    opt.flow_dir = in;
    opt.out = dir_ / "run1";
    opt.instrumented = true;
    const auto summary = cli::cmd_run(opt);
    for (std::size_t t = 0; t < 8; ++t) EXPECT_TRUE(fs::exists(opt.out / cli::indexed("frame", t, ".ppm")));
    EXPECT_FALSE(fs::exists(opt.out / "frame_0008.ppm"));
    EXPECT_NO_THROW(cli::validate_manifest(summary.manifest));
    const json m = cli::read_json(summary.manifest);
    EXPECT_EQ(m["frames"].get<int>(), 8);
    EXPECT_EQ(m["config"]["channels"].get<int>(), 2);
    EXPECT_EQ(m["timings"].size(), 5u);

    cli::RunOptions again;
    again.manifest = summary.manifest;
    again.out = dir_ / "run2";
    cli::cmd_run(again);
    for (const auto& o : m["outputs"]) {
        const std::string f = o["file"].get<std::string>();
        EXPECT_EQ(slurp(dir_ / "run1" / f), slurp(dir_ / "run2" / f)) << f;
    }

    // Tampering with an output is caught.
    std::ofstream(dir_ / "run1" / "frame_0003.ppm", std::ios::app) << 'x';
    EXPECT_THROW(cli::validate_manifest(summary.manifest), bsst::io::IoError);
}

TEST_F(CliTest, RunReportsMissingAndMiscountedFlows) {
    json spec = kBox;
    spec["T"] = 4;
    const fs::path in = clip(spec);
    cli::RunOptions opt;
    opt.config = small_config();
    opt.frames_dir = in;
    opt.flow_dir = in;
    opt.out = dir_ / "out";

    fs::rename(in / "backward_0001.flo", dir_ / "moved.flo");
    std::string msg = error_of([&] { cli::cmd_run(opt); });
    EXPECT_NE(msg.find((in / "backward_0001.flo").string()), std::string::npos) << msg;

    fs::rename(dir_ / "moved.flo", in / "backward_0001.flo");
    bsst::io::write_flo(in / "forward_0003.flo", Tensor({16, 16, 2}));
    msg = error_of([&] { cli::cmd_run(opt); });
    EXPECT_NE(msg.find("expected 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("found 4 forward"), std::string::npos) << msg;
}

TEST_F(CliTest, FlopsSweepRowsAndScaling) {
    const std::string csv = cli::cmd_flops({write_json("c.json", {{"k_q", 6}, {"k_kv", 6}})});
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 4 * 9);
    EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), bsst::kFlopsCsvHeader);
    const auto macs = csv_macs(csv);
    EXPECT_EQ(macs.size(), 72u);
    for (int T : {24, 36, 48})
        EXPECT_EQ(macs.at(std::to_string(T) + ",sparse,qk_logits"), macs.at("12,sparse,qk_logits"));
    EXPECT_GE(static_cast<double>(macs.at("48,dense,qk_logits")) / static_cast<double>(macs.at("12,dense,qk_logits")),
              15.0);
}

TEST_F(CliTest, FlopsInstrumentedRowsAgree) {
    cli::FlopsOptions opt;
    opt.config = write_json("c.json", {{"channels", 2}, {"layers", 2}, {"heads", 2}, {"k_q", 2}, {"k_kv", 2}});
    opt.frames = {12};
    opt.instrumented = true;
    const auto macs = csv_macs(cli::cmd_flops(opt));
    std::size_t checked = 0;
    for (const auto& [key, v] : macs) {
        const auto pos = key.find(":analytic");
        if (pos == std::string::npos) continue;
        EXPECT_EQ(macs.at(key.substr(0, pos) + ":instrumented" + key.substr(pos + 9)), v) << key;
        ++checked;
    }
    EXPECT_EQ(checked, 2u * 2u * 9u);
}

TEST_F(CliTest, SparsityStatsRetainHalfOfBlurryQueries) {
    const auto cfg = write_json("c.json", {{"k_q", 4}, {"k_kv", 4}, {"theta", 0.3}, {"layers", 2}});
    const auto spec = write_json("s.json", {{"type", "constant"}, {"u", 2}, {"v", 1}, {"T", 8}, {"H", 32}, {"W", 32}});
    const json stats = cli::cmd_sparsity_stats({cfg, std::nullopt, spec});
    ASSERT_EQ(stats["layers"].size(), 2u);
    for (const auto& layer : stats["layers"]) {
        EXPECT_EQ(layer["selected_windows"].get<int>(), 16);  // 32x32 features: 16x16 tokens, 4x4 windows
        EXPECT_DOUBLE_EQ(layer["selected_query_fraction"].get<double>(), 0.5);
    }
}

TEST_F(CliTest, BinaryExitCodesAndSingleLineErrors) {
    Proc p = run_cli("run --frames " + (dir_ / "nope").string() + " --flows " + (dir_ / "nope").string() +
                         " --out " + (dir_ / "o").string(),
                     dir_ / "err.txt");
    EXPECT_NE(p.code, 0);
    EXPECT_EQ(p.err.rfind("error: run: ", 0), 0u) << p.err;
    EXPECT_EQ(std::count(p.err.begin(), p.err.end(), '\n'), 1) << p.err;

    p = run_cli("flops -T 4,8 --modes sparse --height 64 --width 64 --out " + (dir_ / "f.csv").string(),
                dir_ / "err2.txt");
    EXPECT_EQ(p.code, 0) << p.err;
    const std::string csv = slurp(dir_ / "f.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 9);

    p = run_cli("flops --modes sideways", dir_ / "err3.txt");
    EXPECT_NE(p.code, 0);
    EXPECT_NE(p.err.find("unknown attention mode"), std::string::npos) << p.err;
}
