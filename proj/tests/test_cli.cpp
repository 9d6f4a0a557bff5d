#include "pmrn/pmrn.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pmrn {
namespace {

namespace fs = std::filesystem;

struct Run {
    int code = -1;
    std::string out;
};

Run pmrn_cli(const std::string& args) {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() / ("pmrn_cli_out_" + std::to_string(::getpid()) + "_" +
                                                      std::to_string(counter++));
    const std::string cmd = std::string(PMRN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    fs::remove(log);
    return r;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("pmrn_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    /// A tiny trained-from-init weight file (c=4, K=1, S=5, r=2).
    std::string tiny_weights() {
        PmrnConfig c;
        c.channels = 4;
        c.blocks = 1;
        c.largest_scale = 5;
        c.upscale = 2;
        const PmrnModel model(c);
        auto params = model.make_params<float>();
        init_params(params, InitSpec{.seed = 3});
        save_weights(path("w.pmrn"), c, params);
        return path("w.pmrn");
    }

    fs::path dir_;
};

TEST_F(CliTest, AnalyzeExpectMatchesEachScale) {
    EXPECT_EQ(pmrn_cli("analyze --scale 2 --expect params=3577548").code, 0);
    EXPECT_EQ(pmrn_cli("analyze --scale 3 --expect params=3586203").code, 0);
    EXPECT_EQ(pmrn_cli("analyze --scale 4 --expect params=3598320").code, 0);
    EXPECT_EQ(pmrn_cli("analyze --scale 4 --variant large-kernels --expect params=6020080").code, 0);
}

TEST_F(CliTest, AnalyzeExpectMismatchIsValidationError) {
    const auto r = pmrn_cli("analyze --scale 4 --expect params=1");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("3598320"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(pmrn_cli("analyze --no-such-flag").code, 1);
    EXPECT_EQ(pmrn_cli("").code, 1);
    EXPECT_EQ(pmrn_cli("sr --input x.png").code, 1);
}

TEST_F(CliTest, InvalidValuesExitTwo) {
    EXPECT_EQ(pmrn_cli("analyze --largest-scale 4").code, 2);
    EXPECT_EQ(pmrn_cli("analyze --scale 5").code, 2);
    EXPECT_EQ(pmrn_cli("analyze --resolution 640by480").code, 2);
}

TEST_F(CliTest, MissingFileExitsThree) {
    EXPECT_EQ(pmrn_cli("sr -w " + path("absent.pmrn") + " -i " + path("a.png") + " -o " + path("b.png")).code, 3);
}

TEST_F(CliTest, AnalyzeWritesJsonAndSidecar) {
    ASSERT_EQ(pmrn_cli("analyze --scale 2 --resolution 64x64 --json " + path("r.json")).code, 0);
    std::ifstream in(path("r.json"));
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("params").get<std::int64_t>(), 3577548);
    ASSERT_TRUE(fs::exists(path("r.json.config.json")));
    std::ifstream side(path("r.json.config.json"));
    const auto cfg = nlohmann::json::parse(side);
    EXPECT_EQ(cfg.at("resolution"), "64x64");
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
    std::ofstream(path("c.json")) << R"({"model": {"upscale": 3, "blocks": 2}})";
    const auto r = pmrn_cli("analyze --config " + path("c.json") + " --blocks 1 --resolution 30x30");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("\"upscale\":3"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("\"blocks\":1"), std::string::npos) << r.out;
}

TEST_F(CliTest, SuperResolveWritesScaledImage) {
    const auto w = tiny_weights();
    save_image(path("lr.png"), synthetic_image(20, 14, 1));
    const auto r = pmrn_cli("sr -w " + w + " -i " + path("lr.png") + " -o " + path("sr.png"));
    ASSERT_EQ(r.code, 0) << r.out;
    const Image sr = load_image(path("sr.png"));
    EXPECT_EQ(sr.width, 40);
    EXPECT_EQ(sr.height, 28);
    EXPECT_TRUE(fs::exists(path("sr.png.config.json")));
}

TEST_F(CliTest, SuperResolveDirectoryAndGrayscale) {
    const auto w = tiny_weights();
    fs::create_directories(path("in"));
    save_image(path("in/a.png"), synthetic_image(12, 12, 1));
    Image gray(10, 8, 1);
    for (std::size_t i = 0; i < gray.data.size(); ++i) gray.data[i] = static_cast<float>(i % 7) / 7.0f;
    save_image(path("in/b.pgm"), quantize(gray));
    const auto r = pmrn_cli("sr --ensemble -w " + w + " -i " + path("in") + " -o " + path("out"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(load_image(path("out/a.png")).width, 24);
    const Image b = load_image(path("out/b.png"));
    EXPECT_EQ(b.width, 20);
    EXPECT_EQ(b.channels, 3);
    EXPECT_TRUE(fs::exists(path("out/config.json")));
}

TEST_F(CliTest, SuperResolveRejectsContradictingModelFlags) {
    const auto w = tiny_weights();
    save_image(path("lr.png"), synthetic_image(12, 12, 1));
    const auto r = pmrn_cli("sr -w " + w + " --channels 8 -i " + path("lr.png") + " -o " + path("sr.png"));
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(CliTest, EvalIdentityGivesPerfectScores) {
    fs::create_directories(path("hr"));
    save_image(path("hr/a.png"), synthetic_image(40, 40, 2));
    save_image(path("hr/b.png"), synthetic_image(36, 44, 3));
    const auto r = pmrn_cli("eval --hr " + path("hr") + " --method identity --scale 2 --csv " + path("m.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream in(path("m.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "image,psnr,ssim");
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_NE(line.find(",inf,1.0000"), std::string::npos) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 3);
}

TEST_F(CliTest, EvalBicubicMatchesLibrary) {
    fs::create_directories(path("hr"));
    const Image hr = synthetic_image(48, 48, 4);
    save_image(path("hr/a.png"), hr);
    const auto r = pmrn_cli("eval --hr " + path("hr") + " --method bicubic --scale 2");
    ASSERT_EQ(r.code, 0) << r.out;
    const Image lr = degrade(hr, DegradationSpec{DegradationKind::bicubic, 2});
    const double want = psnr_y(hr, bicubic_upscale(lr, 2), 2);
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "a.png," << want << ",";
    EXPECT_NE(r.out.find(os.str()), std::string::npos) << r.out;
}

TEST_F(CliTest, EvalModelNeedsWeights) {
    fs::create_directories(path("hr"));
    save_image(path("hr/a.png"), synthetic_image(24, 24, 2));
    EXPECT_EQ(pmrn_cli("eval --hr " + path("hr") + " --method model").code, 2);
    EXPECT_EQ(pmrn_cli("eval --hr " + path("hr") + " --method fancy").code, 2);
}

TEST_F(CliTest, TrainThenResume) {
    const std::string common = "train --preset desk --channels 4 --blocks 1 --largest-scale 5 --batch 2 --patch 8 "
                               "--synthetic 2 --synthetic-size 32 --steps-per-unit 1 --seed 7 ";
    ASSERT_EQ(pmrn_cli(common + "--units 2 --out " + path("a")).code, 0);
    for (const char* f : {"checkpoint.pmrn", "weights.pmrn", "history.csv", "config.json"}) {
        EXPECT_TRUE(fs::exists(path("a") + "/" + f)) << f;
    }
    const auto r = pmrn_cli(common + "--units 4 --resume " + path("a/checkpoint.pmrn") + " --out " + path("b"));
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_EQ(pmrn_cli(common + "--units 4 --out " + path("c")).code, 0);
    const auto resumed = load_weights(path("b/weights.pmrn"));
    const auto straight = load_weights(path("c/weights.pmrn"));
    EXPECT_TRUE(resumed.params == straight.params);
}

TEST_F(CliTest, GradcheckPassesAndWritesReport) {
    const auto r = pmrn_cli("gradcheck --coordinates 8 --json " + path("g.json"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("pmrn_forward"), std::string::npos);
    std::ifstream in(path("g.json"));
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("checks").size(), 14u);
}

TEST_F(CliTest, GradcheckImpossibleToleranceFails) {
    EXPECT_EQ(pmrn_cli("gradcheck --skip-ops --coordinates 4 --tolerance 1e-30").code, 2);
}

TEST_F(CliTest, DumpFeaturesWritesMaps) {
    const auto w = tiny_weights();
    save_image(path("lr.png"), synthetic_image(16, 16, 5));
    const auto r = pmrn_cli("dump-features -w " + w + " -i " + path("lr.png") + " -o " + path("maps"));
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"block0_x3.png", "block0_x5.png", "block0_gamma.png", "block0_beta.png", "config.json"}) {
        EXPECT_TRUE(fs::exists(path("maps") + "/" + f)) << f;
    }
    const Image m = load_image(path("maps/block0_x3.png"));
    EXPECT_EQ(m.width, 16);
    EXPECT_EQ(m.channels, 1);
    EXPECT_EQ(pmrn_cli("dump-features -w " + w + " -i " + path("lr.png") + " -o " + path("m2") + " --scale 7").code,
              2);
    EXPECT_EQ(pmrn_cli("dump-features -w " + w + " -i " + path("lr.png") + " -o " + path("m3") + " --block 1").code,
              2);
}

}  // namespace
}  // namespace pmrn
