#include "pmrn/data.hpp"
#include "pmrn/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace pmrn {
namespace {

namespace fs = std::filesystem;

Image random_image(int w, int h, std::uint64_t seed, int channels = 3) {
    Rng rng(seed);
    Image img(w, h, channels);
    for (auto& v : img.data) v = static_cast<float>(rng.below(256)) / 255.0f;
    return img;
}

double max_diff(const Image& a, const Image& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - b.data[i]));
    return m;
}

TEST(ImageTest, QuantizationRoundsAndClamps) {
    EXPECT_EQ(to_u8(0.0f), 0);
    EXPECT_EQ(to_u8(1.0f), 255);
    EXPECT_EQ(to_u8(-0.3f), 0);
    EXPECT_EQ(to_u8(1.7f), 255);
    EXPECT_EQ(to_u8(0.5f), 128);
    EXPECT_EQ(to_u8(100.4f / 255.0f), 100);
}

TEST(BicubicTest, ConstantStaysConstant) {
    const Image img(17, 11, 3, 0.37f);
    for (auto [w, h] : {std::pair{8, 5}, {34, 22}, {17, 11}, {3, 40}}) {
        const auto out = bicubic_resize(img, w, h);
        for (float v : out.data) ASSERT_NEAR(v, 0.37f, 1e-6);
    }
    const Image dot(1, 1, 3, 0.8f);
    for (float v : bicubic_resize(dot, 9, 6).data) ASSERT_NEAR(v, 0.8f, 1e-6);
}

TEST(BicubicTest, SameSizeIsExactCopy) {
    const auto img = random_image(13, 9, 1);
    EXPECT_EQ(bicubic_resize(img, 13, 9), img);
}

TEST(BicubicTest, DownscaledRampStaysLinear) {
    Image ramp(96, 48, 1);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 96; ++x) ramp.at(0, y, x) = 0.01f * x + 0.005f * y;
    for (int r : {2, 3, 4}) {
        const int w = 96 / r, h = 48 / r;
        const auto out = bicubic_resize(ramp, w, h);
        for (int y = 3; y < h - 3; ++y)
            for (int x = 3; x < w - 3; ++x) {
                const double cx = (x + 0.5) * r - 0.5, cy = (y + 0.5) * r - 0.5;
                ASSERT_NEAR(out.at(0, y, x), 0.01 * cx + 0.005 * cy, 1e-3) << r;
            }
    }
}

TEST(BicubicTest, KernelWeights) {
    EXPECT_DOUBLE_EQ(cubic_kernel(0.0), 1.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(1.0), 0.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(2.0), 0.0);
    EXPECT_DOUBLE_EQ(cubic_kernel(0.5), 0.5625);
    EXPECT_DOUBLE_EQ(cubic_kernel(1.5), -0.0625);
}

TEST(DegradeTest, BicubicShape) {
    DegradationSpec spec;
    spec.scale = 3;
    const auto lr = degrade(random_image(48, 36, 2), spec);
    EXPECT_EQ(lr.width, 16);
    EXPECT_EQ(lr.height, 12);
    EXPECT_THROW(degrade(random_image(49, 36, 2), spec), std::invalid_argument);
}

TEST(DegradeTest, BlurDownNormalizedAndConstantPreserving) {
    const auto k = gaussian_kernel(7, 1.6);
    ASSERT_EQ(k.size(), 49u);
    double sum = 0;
    for (double v : k) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(k[0], k[48], 1e-15);

    DegradationSpec spec{DegradationKind::blur_down, 3};
    const Image flat(30, 21, 3, 0.61f);
    const auto lr = degrade(flat, spec);
    EXPECT_EQ(lr.width, 10);
    EXPECT_EQ(lr.height, 7);
    for (float v : lr.data) ASSERT_NEAR(v, 0.61f, 1e-6);
    spec.scale = 2;
    EXPECT_THROW(degrade(Image(30, 20), spec), std::invalid_argument);
    EXPECT_EQ(parse_degradation("BD"), DegradationKind::blur_down);
    EXPECT_THROW(parse_degradation("JPEG"), std::invalid_argument);
}

TEST(DegradeTest, BlurDownSubsamplesAtOffsetZero) {
    // A unit impulse at (3, 3) lands on LR pixel (1, 1) with the kernel's centre weight.
    Image img(12, 12, 3, 0.0f);
    for (int c = 0; c < 3; ++c) img.at(c, 3, 3) = 1.0f;
    const auto lr = degrade(img, DegradationSpec{DegradationKind::blur_down, 3});
    EXPECT_NEAR(lr.at(0, 1, 1), gaussian_kernel(7, 1.6)[24], 1e-6);
    EXPECT_EQ(reflect_index(-1, 5), 0);
    EXPECT_EQ(reflect_index(5, 5), 4);
}

TEST(ColorTest, LumaAnchors) {
    Image img(3, 1, 3, 0.0f);
    for (int c = 0; c < 3; ++c) img.at(c, 0, 0) = 1.0f;
    img.at(1, 0, 2) = 1.0f;
    const auto y = rgb_to_y(img);
    EXPECT_NEAR(y.at(0, 0), 235.0, 1e-9);
    EXPECT_NEAR(y.at(0, 1), 16.0, 1e-12);
    EXPECT_NEAR(y.at(0, 2), 144.553, 1e-9);
}

TEST(MetricsTest, UniformErrorOfOneLevel) {
    Plane a(20, 20, 100.0), b(20, 20, 101.0);
    EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-12);
    EXPECT_NEAR(psnr(a, b), 48.1308, 1e-3);
    EXPECT_NEAR(psnr(a, b, 4), 48.1308, 1e-3);
}

TEST(MetricsTest, IdenticalImages) {
    const auto img = random_image(24, 20, 3);
    EXPECT_EQ(psnr_y(img, img, 2), kPsnrIdentical);
    EXPECT_TRUE(std::isinf(psnr_y(img, img, 2)));
    EXPECT_DOUBLE_EQ(ssim_y(img, img, 2), 1.0);
}

TEST(MetricsTest, SymmetryAndMonotonicity) {
    const auto a = rgb_to_y(random_image(30, 30, 4));
    auto b = a;
    auto c = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        b.data[i] += (i % 3 == 0) ? 2.0 : 0.0;
        c.data[i] += (i % 3 == 0) ? 4.0 : 0.0;
    }
    EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
    EXPECT_GT(psnr(a, b), psnr(a, c));
    EXPECT_NEAR(ssim(a, c), ssim(c, a), 1e-12);
    auto a2 = a, b2 = b;
    for (auto& v : a2.data) v += 5;
    for (auto& v : b2.data) v += 5;
    EXPECT_NEAR(psnr(a, b), psnr(a2, b2), 1e-9);
}

TEST(MetricsTest, AntiCorrelatedSsimIsNegative) {
    Plane a(16, 16), b(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const double s = ((x + y) % 2 == 0) ? 60.0 : -60.0;
            a.at(y, x) = 128 + s;
            b.at(y, x) = 128 - s;
        }
    EXPECT_LT(ssim(a, b), 0.0);
}

TEST(MetricsTest, Rejections) {
    EXPECT_THROW(psnr(Plane(4, 4), Plane(4, 5)), std::invalid_argument);
    EXPECT_THROW(ssim(Plane(12, 12), Plane(12, 12), 1), std::invalid_argument);
    EXPECT_THROW(psnr(Plane(4, 4), Plane(4, 4), 2), std::invalid_argument);
}

TEST(MetricsTest, BicubicBaselineIsFinite) {
    const auto hr = synthetic_image(96, 72, 5);
    const DegradationSpec spec{DegradationKind::bicubic, 2};
    const auto up = bicubic_resize(degrade(hr, spec), 96, 72);
    const double p = psnr_y(up, hr, 2);
    EXPECT_TRUE(std::isfinite(p));
    EXPECT_GT(p, 0.0);
}

TEST(PatchTest, DeterministicAlignedAndSized) {
    const auto hr = synthetic_image(240, 200, 6);
    const DegradationSpec spec{DegradationKind::bicubic, 4};
    const auto a = sample_patches(hr, spec, 48, 5, 99);
    const auto b = sample_patches(hr, spec, 48, 5, 99);
    ASSERT_EQ(a.size(), 5u);
    const auto lr_full = degrade(crop_to_multiple(hr, 4), spec);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].lr, b[i].lr);
        EXPECT_EQ(a[i].hr_x(), 4 * a[i].lr_x);
        EXPECT_EQ(a[i].hr.width, 192);
        EXPECT_EQ(a[i].hr.height, 192);
        EXPECT_EQ(a[i].lr, crop(lr_full, a[i].lr_x, a[i].lr_y, 48, 48));
        EXPECT_EQ(a[i].hr, crop(hr, a[i].hr_x(), a[i].hr_y(), 192, 192));
    }
    EXPECT_THROW(sample_patches(synthetic_image(100, 100, 6), spec, 48, 1, 1), std::invalid_argument);
}

TEST(PatchTest, AugmentationKeepsPairsAligned) {
    const auto hr = synthetic_image(120, 120, 7);
    const DegradationSpec spec{DegradationKind::bicubic, 2};
    const auto pairs = sample_patches(hr, spec, 24, 16, 11);
    std::set<int> seen;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto aug = augment(pairs[i], 1000 + i);
        const auto redegraded = degrade(aug.hr, spec);
        // Interior only: the patch borders see different context.
        const int m = 3;
        double worst = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = m; y < 24 - m; ++y)
                for (int x = m; x < 24 - m; ++x)
                    worst = std::max(worst, std::abs(double(redegraded.at(c, y, x)) - aug.lr.at(c, y, x)));
        EXPECT_LT(worst, 1e-2) << "pair " << i;
        for (int t = 0; t < 8; ++t)
            if (aug.lr == dihedral(pairs[i].lr, t)) seen.insert(t);
    }
    EXPECT_GT(seen.size(), 3u);
}

TEST(PatchTest, DihedralRoundTrip) {
    const auto img = random_image(7, 5, 8);
    for (int t = 0; t < 8; ++t) {
        const auto d = dihedral(img, t);
        EXPECT_EQ(from_tensor(dihedral_inverse(to_tensor(d), t)), img) << t;
    }
}

class ImageIoTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("pmrn_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

TEST_F(ImageIoTest, PngAndPpmRoundTrip) {
    const auto rgb = random_image(13, 7, 9);
    const auto gray = random_image(5, 9, 10, 1);
    for (const char* ext : {".png", ".ppm"}) {
        save_image((dir_ / (std::string("rgb") + ext)).string(), rgb);
        EXPECT_EQ(load_image((dir_ / (std::string("rgb") + ext)).string()), rgb) << ext;
    }
    save_image((dir_ / "g.png").string(), gray);
    EXPECT_EQ(load_image((dir_ / "g.png").string()), gray);
    save_image((dir_ / "g.pgm").string(), gray);
    EXPECT_EQ(load_image((dir_ / "g.pgm").string()), gray);
    const auto listed = list_images(dir_);
    EXPECT_EQ(listed.size(), 4u);
    EXPECT_TRUE(std::is_sorted(listed.begin(), listed.end()));
}

TEST_F(ImageIoTest, RejectsMissingAndUnknown) {
    EXPECT_THROW(load_image((dir_ / "nope.png").string()), std::runtime_error);
    EXPECT_THROW(save_image((dir_ / "x.bmp").string(), Image(2, 2)), std::runtime_error);
}

TEST(SyntheticTest, DeterministicAndQuantized) {
    const auto a = synthetic_image(40, 30, 3);
    EXPECT_EQ(a, synthetic_image(40, 30, 3));
    EXPECT_FALSE(a == synthetic_image(40, 30, 4));
    EXPECT_EQ(quantize(a), a);
}

}  // namespace
}  // namespace pmrn
