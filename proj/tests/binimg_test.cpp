#include <png.h>

#include <random>

#include <gtest/gtest.h>

#include "mvae/binimg.hpp"
#include "test_util.hpp"

using namespace mvae;

TEST(BytesToImage, TwoNopsWidthTwo) {
  const Bytes data{0x90, 0x90};
  const auto img = bytes_to_image(data, 2);
  EXPECT_EQ(img.width(), 2u);
  EXPECT_EQ(img.height(), 1u);
  EXPECT_EQ(img.pixels(), (Bytes{144, 144}));
  EXPECT_EQ(image_to_bytes(img), data);
}

TEST(BytesToImage, FinalRowIsZeroPadded) {
  const auto img = bytes_to_image(Bytes{7, 8, 9}, 2);
  EXPECT_EQ(img.width(), 2u);
  EXPECT_EQ(img.height(), 2u);
  EXPECT_EQ(img.pixels(), (Bytes{7, 8, 9, 0}));
  EXPECT_EQ(img.payload_len(), 3u);
  EXPECT_EQ(image_to_bytes(img), (Bytes{7, 8, 9}));
}

TEST(BytesToImage, HeightIsCeilingAtDefaultWidth) {
  for (std::size_t n : {1u, 63u, 64u, 65u, 13824u, 27648u}) {
    const auto img = bytes_to_image(Bytes(n, 1));
    EXPECT_EQ(img.width(), 64u);
    EXPECT_EQ(img.height(), (n + 63) / 64) << n;
  }
  // malimg-sized samples
  EXPECT_EQ(bytes_to_image(Bytes(216 * 64, 3)).height(), 216u);
  EXPECT_EQ(bytes_to_image(Bytes(432 * 64, 3)).height(), 432u);
}

TEST(BytesToImage, RejectsBadArguments) {
  EXPECT_THROW(bytes_to_image(Bytes{1}, 0), InvalidArgument);
  EXPECT_THROW(bytes_to_image(Bytes{}, 64), InvalidArgument);
}

TEST(GrayImage, EnforcesInvariants) {
  EXPECT_THROW(GrayImage(2, 2, Bytes(3), 3), InvalidArgument);
  EXPECT_THROW(GrayImage(4, 2, Bytes(8), 4), InvalidArgument);  // a whole padding row
  EXPECT_THROW(GrayImage(4, 2, Bytes(8), 9), InvalidArgument);
  EXPECT_NO_THROW(GrayImage(4, 2, Bytes(8), 5));
}

TEST(BytesToImage, RoundtripProperty) {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<std::size_t> len(1, 600), width(1, 100);
  for (int t = 0; t < 10000; ++t) {
    Bytes data(len(rng));
    for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
    const std::size_t w = width(rng);
    const auto img = bytes_to_image(data, w);
    ASSERT_EQ(image_to_bytes(img), data);
    ASSERT_EQ(img.height(), (data.size() + w - 1) / w);
    ASSERT_LT(img.size() - img.payload_len(), w);
    for (std::size_t i = data.size(); i < img.size(); ++i) ASSERT_EQ(img.pixels()[i], 0);
    ASSERT_EQ(bytes_to_image(image_to_bytes(img), w), img);
  }
}

TEST(Normalize, Endpoints) {
  const auto n = normalize(bytes_to_image(Bytes{0, 255, 127}, 3));
  EXPECT_FLOAT_EQ(n.values[0], -1.0f);
  EXPECT_FLOAT_EQ(n.values[1], 1.0f);
  EXPECT_NEAR(n.values[2], 127 / 127.5 - 1, 1e-7);
  EXPECT_NEAR(n.values[2], -0.00392, 1e-5);
}

TEST(Normalize, BijectiveOnAllBytes) {
  Bytes all(256);
  for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
  const auto img = bytes_to_image(all, 16);
  const auto n = normalize(img);
  for (float v : n.values) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(denormalize(n), img);
  EXPECT_EQ(denormalize(normalize<double>(img)), img);
}

TEST(Normalize, DenormalizeRoundsAndClamps) {
  EXPECT_EQ(denormalize_value(-2.0), 0);
  EXPECT_EQ(denormalize_value(3.0), 255);
  EXPECT_EQ(denormalize_value(-1.0 + 10.4 / 127.5), 10);
  EXPECT_EQ(denormalize_value(-1.0 + 10.6 / 127.5), 11);
}

TEST(Png, RoundtripKeepsPixelsAndPayload) {
  testutil::TempDir dir;
  std::mt19937_64 rng(7);
  for (std::size_t n : {1u, 100u, 4096u, 5000u}) {
    Bytes data(n);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    const auto img = bytes_to_image(data, 64);
    const auto path = dir / ("img" + std::to_string(n) + ".png");
    write_png(img, path);
    EXPECT_TRUE(std::filesystem::exists(payload_sidecar_path(path)));
    const auto back = read_png(path);
    EXPECT_EQ(back, img);
    EXPECT_EQ(image_to_bytes(back), data);
  }
}

TEST(Png, MalimgShape) {
  testutil::TempDir dir;
  const auto img = bytes_to_image(Bytes(216 * 64, 0x41));
  write_png(img, dir / "sample.png");
  std::filesystem::remove(payload_sidecar_path(dir / "sample.png"));
  const auto back = read_png(dir / "sample.png");
  EXPECT_EQ(back.height(), 216u);
  EXPECT_EQ(back.width(), 64u);
  EXPECT_EQ(back.payload_len(), 216u * 64u);
}

namespace {

void write_with_format(const std::filesystem::path& path, std::uint32_t format, std::size_t bytes_per_px) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = 4;
  image.height = 4;
  image.format = format;
  std::vector<std::uint8_t> buf(16 * bytes_per_px, 0x55);
  ASSERT_TRUE(png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr));
}

}  // namespace

TEST(Png, SixteenBitIsUnsupported) {
  testutil::TempDir dir;
  write_with_format(dir / "deep.png", PNG_FORMAT_LINEAR_Y, 2);
  EXPECT_THROW(read_png(dir / "deep.png"), UnsupportedFormat);
}

TEST(Png, ColorIsUnsupported) {
  testutil::TempDir dir;
  write_with_format(dir / "rgb.png", PNG_FORMAT_RGB, 3);
  EXPECT_THROW(read_png(dir / "rgb.png"), UnsupportedFormat);
}

TEST(Png, IoAndFormatErrorsAreDistinct) {
  testutil::TempDir dir;
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
  write_file(dir / "junk.png", Bytes{1, 2, 3, 4, 5});
  try {
    read_png(dir / "junk.png");
    FAIL() << "expected an error";
  } catch (const IoError&) {
    FAIL() << "corrupt file reported as I/O failure";
  } catch (const Error&) {
  }
}
