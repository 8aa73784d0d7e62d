#include "rfhit/raster.h"

#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "temp_dir.h"

namespace rfhit::raster {
namespace {

using testing::TempDir;

TEST(Pgm, EightBitRoundTrip) {
  TempDir dir;
  GrayImage img{2, 3, 255, {0, 1, 2, 100, 200, 255}};
  write_pgm(dir / "a.pgm", img);
  const GrayImage back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.max_value, 255);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.pgm"), std::string("P5\n3 2\n255\n").size() + 6);
}

TEST(Pgm, SixteenBitIsBigEndian) {
  TempDir dir;
  write_pgm(dir / "b.pgm", GrayImage{1, 2, 65535, {0x0102, 0xfffe}});
  std::ifstream in(dir / "b.pgm", std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  const std::string tail = all.substr(all.size() - 4);
  EXPECT_EQ(static_cast<unsigned char>(tail[0]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(tail[1]), 0x02);
  EXPECT_EQ(read_pgm(dir / "b.pgm").pixels, (std::vector<uint16_t>{0x0102, 0xfffe}));
}

TEST(Pgm, ReadsCommentsInHeader) {
  TempDir dir;
  {
    std::ofstream out(dir / "c.pgm", std::ios::binary);
    out << "P5\n# made by hand\n2 1\n# another\n15\n";
    out.put(3).put(15);
  }
  const GrayImage img = read_pgm(dir / "c.pgm");
  EXPECT_EQ(img.max_value, 15);
  EXPECT_EQ(img.pixels, (std::vector<uint16_t>{3, 15}));
}

TEST(Pgm, RejectsMalformed) {
  TempDir dir;
  {
    std::ofstream out(dir / "p2.pgm");
    out << "P2\n1 1\n255\n0\n";
  }
  EXPECT_THROW(read_pgm(dir / "p2.pgm"), RasterError);
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n";
    out.put(1);
  }
  EXPECT_THROW(read_pgm(dir / "short.pgm"), RasterError);
  EXPECT_THROW(read_pgm(dir / "missing.pgm"), RasterError);
  EXPECT_THROW(write_pgm(dir / "bad.pgm", GrayImage{1, 1, 10, {11}}), RasterError);
}

TEST(Pfm, RoundTripPreservesOrientation) {
  TempDir dir;
  FloatImage img{2, 3, {0.5f, -1.0f, 2.25f, 1e-7f, 3.0f, -0.125f}};
  write_pfm(dir / "a.pfm", img);
  const FloatImage back = read_pfm(dir / "a.pfm");
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Pfm, StoresRowsBottomToTop) {
  TempDir dir;
  write_pfm(dir / "r.pfm", FloatImage{2, 1, {1.0f, 2.0f}});
  std::ifstream in(dir / "r.pfm", std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  float first;
  std::memcpy(&first, all.data() + all.size() - 8, 4);
  EXPECT_EQ(first, 2.0f);
}

TEST(Pfm, RejectsColorAndTruncation) {
  TempDir dir;
  {
    std::ofstream out(dir / "pf.pfm", std::ios::binary);
    out << "PF\n1 1\n-1.0\n";
  }
  EXPECT_THROW(read_pfm(dir / "pf.pfm"), RasterError);
}

TEST(Ppm, WritesHeaderAndPixels) {
  TempDir dir;
  write_ppm(dir / "a.ppm", RgbImage{1, 2, {255, 0, 0, 0, 255, 0}});
  EXPECT_EQ(std::filesystem::file_size(dir / "a.ppm"), std::string("P6\n2 1\n255\n").size() + 6);
  EXPECT_THROW(write_ppm(dir / "b.ppm", RgbImage{1, 2, {1, 2}}), RasterError);
}

}  // namespace
}  // namespace rfhit::raster
