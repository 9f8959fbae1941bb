#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "agi/io.hpp"
#include "agi/tensor.hpp"

using agi::BadDTypeError;
using agi::BadMagicError;
using agi::ShapeError;
using agi::Tensor;
using agi::TruncatedFileError;
using agi::io::TensorFile;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "agi_io_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(TensorFile, RoundTripsBothDtypes) {
  TensorFile tf;
  Tensor<float> a({2, 3});
  for (int64_t i = 0; i < 6; ++i) a[i] = float(i) * 0.25f - 1.0f;
  Tensor<double> b({4});
  for (int64_t i = 0; i < 4; ++i) b[i] = double(i) * 1e-3 + 0.125;
  tf.put("weights", a);
  tf.put("stats", b);
  const auto p = tmp_path("roundtrip.tnsr");
  tf.save(p.string());
  const TensorFile back = TensorFile::load(p.string());
  ASSERT_EQ(back.size(), 2);
  EXPECT_EQ(back.name(0), "weights");
  EXPECT_EQ(back.name(1), "stats");
  EXPECT_EQ(back.dtype("weights"), agi::io::kDtypeF32);
  EXPECT_EQ(back.dtype("stats"), agi::io::kDtypeF64);
  EXPECT_TRUE(agi::bitwise_equal(back.f32("weights"), a));
  EXPECT_TRUE(agi::bitwise_equal(back.f64("stats"), b));
}

TEST(TensorFile, SerializedBytesMatchDocumentedLayout) {
  TensorFile tf;
  Tensor<float> t({2, 2});
  t[0] = 1.0f;
  t[1] = -2.0f;
  t[2] = 0.5f;
  t[3] = 3.0f;
  tf.put("ab", t);
  const std::string got = tf.serialize();
  std::string want;
  want += "TNSR";
  want += '\x01';                                  // version
  want += std::string("\x01\x00\x00\x00", 4);      // count
  want += std::string("\x02\x00", 2);              // name length
  want += "ab";
  want += '\x01';                                  // dtype f32
  want += '\x02';                                  // ndim
  want += std::string("\x02\x00\x00\x00", 4);      // dim 0
  want += std::string("\x02\x00\x00\x00", 4);      // dim 1
  want += std::string("\x00\x00\x80\x3f", 4);      // 1.0f
  want += std::string("\x00\x00\x00\xc0", 4);      // -2.0f
  want += std::string("\x00\x00\x00\x3f", 4);      // 0.5f
  want += std::string("\x00\x00\x40\x40", 4);      // 3.0f
  EXPECT_EQ(got, want);
}

TEST(TensorFile, ParseRejectsCorruptInputs) {
  TensorFile tf;
  Tensor<float> t({2});
  t[0] = 1.0f;
  t[1] = 2.0f;
  tf.put("x", t);
  const std::string good = tf.serialize();
  EXPECT_NO_THROW((void)TensorFile::parse(good, "mem"));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW((void)TensorFile::parse(bad_magic, "mem"), BadMagicError);

  std::string bad_version = good;
  bad_version[4] = '\x02';
  EXPECT_THROW((void)TensorFile::parse(bad_version, "mem"), BadMagicError);

  // dtype byte sits right after the 2-byte name length and 1-byte name.
  std::string bad_dtype = good;
  bad_dtype[4 + 1 + 4 + 2 + 1] = '\x07';
  EXPECT_THROW((void)TensorFile::parse(bad_dtype, "mem"), BadDTypeError);

  const std::string truncated = good.substr(0, good.size() - 3);
  EXPECT_THROW((void)TensorFile::parse(truncated, "mem"), TruncatedFileError);

  EXPECT_THROW((void)TensorFile::parse("TN", "mem"), TruncatedFileError);
}

TEST(TensorFile, DuplicateAndMissingNames) {
  TensorFile tf;
  tf.put("x", Tensor<float>({1}));
  EXPECT_THROW(tf.put("x", Tensor<float>({1})), ShapeError);
  EXPECT_THROW((void)tf.f32("y"), ShapeError);
  EXPECT_THROW((void)tf.f64("x"), ShapeError);  // stored as f32
  EXPECT_TRUE(tf.has("x"));
  EXPECT_FALSE(tf.has("y"));
}

TEST(TensorFile, Utf8PayloadRoundTrips) {
  const std::string s = "config: {\"lr\": 1e-4}\nnext line\ttab";
  const auto t = agi::io::utf8_tensor(s);
  EXPECT_EQ(t.numel(), int64_t(s.size()));
  EXPECT_EQ(agi::io::tensor_utf8(t), s);
  Tensor<float> bad({1});
  bad[0] = 300.0f;
  EXPECT_THROW((void)agi::io::tensor_utf8(bad), ShapeError);
  Tensor<float> frac({1});
  frac[0] = 65.5f;
  EXPECT_THROW((void)agi::io::tensor_utf8(frac), ShapeError);
}

TEST(Pgm, ClampsAndRoundsHalfUp) {
  Tensor<double> img({1, 6});
  img[0] = 0.0;
  img[1] = 1.0;
  img[2] = 0.5;
  img[3] = -0.3;
  img[4] = 2.0;
  img[5] = 0.1;
  const auto p = tmp_path("img.pgm");
  agi::io::write_pgm(p.string(), img);
  const std::string data = read_file(p);
  const std::string header = "P5\n6 1\n255\n";
  ASSERT_EQ(data.substr(0, header.size()), header);
  ASSERT_EQ(data.size(), header.size() + 6);
  const auto px = [&](int i) { return int(uint8_t(data[header.size() + size_t(i)])); };
  EXPECT_EQ(px(0), 0);
  EXPECT_EQ(px(1), 255);
  EXPECT_EQ(px(2), 128);  // 0.5 * 255 + 0.5 rounds up
  EXPECT_EQ(px(3), 0);    // clamped from below
  EXPECT_EQ(px(4), 255);  // clamped from above
  EXPECT_EQ(px(5), 26);   // 25.5 + 0.5
  EXPECT_THROW(agi::io::write_pgm(p.string(), Tensor<double>({2, 2, 2})), ShapeError);
}
