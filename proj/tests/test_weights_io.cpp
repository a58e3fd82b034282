#include <gtest/gtest.h>

#include <cstring>

#include "dprobe/weights_io.hpp"
#include "support.hpp"

using namespace dprobe;
using namespace dprobe::testing;

namespace {

LoadErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_weights(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return LoadErrorKind::corrupt;
}

}  // namespace

TEST(WeightsIo, RoundTripIsExact) {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    const Model m = random_small_model(rng);
    const auto bytes = encode_weights(m);
    const Model back = decode_weights(bytes);
    EXPECT_TRUE(back == m);
    EXPECT_EQ(encode_weights(back), bytes);
  }
}

TEST(WeightsIo, FileRoundTripAndName) {
  Rng rng(12);
  const Model m = random_small_model(rng);
  const auto path = temp_dir("weights_io") / "net_a.dprb";
  save_weights(m, path);
  const Model back = load_weights(path);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.name(), "net_a");
}

TEST(WeightsIo, MissingFile) {
  try {
    load_weights(temp_dir("weights_io_missing") / "nope.dprb");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::missing_file);
  }
}

TEST(WeightsIo, BadMagic) {
  Rng rng(13);
  auto bytes = encode_weights(random_small_model(rng));
  bytes[0] = 'X';
  EXPECT_EQ(kind_of(bytes), LoadErrorKind::bad_magic);
}

TEST(WeightsIo, EveryTruncationIsDetected) {
  Rng rng(14);
  const auto bytes = encode_weights(random_small_model(rng));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_EQ(kind_of(cut), LoadErrorKind::truncated) << n;
  }
}

TEST(WeightsIo, CorruptContent) {
  Rng rng(15);
  const auto good = encode_weights(random_small_model(rng));
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), LoadErrorKind::corrupt);

  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), LoadErrorKind::corrupt);

  // First layer tag sits after magic, version, layer count, rank and three dims.
  auto tag = good;
  tag[28] = 77;
  EXPECT_EQ(kind_of(tag), LoadErrorKind::corrupt);

  // A conv whose input channels disagree with the input shape.
  auto channels = good;
  const std::size_t in_channels_at = 28 + 4 + 4 + 8;
  channels[in_channels_at] = static_cast<std::uint8_t>(channels[in_channels_at] + 1);
  const auto k = kind_of(channels);
  EXPECT_TRUE(k == LoadErrorKind::corrupt || k == LoadErrorKind::truncated);
}

TEST(WeightsIo, HugeCountsDoNotAllocate) {
  Rng rng(16);
  auto bytes = encode_weights(random_small_model(rng));
  std::memset(bytes.data() + 8, 0xff, 4);  // layer count
  EXPECT_EQ(kind_of(bytes), LoadErrorKind::truncated);
}
