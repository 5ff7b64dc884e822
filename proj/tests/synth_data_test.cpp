#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>

#include "ganet/ganet.hpp"

namespace ganet {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ganet_synth_" + name)).string();
}

TEST(PopulationRanks, MajorityFirst) {
  EXPECT_EQ(population_ranks({900, 100}, {0.5, 0.2}), (Index{0, 1}));
  EXPECT_EQ(population_ranks({100, 900}, {0.5, 0.2}), (Index{1, 0}));
}

TEST(PopulationRanks, TiesBrokenBySmallerX) {
  EXPECT_EQ(population_ranks({5, 5, 7}, {0.8, 0.3, 0.1}), (Index{2, 1, 0}));
}

TEST(GenScene, PositionsInsideCube) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = gen_scene(500, 4, seed);
    for (double v : s.positions.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (double v : s.attributes.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GenScene, LabelsMatchIndependentRecount) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SceneDetail d = gen_scene_detail(300, 5, seed);
    std::map<std::size_t, std::size_t> count;
    for (std::size_t k : d.cluster) ++count[k];
    for (std::size_t i = 0; i < d.cluster.size(); ++i) {
      const std::size_t mine = d.cluster[i];
      std::size_t rank = 0;
      for (std::size_t other = 0; other < 5; ++other) {
        if (other == mine) continue;
        const bool ahead = count[other] > count[mine] ||
                           (count[other] == count[mine] && d.center_x[other] < d.center_x[mine]);
        rank += ahead;
      }
      ASSERT_EQ(d.scene.labels[i], rank);
    }
  }
}

TEST(GenScene, PopulationsVaryAcrossScenes) {
  std::vector<std::size_t> top_share;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = gen_scene(1024, 4, seed);
    top_share.push_back(static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), 0u)));
  }
  EXPECT_GT(*std::max_element(top_share.begin(), top_share.end()) -
                *std::min_element(top_share.begin(), top_share.end()),
            100u);
}

TEST(GenScene, Deterministic) {
  EXPECT_EQ(gen_scene(256, 3, 42), gen_scene(256, 3, 42));
  EXPECT_NE(gen_scene(256, 3, 42).positions, gen_scene(256, 3, 43).positions);
}

TEST(GenScene, InvalidArguments) {
  EXPECT_THROW(gen_scene(10, 1, 0), std::invalid_argument);
  EXPECT_THROW(gen_scene(3, 4, 0), std::invalid_argument);
}

TEST(Dataset, SaveLoadBitExact) {
  const auto data = gen_dataset(3, 64, 4, 9);
  const std::string path = temp_path("roundtrip.gpcd");
  save_dataset(data, path);
  EXPECT_EQ(load_dataset(path), data);
  std::remove(path.c_str());
}

TEST(Dataset, TruncationReportsOffset) {
  const auto bytes = encode_dataset(gen_dataset(1, 8, 2, 1));
  // header 5 + 4, scene header 12, positions 8*3*4 = 96 -> cut inside positions
  const std::size_t cut = 5 + 4 + 12 + 40;
  try {
    decode_dataset(std::span<const std::uint8_t>(bytes.data(), cut));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, cut);
    EXPECT_NE(std::string(e.what()).find("at byte offset " + std::to_string(cut)), std::string::npos);
  }
}

TEST(Dataset, BadMagic) {
  auto bytes = encode_dataset(gen_dataset(1, 8, 2, 1));
  bytes[0] = 'X';
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(Dataset, TrailingBytesRejected) {
  auto bytes = encode_dataset(gen_dataset(1, 8, 2, 1));
  bytes.push_back(0);
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(Dataset, LabelOutOfRangeRejected) {
  auto bytes = encode_dataset(gen_dataset(1, 8, 2, 1));
  bytes[bytes.size() - 2] = 7;
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

// Independent writer built from memcpy and explicit byte order.
std::vector<std::uint8_t> reference_writer() {
  std::vector<std::uint8_t> out;
  auto put = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  auto le32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  put("GPCD1", 5);
  le32(1);
  le32(2);  // N
  le32(1);  // d
  le32(3);  // M
  const float pos[] = {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 0.125f};
  const float attr[] = {0.3f, 0.9f};
  for (float f : pos) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    le32(u);
  }
  for (float f : attr) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    le32(u);
  }
  out.push_back(2);
  out.push_back(0);
  out.push_back(0);
  out.push_back(0);
  return out;
}

TEST(Dataset, ReferenceWriterParses) {
  const auto bytes = reference_writer();
  const auto scenes = decode_dataset(bytes);
  ASSERT_EQ(scenes.size(), 1u);
  const Scene& s = scenes[0];
  EXPECT_EQ(s.classes, 3u);
  EXPECT_EQ(s.labels, (Index{2, 0}));
  EXPECT_EQ(s.positions, Arr({2, 3}, std::vector<double>{0.0, 0.5, 1.0, 0.25, 0.75, 0.125}));
  EXPECT_EQ(s.attributes.at(0, 0), static_cast<double>(0.3f));
  EXPECT_EQ(encode_dataset(scenes), bytes);
}

TEST(Dataset, MissingFileIsIoError) {
  EXPECT_THROW(load_dataset(temp_path("does_not_exist.gpcd")), IoError);
}

}  // namespace
}  // namespace ganet
