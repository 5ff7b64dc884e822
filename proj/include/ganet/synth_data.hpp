#pragma once

// Synthetic labeled scenes whose labels need global context.
//
// A scene holds m Gaussian clusters with random populations. Every point is
// labeled with the population rank of its cluster (0 = most populous), so a
// classifier that only sees one point's coordinates cannot know its label.
//
// On-disk format (little-endian): "GPCD1", u32 scene count, then per scene
// u32 N, u32 d, u32 M, N*3 f32 positions, N*d f32 attributes, N u16 labels.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "ndarr.hpp"
#include "rng.hpp"

namespace ganet {

inline constexpr std::size_t kAttributeChannels = 3;
inline constexpr double kClusterSigma = 0.05;
inline constexpr std::string_view kDatasetMagic = "GPCD1";

struct Scene {
  Arr positions;   // [N,3], inside the unit cube
  Arr attributes;  // [N,d]
  Index labels;    // N values in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  bool operator==(const Scene&) const = default;
};

// Per-point network input [positions | attributes], shape [N, 3+d].
inline Arr scene_features(const Scene& s) { return kernel::concat_last(s.positions, s.attributes); }

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Rank of each cluster by population, most populous first; ties go to the
// smaller center x-coordinate.
inline Index population_ranks(const std::vector<std::size_t>& counts, const std::vector<double>& center_x) {
  Index order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return center_x[a] < center_x[b];
  });
  Index rank(counts.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

struct SceneDetail {
  Scene scene;
  Index cluster;  // cluster id of each point
  std::vector<double> center_x;
};

inline SceneDetail gen_scene_detail(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m < 2) throw std::invalid_argument("gen_scene: need at least 2 clusters, got " + std::to_string(m));
  if (n < m) throw std::invalid_argument("gen_scene: " + std::to_string(n) + " points for " + std::to_string(m) + " clusters");
  Rng rng(seed);
  std::vector<double> centers(m * 3);
  for (auto& v : centers) v = rng.uniform(0.1, 0.9);
  std::vector<double> weight(m);
  for (auto& w : weight) w = rng.uniform();
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
  std::vector<double> cdf(m);
  std::partial_sum(weight.begin(), weight.end(), cdf.begin());

  SceneDetail out;
  Scene& s = out.scene;
  s.positions = Arr({n, 3});
  s.attributes = Arr({n, kAttributeChannels});
  s.labels.resize(n);
  s.classes = m;
  out.cluster.resize(n);
  std::vector<std::size_t> counts(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const std::size_t k = std::min<std::size_t>(
        m - 1, static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()));
    out.cluster[i] = k;
    ++counts[k];
    for (std::size_t a = 0; a < 3; ++a) {
      s.positions.at(i, a) = to_f32(std::clamp(centers[k * 3 + a] + rng.normal(0.0, kClusterSigma), 0.0, 1.0));
    }
    for (std::size_t a = 0; a < kAttributeChannels; ++a) s.attributes.at(i, a) = to_f32(rng.uniform());
  }
  out.center_x.resize(m);
  for (std::size_t k = 0; k < m; ++k) out.center_x[k] = centers[k * 3];
  const Index rank = population_ranks(counts, out.center_x);
  for (std::size_t i = 0; i < n; ++i) s.labels[i] = rank[out.cluster[i]];
  return out;
}

inline Scene gen_scene(std::size_t n, std::size_t m, std::uint64_t seed) {
  return std::move(gen_scene_detail(n, m, seed).scene);
}

inline std::vector<Scene> gen_dataset(std::size_t scenes, std::size_t n, std::size_t m, std::uint64_t seed) {
  std::vector<Scene> out;
  out.reserve(scenes);
  for (std::size_t i = 0; i < scenes; ++i) out.push_back(gen_scene(n, m, derive_seed(seed, "data", i)));
  return out;
}

inline std::vector<std::uint8_t> encode_dataset(const std::vector<Scene>& scenes) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(scenes.size()));
  for (const Scene& s : scenes) {
    const std::size_t n = s.size();
    const std::size_t d = s.attributes.last();
    if (s.positions.shape() != Shape{n, 3} || s.attributes.extent(0) != n) {
      throw ShapeError("encode_dataset: inconsistent scene arrays");
    }
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(s.classes));
    for (double v : s.positions.data()) w.f32(static_cast<float>(v));
    for (double v : s.attributes.data()) w.f32(static_cast<float>(v));
    for (std::size_t l : s.labels) {
      if (l >= s.classes || l > UINT16_MAX) throw std::invalid_argument("encode_dataset: label out of range");
      w.u16(static_cast<std::uint16_t>(l));
    }
  }
  return w.buffer();
}

inline std::vector<Scene> decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) throw FormatError("bad dataset magic", 0);
  const std::uint32_t count = r.u32("scene count");
  std::vector<Scene> scenes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::size_t n = r.u32("point count");
    const std::size_t d = r.u32("attribute count");
    const std::size_t m = r.u32("class count");
    if (n == 0 || d == 0 || m == 0) throw FormatError("empty scene dimension", at);
    Scene s;
    s.classes = m;
    s.positions = Arr({n, 3});
    s.attributes = Arr({n, d});
    for (auto& v : s.positions.data()) v = r.f32("positions");
    for (auto& v : s.attributes.data()) v = r.f32("attributes");
    s.labels.resize(n);
    for (auto& l : s.labels) {
      const std::size_t pos = r.offset();
      l = r.u16("labels");
      if (l >= m) throw FormatError("label " + std::to_string(l) + " >= class count " + std::to_string(m), pos);
    }
    scenes.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes after last scene", r.offset());
  return scenes;
}

inline void save_dataset(const std::vector<Scene>& scenes, const std::string& path) {
  write_file(path, encode_dataset(scenes));
}

inline std::vector<Scene> load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace ganet
