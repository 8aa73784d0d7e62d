#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "rfhit/metrics.h"
#include "rfhit/random.h"

namespace rfhit::testing {

using metrics::BinaryVolume;
using metrics::Spacing;

inline BinaryVolume random_mask(int64_t n, double p, Rng& rng) {
  BinaryVolume m(n, n, n);
  for (auto& v : m.voxels) v = rng.uniform() < p ? 1 : 0;
  return m;
}

inline double oracle_dice(const BinaryVolume& a, const BinaryVolume& b) {
  int64_t inter = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.voxels.size(); ++i) {
    inter += a.voxels[i] && b.voxels[i];
    na += a.voxels[i];
    nb += b.voxels[i];
  }
  return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline std::vector<std::array<int64_t, 3>> oracle_surface(const BinaryVolume& m) {
  std::vector<std::array<int64_t, 3>> out;
  for (int64_t z = 0; z < m.depth; ++z)
    for (int64_t y = 0; y < m.height; ++y)
      for (int64_t x = 0; x < m.width; ++x) {
        if (!m.at(z, y, x)) continue;
        bool edge = z == 0 || y == 0 || x == 0 || z == m.depth - 1 || y == m.height - 1 || x == m.width - 1;
        if (!edge) {
          edge = !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) || !m.at(z, y + 1, x) ||
                 !m.at(z, y, x - 1) || !m.at(z, y, x + 1);
        }
        if (edge) out.push_back({z, y, x});
      }
  return out;
}

// All-pairs nearest surface distances in both directions, then the
// linearly interpolated 95th percentile.
inline std::optional<double> oracle_hd95(const BinaryVolume& a, const BinaryVolume& b, const Spacing& s) {
  const auto sa = oracle_surface(a), sb = oracle_surface(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty()) return std::nullopt;
  std::vector<double> d;
  auto nearest = [&](const auto& from, const auto& to) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dz = (p[0] - q[0]) * s[0], dy = (p[1] - q[1]) * s[1], dx = (p[2] - q[2]) * s[2];
        best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
      }
      d.push_back(best);
    }
  };
  nearest(sa, sb);
  nearest(sb, sa);
  std::sort(d.begin(), d.end());
  const double rank = 0.95 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(rank));
  const size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (rank - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

}  // namespace rfhit::testing
