#pragma once

// Helpers shared by the unit tests and the acceptance binary: frozen oracle
// values, random boxes and strings, and the reference implementations the
// library is checked against.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/geometry.hpp"

namespace ltg::testing {

inline const nlohmann::json& oracles() {
  static const nlohmann::json j = [] {
    const std::string path = std::string(LTG_TEST_DATA_DIR) + "/oracles.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing oracle file " + path);
    return nlohmann::json::parse(in);
  }();
  return j;
}

inline BBox box_from_json(const nlohmann::json& j) {
  return BBox{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
              j.at(3).get<double>()};
}

/// Corners drawn uniformly and sorted, rejecting sides below `min_side`.
inline BBox random_box(std::mt19937_64& rng, double min_side = 0.05) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    double x1 = u(rng), x2 = u(rng), y1 = u(rng), y2 = u(rng);
    if (x2 < x1) std::swap(x1, x2);
    if (y2 < y1) std::swap(y1, y2);
    if (x2 - x1 >= min_side && y2 - y1 >= min_side) return BBox{x1, y1, x2, y2};
  }
}

struct RasterOverlap {
  double iou = 0.0;
  double giou = 0.0;
  double iou_hat = 0.0;  // region a, token b
};

/// One jittered sample per cell of an n x n grid over the unit square.
inline RasterOverlap raster_overlap(const BBox& a, const BBox& b, std::mt19937_64& rng, int n = 512) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const BBox c = union_box(a, b);
  auto inside = [](const BBox& r, double x, double y) {
    return x >= r.x1 && x <= r.x2 && y >= r.y1 && y <= r.y2;
  };
  long in_a = 0, in_b = 0, in_both = 0, in_c = 0;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      const double x = (col + u(rng)) / n;
      const double y = (row + u(rng)) / n;
      const bool pa = inside(a, x, y), pb = inside(b, x, y);
      in_a += pa;
      in_b += pb;
      in_both += pa && pb;
      in_c += inside(c, x, y);
    }
  }
  const long uni = in_a + in_b - in_both;
  RasterOverlap r;
  r.iou = uni > 0 ? static_cast<double>(in_both) / uni : 0.0;
  r.giou = in_c > 0 ? r.iou - static_cast<double>(in_c - uni) / in_c : 0.0;
  r.iou_hat = in_b > 0 ? static_cast<double>(in_both) / in_b : 0.0;
  return r;
}

/// Full-table Wagner-Fischer edit distance.
inline std::size_t reference_levenshtein(const std::string& s, const std::string& t) {
  std::vector<std::vector<std::size_t>> d(s.size() + 1, std::vector<std::size_t>(t.size() + 1));
  for (std::size_t i = 0; i <= s.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= t.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= s.size(); ++i)
    for (std::size_t j = 1; j <= t.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (s[i - 1] == t[j - 1] ? 0 : 1)});
  return d[s.size()][t.size()];
}

inline std::string random_string(std::mt19937_64& rng, std::size_t max_len,
                                 const std::string& alphabet = "abcdefgh ") {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s(len(rng), ' ');
  for (char& c : s) c = alphabet[pick(rng)];
  return s;
}

}  // namespace ltg::testing
