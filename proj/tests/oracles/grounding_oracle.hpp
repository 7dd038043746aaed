#pragma once

// Brute-force reference for the OI-Crop and OI-Pos builders. Written
// separately from the library: overlap is measured by counting pixels, and
// every filter stage is a plain rescan of the manifest.

#include <algorithm>
#include <string>
#include <tuple>
#include <vector>

#include "efuse/grounding/grounding.hpp"

namespace oracle {

using efuse::ground::AnnotatedImage;
using efuse::ground::Box;

inline double pixel_iou(const Box& a, const Box& b) {
  const int x_lo = std::min(a.x0, b.x0), x_hi = std::max(a.x1, b.x1);
  const int y_lo = std::min(a.y0, b.y0), y_hi = std::max(a.y1, b.y1);
  long both = 0, any = 0;
  for (int y = y_lo; y < y_hi; ++y) {
    for (int x = x_lo; x < x_hi; ++x) {
      const bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
      const bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      both += in_a && in_b;
      any += in_a || in_b;
    }
  }
  return any ? static_cast<double>(both) / static_cast<double>(any) : 0.0;
}

/// (image, box) identity of a candidate; decoys carry their coordinates.
using Cand = std::tuple<std::size_t, int, int, int, int, std::string>;

struct Task {
  std::size_t image;
  std::string text;
  Cand truth;
  std::vector<Cand> pool;  // sorted
  bool operator==(const Task&) const = default;
};

inline Cand cand(std::size_t image, const Box& b) { return {image, b.x0, b.y0, b.x1, b.y1, b.label}; }

inline Task canonical(const efuse::ground::RegionTask& t) {
  Task o{t.image, t.query_text, {}, {}};
  for (const auto& c : t.candidates) o.pool.push_back(cand(c.image, c.box));
  o.truth = cand(t.candidates.at(t.ground_truth).image, t.candidates.at(t.ground_truth).box);
  std::sort(o.pool.begin(), o.pool.end());
  return o;
}

inline std::vector<Task> canonical(const std::vector<efuse::ground::RegionTask>& ts) {
  std::vector<Task> out;
  for (const auto& t : ts) out.push_back(canonical(t));
  return out;
}

inline std::vector<Task> oi_crop(const std::vector<AnnotatedImage>& m) {
  const std::size_t n = m.size();
  // alive[i][k]: box k of image i survives the stages run so far
  std::vector<std::vector<bool>> alive(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const Box& b : m[i].boxes) {
      const double w = b.x1 - b.x0, h = b.y1 - b.y0;
      bool ok = !(w < 50 || h < 50);
      ok = ok && !(w / static_cast<double>(m[i].width) > 0.9 || h / static_cast<double>(m[i].height) > 0.9);
      ok = ok && !(std::max(w / h, h / w) > 1.5);
      alive[i].push_back(ok);
    }
  }
  auto count_label = [&](const std::string& label) {
    int c = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < m[i].boxes.size(); ++k) c += alive[i][k] && m[i].boxes[k].label == label;
    }
    return c;
  };
  auto in_image = [&](std::size_t i, const std::string& label) {
    int c = 0;
    for (std::size_t k = 0; k < m[i].boxes.size(); ++k) c += alive[i][k] && m[i].boxes[k].label == label;
    return c;
  };
  std::vector<std::vector<bool>> next = alive;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m[i].boxes.size(); ++k) {
      if (alive[i][k] && count_label(m[i].boxes[k].label) < 10) next[i][k] = false;
    }
  }
  alive = next;
  for (std::size_t i = 0; i < n; ++i) {
    int unique = 0;
    for (std::size_t k = 0; k < m[i].boxes.size(); ++k) unique += alive[i][k] && in_image(i, m[i].boxes[k].label) == 1;
    if (unique < 5) std::fill(next[i].begin(), next[i].end(), false);
  }
  alive = next;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m[i].boxes.size(); ++k) {
      if (!alive[i][k]) continue;
      for (std::size_t e = 0; e < k; ++e) {
        if (alive[i][e] && pixel_iou(m[i].boxes[k], m[i].boxes[e]) > 0.6) {
          alive[i][k] = false;
          break;
        }
      }
    }
  }
  std::vector<Task> out;
  std::vector<std::pair<std::string, int>> used;
  auto uses = [&](const std::string& l) -> int& {
    for (auto& [k, v] : used) {
      if (k == l) return v;
    }
    used.emplace_back(l, 0);
    return used.back().second;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < m[i].boxes.size(); ++k) {
      if (alive[i][k] && in_image(i, m[i].boxes[k].label) == 1) order.push_back(k);
    }
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return m[i].boxes[a].label < m[i].boxes[b].label; });
    for (std::size_t q : order) {
      const Box& gt = m[i].boxes[q];
      if (uses(gt.label) >= 5) continue;
      Task t{i, gt.label, cand(i, gt), {cand(i, gt)}};
      int same = 0;
      for (std::size_t k = 0; k < m[i].boxes.size() && same < 4; ++k) {
        if (alive[i][k] && m[i].boxes[k].label != gt.label) {
          t.pool.push_back(cand(i, m[i].boxes[k]));
          ++same;
        }
      }
      if (same < 4) continue;
      int other = 0;
      for (std::size_t s = 1; s < n && other < 5; ++s) {
        const std::size_t j = (i + s) % n;
        for (std::size_t k = 0; k < m[j].boxes.size(); ++k) {
          if (alive[j][k] && m[j].boxes[k].label == gt.label) {
            t.pool.push_back(cand(j, m[j].boxes[k]));
            ++other;
            break;
          }
        }
      }
      if (other < 5) continue;
      ++uses(gt.label);
      std::sort(t.pool.begin(), t.pool.end());
      out.push_back(std::move(t));
    }
  }
  return out;
}

inline std::vector<Task> oi_pos(const std::vector<AnnotatedImage>& m) {
  std::vector<Task> out;
  std::vector<std::pair<std::string, int>> used;
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<std::string> labels;
    for (const Box& b : m[i].boxes) labels.push_back(b.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (const auto& label : labels) {
      std::vector<Box> two;
      for (const Box& b : m[i].boxes) {
        if (b.label == label) two.push_back(b);
      }
      if (two.size() != 2) continue;
      const double ca = (two[0].x0 + two[0].x1) / 2.0, cb = (two[1].x0 + two[1].x1) / 2.0;
      if ((ca >= two[1].x0 && ca <= two[1].x1) || (cb >= two[0].x0 && cb <= two[0].x1)) continue;
      const Box& left = ca < cb ? two[0] : two[1];
      const Box& right = ca < cb ? two[1] : two[0];
      const int W = static_cast<int>(m[i].width), H = static_cast<int>(m[i].height);
      std::vector<Box> decoys;
      const int lx = std::min(left.x0, right.x0), rx = std::max(left.x1, right.x1);
      const int ty = std::min(left.y0, right.y0), by = std::max(left.y1, right.y1);
      if (lx >= 30 && H >= 30) {
        decoys.push_back({0, 0, lx, H, "left border", std::nullopt});
      } else if (ty >= 30 && W >= 30) {
        decoys.push_back({0, 0, W, ty, "top border", std::nullopt});
      }
      if (W - rx >= 30 && H >= 30) {
        decoys.push_back({rx, 0, W, H, "right border", std::nullopt});
      } else if (H - by >= 30 && W >= 30) {
        decoys.push_back({0, by, W, H, "bottom border", std::nullopt});
      }
      for (int side = 0; side < 2; ++side) {
        int* u = nullptr;
        for (auto& [k, v] : used) {
          if (k == label) u = &v;
        }
        if (!u) {
          used.emplace_back(label, 0);
          u = &used.back().second;
        }
        if (*u >= 100) break;
        ++*u;
        Task t{i, "The " + label + (side == 0 ? " on the left" : " on the right"), cand(i, side == 0 ? left : right),
               {cand(i, left), cand(i, right)}};
        for (const Box& d : decoys) t.pool.push_back(cand(i, d));
        std::sort(t.pool.begin(), t.pool.end());
        out.push_back(std::move(t));
      }
    }
  }
  return out;
}

}  // namespace oracle
