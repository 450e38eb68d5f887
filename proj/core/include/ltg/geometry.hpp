#pragma once

// Axis-aligned box algebra on normalized image coordinates.
//
// All functions are templated on the scalar so the same code path is used
// for plain doubles and for the forward-mode duals that carry box gradients
// through the answer-location head (see ltg/dual.hpp).
// Token overlap: docs/method_map.md#token-box-overlap.

#include <algorithm>
#include <array>
#include <ostream>
#include <stdexcept>

namespace ltg {

template <typename T>
struct BoxT {
  T x1{0};
  T y1{0};
  T x2{0};
  T y2{0};

  T width() const { return x2 - x1; }
  T height() const { return y2 - y1; }
  T area() const { return width() * height(); }
};

using BBox = BoxT<double>;

inline bool operator==(const BBox& a, const BBox& b) {
  return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
}
inline bool operator!=(const BBox& a, const BBox& b) { return !(a == b); }

std::ostream& operator<<(std::ostream& os, const BBox& b);

/// True when 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1.
bool is_valid(const BBox& b);

/// Throws std::invalid_argument naming the offending coordinates.
BBox make_box(double x1, double y1, double x2, double y2);

/// True when `inner` lies inside `outer` (closed containment).
bool contains(const BBox& outer, const BBox& inner);

std::array<double, 4> to_array(const BBox& b);

namespace detail {
template <typename T>
T max0(const T& v) {
  return v < T(0) ? T(0) : v;
}
template <typename T>
T tmin(const T& a, const T& b) {
  return b < a ? b : a;
}
template <typename T>
T tmax(const T& a, const T& b) {
  return a < b ? b : a;
}
}  // namespace detail

template <typename T>
BoxT<T> union_box(const BoxT<T>& a, const BoxT<T>& b) {
  using detail::tmax;
  using detail::tmin;
  return {tmin(a.x1, b.x1), tmin(a.y1, b.y1), tmax(a.x2, b.x2),
          tmax(a.y2, b.y2)};
}

template <typename T>
T intersection_area(const BoxT<T>& a, const BoxT<T>& b) {
  using detail::max0;
  using detail::tmax;
  using detail::tmin;
  const T w = max0(tmin(a.x2, b.x2) - tmax(a.x1, b.x1));
  const T h = max0(tmin(a.y2, b.y2) - tmax(a.y1, b.y1));
  return w * h;
}

template <typename T>
T iou(const BoxT<T>& a, const BoxT<T>& b) {
  const T inter = intersection_area(a, b);
  const T uni = a.area() + b.area() - inter;
  if (!(T(0) < uni)) return T(0);
  return inter / uni;
}

/// Generalized IoU. Both boxes degenerate (empty enclosing box) yields 0;
/// `degenerate`, when given, is set so callers can flag it.
template <typename T>
T giou(const BoxT<T>& a, const BoxT<T>& b, bool* degenerate = nullptr) {
  const BoxT<T> enclosing = union_box(a, b);
  const T c = enclosing.area();
  if (degenerate) *degenerate = !(T(0) < c);
  if (!(T(0) < c)) return T(0);
  const T inter = intersection_area(a, b);
  const T uni = a.area() + b.area() - inter;
  const T ratio = uni > T(0) ? inter / uni : T(0);
  return ratio - (c - uni) / c;
}

/// Fraction of `token` covered by `region`: |A∩B| / |B|, 0 when |B| = 0.
template <typename T>
T iou_hat(const BoxT<T>& region, const BoxT<T>& token) {
  const T b = token.area();
  if (!(T(0) < b)) return T(0);
  return intersection_area(region, token) / b;
}

}  // namespace ltg
