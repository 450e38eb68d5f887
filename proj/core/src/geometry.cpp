#include "ltg/geometry.hpp"

#include <sstream>

namespace ltg {

std::ostream& operator<<(std::ostream& os, const BBox& b) {
  return os << '[' << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ']';
}

bool is_valid(const BBox& b) {
  return 0.0 <= b.x1 && b.x1 <= b.x2 && b.x2 <= 1.0 && 0.0 <= b.y1 &&
         b.y1 <= b.y2 && b.y2 <= 1.0;
}

BBox make_box(double x1, double y1, double x2, double y2) {
  BBox b{x1, y1, x2, y2};
  if (!is_valid(b)) {
    std::ostringstream msg;
    msg << "invalid box " << b << ": need 0<=x1<=x2<=1 and 0<=y1<=y2<=1";
    throw std::invalid_argument(msg.str());
  }
  return b;
}

bool contains(const BBox& outer, const BBox& inner) {
  return outer.x1 <= inner.x1 && outer.y1 <= inner.y1 &&
         inner.x2 <= outer.x2 && inner.y2 <= outer.y2;
}

std::array<double, 4> to_array(const BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

}  // namespace ltg
