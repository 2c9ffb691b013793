#include "impactforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace impactforge::geom {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool all_finite(const DesignParams& p) {
  return std::isfinite(p.angle) && std::isfinite(p.vf);
}

}  // namespace

void DesignParams::validate() const {
  if (!all_finite(*this)) throw std::invalid_argument("design parameters must be finite");
  if (sides < 3 || sides > 6) throw std::invalid_argument("sides must be in {3,4,5,6}");
  if (nx < 1 || nx > 8) throw std::invalid_argument("nx must be in [1,8]");
  if (ny < 1 || ny > 8) throw std::invalid_argument("ny must be in [1,8]");
  if (vf < 0.01 || vf > 0.10) throw std::invalid_argument("vf must be in [0.01,0.10]");
  if (angle < 0.0 || angle >= kTwoPi) throw std::invalid_argument("angle must be in [0,2pi)");
}

bool operator==(const DesignParams& a, const DesignParams& b) {
  return a.sides == b.sides && a.nx == b.nx && a.ny == b.ny && a.angle == b.angle &&
         a.vf == b.vf;
}

double Polygon::signed_area() const {
  double s = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    s += cross(vertices[i], vertices[(i + 1) % n]);
  }
  return 0.5 * s;
}

bool Polygon::contains_strict(Vec2 p) const {
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = vertices[i];
    const Vec2 b = vertices[(i + 1) % n];
    if (cross(b - a, p - a) <= 0.0) return false;
  }
  return true;
}

Polygon regular_polygon(int sides, double area, double angle, Vec2 center) {
  if (sides < 3) throw std::invalid_argument("regular_polygon: sides must be >= 3");
  if (!(area > 0.0) || !std::isfinite(area)) {
    throw std::invalid_argument("regular_polygon: area must be positive and finite");
  }
  if (!std::isfinite(angle) || !std::isfinite(center.x) || !std::isfinite(center.y)) {
    throw std::invalid_argument("regular_polygon: non-finite input");
  }
  // A = 1/2 n R^2 sin(2pi/n)  =>  R = sqrt(2A / (n sin(2pi/n)))
  const double step = kTwoPi / sides;
  const double radius = std::sqrt(2.0 * area / (sides * std::sin(step)));
  Polygon poly;
  poly.vertices.reserve(std::size_t(sides));
  for (int k = 0; k < sides; ++k) {
    const double a = angle + k * step;
    poly.vertices.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return poly;
}

std::vector<Vec2> tubule_centers(int nx, int ny) {
  if (nx < 1 || nx > 8 || ny < 1 || ny > 8) {
    throw std::invalid_argument("tubule_centers: counts must be in [1,8]");
  }
  const double cw = kRegionSize / nx;
  const double ch = kRegionSize / ny;
  std::vector<Vec2> centers;
  centers.reserve(std::size_t(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      centers.push_back({kRegionMin + (i + 0.5) * cw, kRegionMin + (j + 0.5) * ch});
    }
  }
  return centers;
}

namespace {

// Projection interval of a polygon on an axis (not normalized).
void project(const Polygon& p, Vec2 axis, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const Vec2& v : p.vertices) {
    const double d = dot(v, axis);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
}

bool strictly_separated_on_edges(const Polygon& a, const Polygon& b) {
  const std::size_t n = a.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e = a.vertices[(i + 1) % n] - a.vertices[i];
    const Vec2 axis{-e.y, e.x};
    double alo, ahi, blo, bhi;
    project(a, axis, alo, ahi);
    project(b, axis, blo, bhi);
    if (ahi < blo || bhi < alo) return true;
  }
  return false;
}

}  // namespace

bool polygons_disjoint(const Polygon& a, const Polygon& b) {
  return strictly_separated_on_edges(a, b) || strictly_separated_on_edges(b, a);
}

bool polygon_in_region(const Polygon& p) {
  for (const Vec2& v : p.vertices) {
    if (v.x < kRegionMin || v.x > kRegionMax || v.y < kRegionMin || v.y > kRegionMax) {
      return false;
    }
  }
  return true;
}

const char* rejection_name(Rejection r) {
  switch (r) {
    case Rejection::kNone: return "none";
    case Rejection::kTubulesIntersect: return "tubules_intersect";
    case Rejection::kOutsideRegion: return "outside_region";
  }
  return "unknown";
}

BuildResult build_design(const DesignParams& params) {
  BuildResult result;
  if (params.vf == 0.0) return result;  // solid control design

  const double cell_area = (kRegionSize / params.nx) * (kRegionSize / params.ny);
  const double tubule_area = params.vf * cell_area;
  const auto centers = tubule_centers(params.nx, params.ny);

  result.tubules.reserve(centers.size());
  for (const Vec2& c : centers) {
    result.tubules.push_back(regular_polygon(params.sides, tubule_area, params.angle, c));
  }

  for (const Polygon& poly : result.tubules) {
    if (!polygon_in_region(poly)) {
      result.rejection = Rejection::kOutsideRegion;
      result.tubules.clear();
      return result;
    }
  }

  // All tubules are congruent; only neighbors within one bounding-circle
  // diameter can overlap.
  const std::size_t n = result.tubules.size();
  if (n > 1) {
    const Vec2 v0 = result.tubules[0].vertices[0];
    const Vec2 c0 = centers[0];
    const double radius = std::sqrt(dot(v0 - c0, v0 - c0));
    const double reach2 = (2.0 * radius) * (2.0 * radius);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const Vec2 d = centers[j] - centers[i];
        if (dot(d, d) > reach2) continue;
        if (!polygons_disjoint(result.tubules[i], result.tubules[j])) {
          result.rejection = Rejection::kTubulesIntersect;
          result.tubules.clear();
          return result;
        }
      }
    }
  }
  return result;
}

std::size_t RasterMesh::active_count() const {
  return std::size_t(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

double RasterMesh::active_area() const {
  return double(active_count()) * edge * edge;
}

bool RasterMesh::has_full_load_path() const {
  for (int j = 0; j < elems_y; ++j) {
    bool any = false;
    for (int i = 0; i < elems_x && !any; ++i) any = is_active(i, j);
    if (!any) return false;
  }
  for (int i = 0; i < elems_x; ++i) {
    bool any = false;
    for (int j = 0; j < elems_y && !any; ++j) any = is_active(i, j);
    if (!any) return false;
  }
  return true;
}

std::string RasterMesh::to_ascii() const {
  std::string out;
  out.reserve(std::size_t(elems_y) * (elems_x + 1));
  for (int j = elems_y - 1; j >= 0; --j) {
    for (int i = 0; i < elems_x; ++i) out.push_back(is_active(i, j) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

RasterMesh rasterize(const std::vector<Polygon>& polygons, double nominal_edge) {
  if (!(nominal_edge > 0.0) || !std::isfinite(nominal_edge)) {
    throw std::invalid_argument("rasterize: edge must be positive");
  }
  RasterMesh mesh;
  mesh.elems_x = mesh.elems_y = std::max(1, int(std::lround(kSpecimenSize / nominal_edge)));
  mesh.edge = kSpecimenSize / mesh.elems_x;
  mesh.active.assign(std::size_t(mesh.elems_x) * mesh.elems_y, 1);

  for (int j = 0; j < mesh.elems_y; ++j) {
    const double cy = (j + 0.5) * mesh.edge;
    for (int i = 0; i < mesh.elems_x; ++i) {
      const double cx = (i + 0.5) * mesh.edge;
      for (const Polygon& poly : polygons) {
        if (poly.contains_strict({cx, cy})) {
          mesh.active[std::size_t(j) * mesh.elems_x + i] = 0;
          break;
        }
      }
    }
  }
  return mesh;
}

std::string design_to_json(const DesignParams& params) {
  nlohmann::json j;
  j["sides"] = params.sides;
  j["nx"] = params.nx;
  j["ny"] = params.ny;
  j["angle_deg"] = params.angle * 180.0 / std::numbers::pi;
  j["vf"] = params.vf;
  return j.dump();
}

DesignParams design_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DesignParams p;
  p.sides = j.at("sides").get<int>();
  p.nx = j.at("nx").get<int>();
  p.ny = j.at("ny").get<int>();
  double deg = j.at("angle_deg").get<double>();
  deg = std::fmod(deg, 360.0);
  if (deg < 0.0) deg += 360.0;
  p.angle = deg * std::numbers::pi / 180.0;
  if (p.angle >= kTwoPi) p.angle = 0.0;
  p.vf = j.at("vf").get<double>();
  return p;
}

}  // namespace impactforge::geom
