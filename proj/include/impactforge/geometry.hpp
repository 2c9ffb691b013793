#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace impactforge::geom {

// Specimen coordinates in mm: square [0,11]^2, tubules confined to the
// concentric [0.5,10.5]^2 region.
inline constexpr double kSpecimenSize = 11.0;
inline constexpr double kRegionMin = 0.5;
inline constexpr double kRegionMax = 10.5;
inline constexpr double kRegionSize = 10.0;
inline constexpr double kDefaultEdge = 0.24;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

/// The five parameters identifying one tubule structure.
/// angle is stored in radians, [0, 2*pi); degrees appear only at the CLI
/// and file boundaries.
struct DesignParams {
  int sides = 4;
  int nx = 1;
  int ny = 1;
  double angle = 0.0;
  double vf = 0.01;

  // Throws std::invalid_argument when outside the sampling ranges:
  // sides in {3..6}, nx/ny in [1,8], vf in [0.01,0.10], angle in [0,2pi).
  void validate() const;
};

bool operator==(const DesignParams& a, const DesignParams& b);

/// Simple convex polygon, vertices counter-clockwise, coordinates in mm.
struct Polygon {
  std::vector<Vec2> vertices;

  double signed_area() const;
  // Strict interior test (boundary points are outside). Assumes convex CCW.
  bool contains_strict(Vec2 p) const;
};

/// Regular sides-gon of the given area, centered at center, vertex 0 at
/// angular position angle from the +x axis.
Polygon regular_polygon(int sides, double area, double angle, Vec2 center);

/// Cell centers of the nx-by-ny uniform grid tiling the tubule region.
std::vector<Vec2> tubule_centers(int nx, int ny);

/// Strict disjointness of two convex polygons (touching counts as
/// overlap). Separating-axis test over the edge normals of both.
bool polygons_disjoint(const Polygon& a, const Polygon& b);

/// Whole polygon inside the closed tubule region (convex: vertex check).
bool polygon_in_region(const Polygon& p);

enum class Rejection : std::uint8_t {
  kNone = 0,
  kTubulesIntersect,
  kOutsideRegion,
};

const char* rejection_name(Rejection r);

struct BuildResult {
  std::vector<Polygon> tubules;
  Rejection rejection = Rejection::kNone;

  bool valid() const { return rejection == Rejection::kNone; }
};

/// Instantiate all tubule polygons for a design. Per-tubule area is
/// vf * (10/nx) * (10/ny) mm^2. Rejection (intersecting or escaping
/// tubules) is an outcome, not an error. vf == 0 is the solid control
/// design and yields an empty, valid polygon list.
BuildResult build_design(const DesignParams& params);

/// Structured quad mask over the 11x11 mm specimen. `edge` is the actual
/// element edge length 11/elems_x, derived from the nominal edge by
/// elems = round(11/nominal).
struct RasterMesh {
  int elems_x = 0;
  int elems_y = 0;
  double edge = 0.0;
  std::vector<std::uint8_t> active;  // row-major, index j*elems_x + i

  bool is_active(int i, int j) const { return active[std::size_t(j) * elems_x + i] != 0; }
  std::size_t active_count() const;
  double active_area() const;  // mm^2

  // Every element row and column must keep at least one active element,
  // otherwise the load path is severed and the design is rejected.
  bool has_full_load_path() const;

  // Debug export: '0'/'1' per element, row-major, top row first.
  std::string to_ascii() const;
};

/// Element inactive iff its centroid lies strictly inside any polygon.
RasterMesh rasterize(const std::vector<Polygon>& polygons, double nominal_edge = kDefaultEdge);

// Design file: {"sides":int,"nx":int,"ny":int,"angle_deg":float,"vf":float}
std::string design_to_json(const DesignParams& params);
DesignParams design_from_json(const std::string& text);

}  // namespace impactforge::geom
