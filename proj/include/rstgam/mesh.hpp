#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/errors.hpp"

namespace rstgam {

using Point = Eigen::Vector2d;
using Triangle = std::array<int, 3>;

/// Inside tolerance on barycentric coordinates used by point location.
inline constexpr double kInsideTol = 1e-10;

struct Edge {
  int v0 = -1;  // v0 < v1
  int v1 = -1;
  int tri0 = -1;
  int tri1 = -1;  // -1 on the boundary

  bool interior() const { return tri1 >= 0; }
};

struct BaryCoord {
  int triangle = -1;
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
};

/// Conforming planar triangulation. Triangles are stored counterclockwise;
/// the edge table is derived on construction and the object is immutable.
class TriMesh {
 public:
  TriMesh() = default;

  /// Validates topology and re-orients triangles counterclockwise.
  /// Throws DataError on degenerate or non-conforming input.
  TriMesh(std::vector<Point> vertices, std::vector<Triangle> triangles)
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
    validate_and_orient();
    build_edges();
    check_conforming();
  }

  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Edge>& edges() const { return edges_; }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }

  const Point& vertex(int tri, int local) const { return vertices_[triangles_[tri][local]]; }

  double area(int tri) const {
    return 0.5 * signed_double_area(vertex(tri, 0), vertex(tri, 1), vertex(tri, 2));
  }

  double total_area() const {
    double a = 0.0;
    for (int t = 0; t < num_triangles(); ++t) a += area(t);
    return a;
  }

  int num_interior_edges() const {
    return static_cast<int>(std::count_if(edges_.begin(), edges_.end(),
                                          [](const Edge& e) { return e.interior(); }));
  }
  int num_boundary_edges() const {
    return static_cast<int>(edges_.size()) - num_interior_edges();
  }

  static double signed_double_area(const Point& a, const Point& b, const Point& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  }

 private:
  void validate_and_orient() {
    const int nv = num_vertices();
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      auto& tri = triangles_[t];
      for (int v : tri) {
        if (v < 0 || v >= nv) {
          throw DataError("triangle " + std::to_string(t) + " references vertex " +
                          std::to_string(v) + " outside [0, " + std::to_string(nv) + ")");
        }
      }
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
        throw DataError("degenerate triangle " + std::to_string(t) + ": repeated vertex");
      }
      const Point& a = vertices_[tri[0]];
      const Point& b = vertices_[tri[1]];
      const Point& c = vertices_[tri[2]];
      const double scale = std::max({(b - a).squaredNorm(), (c - a).squaredNorm(), 1e-300});
      const double area2 = signed_double_area(a, b, c);
      if (std::abs(area2) <= 1e-12 * scale) {
        throw DataError("degenerate triangle " + std::to_string(t) + ": zero area");
      }
      if (area2 < 0) std::swap(tri[1], tri[2]);
    }
  }

  void build_edges() {
    std::map<std::pair<int, int>, int> index;
    for (int t = 0; t < num_triangles(); ++t) {
      for (int e = 0; e < 3; ++e) {
        int a = triangles_[t][e];
        int b = triangles_[t][(e + 1) % 3];
        if (a > b) std::swap(a, b);
        auto [it, inserted] = index.try_emplace({a, b}, static_cast<int>(edges_.size()));
        if (inserted) {
          edges_.push_back(Edge{a, b, t, -1});
        } else {
          Edge& edge = edges_[it->second];
          if (edge.tri1 >= 0) {
            throw DataError("non-conforming mesh: edge (" + std::to_string(a) + "," +
                            std::to_string(b) + ") shared by more than two triangles");
          }
          edge.tri1 = t;
        }
      }
    }
  }

  // Interiors of distinct triangles must be disjoint and no vertex may sit
  // inside another triangle's edge (hanging node).
  void check_conforming() const {
    const int nt = num_triangles();
    std::vector<Eigen::AlignedBox2d> boxes(nt);
    double diameter = 0.0;
    for (int t = 0; t < nt; ++t) {
      for (int k = 0; k < 3; ++k) boxes[t].extend(vertex(t, k));
      diameter = std::max(diameter, boxes[t].diagonal().norm());
    }
    const double tol = 1e-10 * std::max(diameter, 1e-300);
    for (int s = 0; s < nt; ++s) {
      for (int t = s + 1; t < nt; ++t) {
        if (!boxes[s].intersects(boxes[t])) continue;
        if (interiors_overlap(s, t, tol)) {
          throw DataError("non-conforming mesh: triangles " + std::to_string(s) + " and " +
                          std::to_string(t) + " overlap");
        }
      }
    }
    for (const Edge& e : edges_) {
      const Point& a = vertices_[e.v0];
      const Point& b = vertices_[e.v1];
      const Point ab = b - a;
      const double len2 = ab.squaredNorm();
      for (int v = 0; v < num_vertices(); ++v) {
        if (v == e.v0 || v == e.v1) continue;
        const Point ap = vertices_[v] - a;
        const double s = ap.dot(ab) / len2;
        if (s <= 1e-9 || s >= 1 - 1e-9) continue;
        const double dist = std::abs(ab.x() * ap.y() - ab.y() * ap.x()) / std::sqrt(len2);
        if (dist <= tol) {
          throw DataError("non-conforming mesh: vertex " + std::to_string(v) +
                          " lies inside edge (" + std::to_string(e.v0) + "," +
                          std::to_string(e.v1) + ")");
        }
      }
    }
  }

  // Separating-axis test on the six edge normals; touching counts as disjoint.
  bool interiors_overlap(int s, int t, double tol) const {
    for (int pass = 0; pass < 2; ++pass) {
      const int owner = pass == 0 ? s : t;
      for (int e = 0; e < 3; ++e) {
        const Point d = vertex(owner, (e + 1) % 3) - vertex(owner, e);
        const Point normal(-d.y(), d.x());
        const double nn = normal.norm();
        double min_s = INFINITY, max_s = -INFINITY, min_t = INFINITY, max_t = -INFINITY;
        for (int k = 0; k < 3; ++k) {
          const double ps = normal.dot(vertex(s, k)) / nn;
          const double pt = normal.dot(vertex(t, k)) / nn;
          min_s = std::min(min_s, ps);
          max_s = std::max(max_s, ps);
          min_t = std::min(min_t, pt);
          max_t = std::max(max_t, pt);
        }
        if (max_s <= min_t + tol || max_t <= min_s + tol) return false;
      }
    }
    return true;
  }

  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Edge> edges_;
};

/// Barycentric coordinates of u relative to triangle `tri` (may be negative).
inline Eigen::Vector3d barycentric(const TriMesh& mesh, int tri, const Point& u) {
  const Point& a = mesh.vertex(tri, 0);
  const Point& b = mesh.vertex(tri, 1);
  const Point& c = mesh.vertex(tri, 2);
  const double denom = TriMesh::signed_double_area(a, b, c);
  Eigen::Vector3d out;
  out[0] = TriMesh::signed_double_area(u, b, c) / denom;
  out[1] = TriMesh::signed_double_area(a, u, c) / denom;
  out[2] = 1.0 - out[0] - out[1];
  return out;
}

/// First triangle (lowest index) containing u within `tol`, or nullopt.
inline std::optional<BaryCoord> locate(const TriMesh& mesh, const Point& u,
                                       double tol = kInsideTol) {
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const Eigen::Vector3d b = barycentric(mesh, t, u);
    if (b.minCoeff() >= -tol) return BaryCoord{t, b};
  }
  return std::nullopt;
}

/// Boundary edges chained into closed loops, each oriented as traversed by
/// its counterclockwise triangle (outer loops CCW, holes CW).
inline std::vector<std::vector<int>> boundary_loops(const TriMesh& mesh) {
  std::map<int, std::vector<int>> next;
  std::size_t remaining = 0;
  for (const Edge& e : mesh.edges()) {
    if (e.interior()) continue;
    const Triangle& tri = mesh.triangles()[e.tri0];
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k];
      const int b = tri[(k + 1) % 3];
      if ((a == e.v0 && b == e.v1) || (a == e.v1 && b == e.v0)) {
        next[a].push_back(b);
        ++remaining;
      }
    }
  }
  std::vector<std::vector<int>> loops;
  while (remaining > 0) {
    auto start = std::find_if(next.begin(), next.end(),
                              [](const auto& kv) { return !kv.second.empty(); });
    std::vector<int> loop{start->first};
    int current = start->first;
    while (true) {
      auto& outs = next[current];
      if (outs.empty()) throw DataError("boundary is not a union of closed loops");
      const int nxt = outs.back();
      outs.pop_back();
      --remaining;
      if (nxt == loop.front()) break;
      loop.push_back(nxt);
      current = nxt;
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

/// Signed shoelace area enclosed by the boundary loops.
inline double boundary_area(const TriMesh& mesh) {
  double area2 = 0.0;
  for (const auto& loop : boundary_loops(mesh)) {
    for (std::size_t k = 0; k < loop.size(); ++k) {
      const Point& p = mesh.vertices()[loop[k]];
      const Point& q = mesh.vertices()[loop[(k + 1) % loop.size()]];
      area2 += p.x() * q.y() - q.x() * p.y();
    }
  }
  return 0.5 * area2;
}

namespace detail {

inline bool next_data_line(std::istream& in, std::string& line, int& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

/// Parses the text mesh format: `nv nt`, nv lines `x y`, nt lines `i j k`
/// (0-based). `#` starts a comment.
inline TriMesh parse_mesh(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError("mesh parse error at line " + std::to_string(line_no) + ": " + what);
  };
  if (!detail::next_data_line(in, line, line_no)) fail("missing header `nv nt`");
  long nv = -1, nt = -1;
  {
    std::istringstream ss(line);
    if (!(ss >> nv >> nt) || nv < 3 || nt < 1) fail("bad header `" + line + "`");
  }
  std::vector<Point> vertices;
  vertices.reserve(nv);
  for (long k = 0; k < nv; ++k) {
    if (!detail::next_data_line(in, line, line_no)) fail("expected vertex line");
    std::istringstream ss(line);
    double x, y;
    if (!(ss >> x >> y) || !std::isfinite(x) || !std::isfinite(y)) fail("bad vertex `" + line + "`");
    vertices.emplace_back(x, y);
  }
  std::vector<Triangle> triangles;
  triangles.reserve(nt);
  for (long k = 0; k < nt; ++k) {
    if (!detail::next_data_line(in, line, line_no)) fail("expected triangle line");
    std::istringstream ss(line);
    Triangle tri;
    if (!(ss >> tri[0] >> tri[1] >> tri[2])) fail("bad triangle `" + line + "`");
    triangles.push_back(tri);
  }
  if (detail::next_data_line(in, line, line_no)) fail("trailing data `" + line + "`");
  return TriMesh(std::move(vertices), std::move(triangles));
}

inline TriMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file " + path);
  return parse_mesh(in);
}

inline void write_mesh(std::ostream& out, const TriMesh& mesh) {
  out << mesh.num_vertices() << ' ' << mesh.num_triangles() << '\n';
  out.precision(17);
  for (const Point& p : mesh.vertices()) out << p.x() << ' ' << p.y() << '\n';
  for (const Triangle& t : mesh.triangles()) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

}  // namespace rstgam
