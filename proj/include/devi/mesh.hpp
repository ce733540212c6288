#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "devi/errors.hpp"
#include "devi/geometry.hpp"

namespace devi {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  void validate() const {
    for (const auto& f : faces)
      for (int k : f)
        if (k < 0 || k >= static_cast<int>(vertices.size()))
          throw ShapeMismatch("face indexes invalid vertex");
  }

  TriMesh transformed(const Rotation& rot, const Vec3& trans) const {
    TriMesh out = *this;
    for (Vec3& v : out.vertices) v = rot * v + trans;
    return out;
  }
};

/// Axis-aligned box centered at the origin, each face an n x n vertex grid
/// so surface sampling and 2D tracking get interior face points too.
inline TriMesh make_box_mesh(const Vec3& dims, int n = 2) {
  TriMesh mesh;
  const Vec3 h = 0.5 * dims;
  // axis = face normal direction, sign = +1/-1
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign = -1; sign <= 1; sign += 2) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      const int base = static_cast<int>(mesh.vertices.size());
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          Vec3 p;
          p[axis] = sign * h[axis];
          p[u] = -h[u] + 2.0 * h[u] * i / (n - 1);
          p[v] = -h[v] + 2.0 * h[v] * j / (n - 1);
          mesh.vertices.push_back(p);
        }
      }
      for (int i = 0; i + 1 < n; ++i) {
        for (int j = 0; j + 1 < n; ++j) {
          const int a = base + i * n + j, b = a + 1, c = a + n, d = c + 1;
          if (sign > 0) {
            mesh.faces.push_back({a, b, d});
            mesh.faces.push_back({a, d, c});
          } else {
            mesh.faces.push_back({a, d, b});
            mesh.faces.push_back({a, c, d});
          }
        }
      }
    }
  }
  return mesh;
}

inline TriMesh make_uv_sphere(double radius, int rings = 8, int segments = 12) {
  TriMesh mesh;
  for (int r = 0; r <= rings; ++r) {
    const double phi = M_PI * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double theta = 2.0 * M_PI * s / segments;
      mesh.vertices.push_back(radius * Vec3(std::sin(phi) * std::cos(theta),
                                            std::sin(phi) * std::sin(theta), std::cos(phi)));
    }
  }
  auto idx = [&](int r, int s) { return r * segments + (s % segments); };
  for (int r = 0; r < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)});
      mesh.faces.push_back({idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)});
    }
  return mesh;
}

/// Moller-Trumbore. Returns t >= 0 along dir (unnormalized ok) or -1.
inline double ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                           const Vec3& c, double eps = 1e-12) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < eps) return -1.0;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < -1e-9 || u > 1.0 + 1e-9) return -1.0;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < -1e-9 || u + v > 1.0 + 1e-9) return -1.0;
  const double t = e2.dot(q) * inv;
  return t >= 0.0 ? t : -1.0;
}

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline Vec3 closest_point_on_mesh(const TriMesh& mesh, const Vec3& p) {
  if (mesh.faces.empty()) throw EmptySet("closest_point_on_mesh");
  Vec3 best = mesh.vertices[mesh.faces[0][0]];
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& f : mesh.faces) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]],
                                             mesh.vertices[f[2]]);
    const double d = (q - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = q;
    }
  }
  return best;
}

inline void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# format-version 1\n";
  for (const Vec3& v : mesh.vertices) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      if (!ss) throw ParseError("bad vertex line in " + path);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> f;
      ss >> f[0] >> f[1] >> f[2];
      if (!ss) throw ParseError("bad face line in " + path);
      for (int& k : f) k -= 1;
      mesh.faces.push_back(f);
    }
  }
  mesh.validate();
  return mesh;
}

}  // namespace devi
