#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <vector>

#include "devi/geometry.hpp"
#include "devi/mesh.hpp"

namespace devi {

/// Mesh with per-vertex skinning weights (convex over joints) and rest-frame
/// offsets, deformable by linear blend skinning.
struct SkinnedMesh {
  std::vector<Vec3> vertices;
  Eigen::MatrixXd weights;  // N x J
  std::vector<Vec3> offsets;
  std::vector<std::array<int, 3>> faces;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int joint_count() const { return static_cast<int>(weights.cols()); }

  void validate(double tol = 1e-6) const {
    if (weights.rows() != vertex_count() || static_cast<int>(offsets.size()) != vertex_count())
      throw ShapeMismatch("skinned mesh arrays disagree");
    for (int i = 0; i < weights.rows(); ++i) {
      if (weights.row(i).minCoeff() < -tol) throw ShapeMismatch("negative skinning weight");
      if (std::abs(weights.row(i).sum() - 1.0) > tol) throw ShapeMismatch("weights must sum to 1");
    }
    for (const auto& f : faces)
      for (int k : f)
        if (k < 0 || k >= vertex_count()) throw ShapeMismatch("face indexes invalid vertex");
  }
};

/// Blend skinning weights and offsets from an annotated source vertex set
/// onto target vertices with a Gaussian kernel over the K nearest sources.
inline SkinnedMesh transfer_skinning(const std::vector<Vec3>& target,
                                     const std::vector<Vec3>& source,
                                     const Eigen::MatrixXd& source_weights,
                                     const std::vector<Vec3>& source_offsets, int K, double sigma,
                                     std::vector<std::array<int, 3>> faces = {}) {
  if (source.empty()) throw EmptySource("transfer_skinning");
  if (source_weights.rows() != static_cast<int>(source.size()) ||
      source_offsets.size() != source.size())
    throw ShapeMismatch("source annotation sizes disagree");
  if (K < 1 || K > static_cast<int>(source.size())) throw ShapeMismatch("K out of range");
  if (!(sigma > 0)) throw NonFiniteInput("sigma must be > 0");
  for (const Vec3& v : target)
    if (!v.allFinite()) throw NonFiniteInput("target vertex");
  for (const Vec3& v : source)
    if (!v.allFinite()) throw NonFiniteInput("source vertex");

  const int J = static_cast<int>(source_weights.cols());
  SkinnedMesh out;
  out.vertices = target;
  out.weights.setZero(target.size(), J);
  out.offsets.assign(target.size(), Vec3::Zero());
  out.faces = std::move(faces);

  std::vector<int> order(source.size());
  std::vector<double> d2(source.size());
  for (size_t i = 0; i < target.size(); ++i) {
    for (size_t k = 0; k < source.size(); ++k) d2[k] = (target[i] - source[k]).squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + K, order.end(),
                      [&](int a, int b) { return d2[a] != d2[b] ? d2[a] < d2[b] : a < b; });
    // softmax of -d^2 / (2 sigma^2) over the K neighbors
    double smax = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) smax = std::max(smax, -d2[order[k]] / (2 * sigma * sigma));
    double denom = 0;
    for (int k = 0; k < K; ++k) denom += std::exp(-d2[order[k]] / (2 * sigma * sigma) - smax);
    for (int k = 0; k < K; ++k) {
      const int src = order[k];
      const double alpha = std::exp(-d2[src] / (2 * sigma * sigma) - smax) / denom;
      out.weights.row(i) += alpha * source_weights.row(src);
      out.offsets[i] += alpha * source_offsets[src];
    }
    const double wsum = out.weights.row(i).sum();
    if (wsum > 0) out.weights.row(i) /= wsum;
  }
  return out;
}

/// Linear blend skinning against the skeleton's rest (bind) pose.
inline std::vector<Vec3> lbs_deform(const SkinnedMesh& mesh, const Skeleton& skel,
                                    const Pose& pose) {
  if (mesh.joint_count() != skel.size()) throw ShapeMismatch("weight dim != joint count");
  const auto bind = forward_kinematics(skel, Pose::rest(skel));
  const auto posed = forward_kinematics(skel, pose);
  const int J = skel.size();

  std::vector<Mat3> rot(J);
  std::vector<Vec3> trans(J);
  for (int j = 0; j < J; ++j) {
    // T_j = posed_j * bind_j^-1 as a single affine transform
    const Mat3 Rp = posed[j].rot.matrix();
    const Mat3 Rb = bind[j].rot.matrix();
    rot[j] = Rp * Rb.transpose();
    trans[j] = posed[j].pos - rot[j] * bind[j].pos;
  }

  std::vector<Vec3> out(mesh.vertices.size());
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 rest = mesh.vertices[i] + mesh.offsets[i];
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = mesh.weights(i, j);
      if (w != 0.0) acc += w * (rot[j] * rest + trans[j]);
    }
    out[i] = acc;
  }
  return out;
}

inline void save_skin_sidecar(const SkinnedMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "format-version 1\n";
  out << "skinweights " << mesh.vertex_count() << " " << mesh.joint_count() << "\n";
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    for (int j = 0; j < mesh.joint_count(); ++j) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g ", mesh.weights(i, j));
      out << buf;
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", mesh.offsets[i].x(),
                  mesh.offsets[i].y(), mesh.offsets[i].z());
    out << buf;
  }
}

inline SkinnedMesh load_skinned_mesh(const std::string& obj_path, const std::string& sidecar_path) {
  const TriMesh tri = load_obj(obj_path);
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot read " + sidecar_path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("format-version", 0) != 0)
    throw ParseError(sidecar_path + ": expected leading format-version line");
  int n = 0, j = 0;
  {
    std::string tag;
    std::getline(in, line);
    std::istringstream ss(line);
    ss >> tag >> n >> j;
    if (tag != "skinweights" || !ss) throw ParseError(sidecar_path + ": bad skinweights header");
  }
  if (n != static_cast<int>(tri.vertices.size()))
    throw ShapeMismatch("sidecar vertex count != mesh vertex count");
  SkinnedMesh mesh;
  mesh.vertices = tri.vertices;
  mesh.faces = tri.faces;
  mesh.weights.setZero(n, j);
  mesh.offsets.assign(n, Vec3::Zero());
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError(sidecar_path + ": truncated");
    std::istringstream ss(line);
    for (int k = 0; k < j; ++k) ss >> mesh.weights(i, k);
    ss >> mesh.offsets[i].x() >> mesh.offsets[i].y() >> mesh.offsets[i].z();
    if (!ss) throw ParseError(sidecar_path + ": bad row");
  }
  mesh.validate();
  return mesh;
}

}  // namespace devi
