#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <vector>

#include "devi/geometry.hpp"
#include "devi/mesh.hpp"
#include "devi/textio.hpp"

namespace devi {

/// 2D point tracks over frames with per-point visibility.
struct TrackSet {
  std::vector<std::vector<Vec2>> points;     // [frame][point]
  std::vector<std::vector<uint8_t>> visible; // [frame][point]

  int frames() const { return static_cast<int>(points.size()); }
  int point_count() const { return points.empty() ? 0 : static_cast<int>(points[0].size()); }

  void validate() const {
    if (points.size() != visible.size()) throw ShapeMismatch("tracks/visibility frame counts");
    for (int t = 0; t < frames(); ++t)
      if (static_cast<int>(points[t].size()) != point_count() ||
          points[t].size() != visible[t].size())
        throw ShapeMismatch("inconsistent point count across frames");
  }

  double visibility_fraction(int point) const {
    int n = 0;
    for (int t = 0; t < frames(); ++t) n += visible[t][point] ? 1 : 0;
    return frames() ? static_cast<double>(n) / frames() : 0.0;
  }

  /// Mean speed of the points between consecutive frames; speed[0] = 0 and
  /// is never consulted (undefined by construction).
  std::vector<double> mean_speeds() const {
    std::vector<double> s(frames(), 0.0);
    for (int t = 1; t < frames(); ++t) {
      double acc = 0;
      for (int m = 0; m < point_count(); ++m) acc += (points[t][m] - points[t - 1][m]).norm();
      s[t] = point_count() ? acc / point_count() : 0.0;
    }
    return s;
  }
};

struct RigidPose {
  Rotation rot;
  Vec3 pos = Vec3::Zero();
};

namespace detail {

/// True when `vertex` (world) is visible from the camera: in front of the
/// image plane, inside the frame, and not occluded by the mesh's own
/// triangles along the camera ray.
inline bool vertex_visible(const CameraModel& cam, const TriMesh& world_mesh, const Vec3& vertex) {
  const Vec3 c = cam.to_camera(vertex);
  if (c.z() <= kMinCameraDepth) return false;
  const Vec2 px(cam.f * c.x() / c.z() + cam.cx, cam.f * c.y() / c.z() + cam.cy);
  if (!cam.inside_image(px)) return false;
  const Vec3 origin = cam.rot.inverse() * (-cam.trans);
  const Vec3 dir = vertex - origin;  // hit at t=1 is the vertex itself
  for (const auto& f : world_mesh.faces) {
    const double t = ray_triangle(origin, dir, world_mesh.vertices[f[0]],
                                  world_mesh.vertices[f[1]], world_mesh.vertices[f[2]]);
    if (t > 0.0 && t < 1.0 - 1e-6) return false;
  }
  return true;
}

}  // namespace detail

struct ObjectReference {
  TrackSet tracks;
  std::vector<int> vertex_ids;  // into the object mesh
};

/// Build the 2D object reference: pick up to M vertices visible at the first
/// frame (depth-tested against the object's own triangles), project them at
/// every frame, and drop tracks visible in fewer than half the frames.
inline ObjectReference make_object_reference(const TriMesh& mesh,
                                             const std::vector<RigidPose>& poses,
                                             const CameraModel& cam, int M) {
  if (poses.empty()) throw InvalidScenario("object pose sequence is empty");
  if (M < 1 || M > static_cast<int>(mesh.vertices.size()))
    throw ShapeMismatch("M out of range");

  const TriMesh first = mesh.transformed(poses[0].rot, poses[0].pos);
  std::vector<int> candidates;
  for (int v = 0; v < static_cast<int>(mesh.vertices.size()); ++v)
    if (detail::vertex_visible(cam, first, first.vertices[v])) candidates.push_back(v);
  if (candidates.empty()) throw NoVisibleVertices("no object vertex visible at frame 1");

  // Deterministic even stride over the visible set.
  std::vector<int> chosen;
  const int take = std::min<int>(M, candidates.size());
  for (int k = 0; k < take; ++k)
    chosen.push_back(candidates[static_cast<size_t>(k) * candidates.size() / take]);

  const int F = static_cast<int>(poses.size());
  TrackSet tracks;
  tracks.points.assign(F, std::vector<Vec2>(chosen.size(), Vec2::Zero()));
  tracks.visible.assign(F, std::vector<uint8_t>(chosen.size(), 0));
  for (int t = 0; t < F; ++t) {
    const TriMesh posed = mesh.transformed(poses[t].rot, poses[t].pos);
    for (size_t m = 0; m < chosen.size(); ++m) {
      const Vec3 p = posed.vertices[chosen[m]];
      const Vec3 c = cam.to_camera(p);
      if (c.z() > kMinCameraDepth)
        tracks.points[t][m] =
            Vec2(cam.f * c.x() / c.z() + cam.cx, cam.f * c.y() / c.z() + cam.cy);
      tracks.visible[t][m] = detail::vertex_visible(cam, posed, p) ? 1 : 0;
    }
  }

  // Filter heavily occluded tracks.
  ObjectReference ref;
  std::vector<int> keep;
  for (size_t m = 0; m < chosen.size(); ++m)
    if (tracks.visibility_fraction(m) >= 0.5) keep.push_back(static_cast<int>(m));
  if (keep.empty()) throw NoVisibleVertices("all tracks heavily occluded");
  ref.tracks.points.assign(F, {});
  ref.tracks.visible.assign(F, {});
  for (int t = 0; t < F; ++t)
    for (int m : keep) {
      ref.tracks.points[t].push_back(tracks.points[t][m]);
      ref.tracks.visible[t].push_back(tracks.visible[t][m]);
    }
  for (int m : keep) ref.vertex_ids.push_back(chosen[m]);
  return ref;
}

/// Contact labels from object tracks and hand keypoints: frames where the
/// object moves are contact, frames where only the hand moves are not,
/// otherwise the previous label carries; a backward pass extends a contact
/// run into the preceding stationary frames.
inline std::vector<uint8_t> estimate_contact_labels(const TrackSet& object_tracks,
                                                    const TrackSet& hand_tracks, double tau) {
  if (object_tracks.frames() != hand_tracks.frames())
    throw LengthMismatch("object/hand track lengths");
  if (!(tau > 0)) throw NonFiniteInput("tau must be > 0");
  const int T = object_tracks.frames();
  std::vector<uint8_t> c(T, 0);
  if (T == 0) return c;
  const auto s_obj = object_tracks.mean_speeds();
  const auto s_hand = hand_tracks.mean_speeds();
  for (int t = 1; t < T; ++t) {
    if (s_obj[t] >= tau)
      c[t] = 1;
    else if (s_hand[t] >= tau)
      c[t] = 0;
    else
      c[t] = c[t - 1];
  }
  // Speeds are undefined at the first frame, so the backward pass stops at
  // the second.
  for (int t = T - 2; t >= 1; --t)
    if (c[t + 1] == 1 && s_obj[t] < tau && s_hand[t] < tau) c[t] = 1;
  return c;
}

/// Local wrist rotation that reproduces the hand estimator's global wrist
/// orientation under the body chain: G_e^-1 * G_w.
inline Rotation unify_wrist(const std::vector<Rotation>& chain, const Rotation& hand_global) {
  Rotation g;
  for (const Rotation& r : chain) g = g * r;
  return g.inverse() * hand_global;
}

/// The hybrid imitation target: 3D human motion, 2D object tracks, per-hand
/// contact labels, and the camera they live in.
struct HybridTarget {
  double fps = 60.0;
  std::vector<Vec3> root_pos;                    // F
  std::vector<Rotation> root_rot;                // F
  std::vector<std::vector<Vec3>> joints;         // F x J, world positions
  std::vector<std::vector<Rotation>> local_rot;  // F x J
  std::vector<int> body_ids, hand_ids;
  TrackSet tracks;
  std::vector<int> tracked_vertex_ids;
  std::array<std::vector<uint8_t>, 2> contact;  // [left, right], per frame
  CameraModel camera;
  // 2D keypoint estimates in pixels (the body/hand estimator evidence that
  // alignment refines against). Optional; ordered like body_ids/hand_ids.
  std::vector<std::vector<Vec2>> est2d_body, est2d_hand;

  int frames() const { return static_cast<int>(joints.size()); }
  int joint_count() const { return joints.empty() ? 0 : static_cast<int>(joints[0].size()); }

  Pose pose_at(int t) const {
    Pose p;
    p.root_pos = root_pos[t];
    p.root_rot = root_rot[t];
    p.local = local_rot[t];
    return p;
  }

  int first_contact_frame() const {
    for (int t = 0; t < frames(); ++t)
      if (contact[0][t] || contact[1][t]) return t;
    return -1;
  }

  void validate() const {
    const int F = frames();
    if (F < 2) throw ShapeMismatch("target needs at least 2 frames");
    if (static_cast<int>(root_pos.size()) != F || static_cast<int>(root_rot.size()) != F ||
        static_cast<int>(local_rot.size()) != F)
      throw ShapeMismatch("human arrays disagree");
    for (int t = 0; t < F; ++t)
      if (joints[t].size() != joints[0].size() || local_rot[t].size() != joints[0].size())
        throw ShapeMismatch("per-frame joint counts disagree");
    tracks.validate();
    if (tracks.frames() != F) throw ShapeMismatch("track frames != human frames");
    if (static_cast<int>(contact[0].size()) != F || static_cast<int>(contact[1].size()) != F)
      throw ShapeMismatch("contact label length");
    for (int t = 0; t < F; ++t)
      for (int m = 0; m < tracks.point_count(); ++m)
        if (tracks.visible[t][m]) {
          const Vec2& px = tracks.points[t][m];
          if (!camera.inside_image(px)) throw ShapeMismatch("visible pixel outside image");
        }
  }
};

// ---------------------------------------------------------------------------
// File formats

inline void save_tracks(const TrackSet& tracks, const CameraModel& cam, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "format-version 1\n";
  out << "tracks " << tracks.point_count() << " " << tracks.frames() << " " << cam.width << " "
      << cam.height << "\n";
  for (int t = 0; t < tracks.frames(); ++t)
    for (int m = 0; m < tracks.point_count(); ++m) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%.17g %.17g %d\n", tracks.points[t][m].x(),
                    tracks.points[t][m].y(), tracks.visible[t][m] ? 1 : 0);
      out << buf;
    }
}

inline TrackSet load_tracks(const std::string& path, int* width = nullptr, int* height = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("format-version", 0) != 0)
    throw ParseError(path + ": expected leading format-version line");
  int M = 0, T = 0, W = 0, H = 0;
  {
    std::getline(in, line);
    std::istringstream ss(line);
    std::string tag;
    ss >> tag >> M >> T >> W >> H;
    if (tag != "tracks" || !ss) throw ParseError(path + ": bad tracks header");
  }
  if (width) *width = W;
  if (height) *height = H;
  TrackSet tracks;
  tracks.points.assign(T, std::vector<Vec2>(M));
  tracks.visible.assign(T, std::vector<uint8_t>(M));
  for (int t = 0; t < T; ++t)
    for (int m = 0; m < M; ++m) {
      if (!std::getline(in, line)) throw ParseError(path + ": truncated");
      std::istringstream ss(line);
      int vis;
      ss >> tracks.points[t][m].x() >> tracks.points[t][m].y() >> vis;
      if (!ss) throw ParseError(path + ": bad row");
      tracks.visible[t][m] = vis ? 1 : 0;
    }
  return tracks;
}

inline void save_target(const HybridTarget& tgt, const std::string& path) {
  TextDoc doc;
  doc.add("human", "fps", tgt.fps);
  doc.add("human", "frames", tgt.frames());
  doc.add("human", "joints", tgt.joint_count());
  doc.add_seq("human", "body_ids", tgt.body_ids.begin(), tgt.body_ids.end());
  doc.add_seq("human", "hand_ids", tgt.hand_ids.begin(), tgt.hand_ids.end());
  for (int t = 0; t < tgt.frames(); ++t) {
    std::vector<double> row;
    row.reserve(7 + 7 * tgt.joint_count());
    const Vec3& rp = tgt.root_pos[t];
    const Rotation& rr = tgt.root_rot[t];
    row.insert(row.end(), {rp.x(), rp.y(), rp.z(), rr.w(), rr.x(), rr.y(), rr.z()});
    for (int j = 0; j < tgt.joint_count(); ++j) {
      const Vec3& p = tgt.joints[t][j];
      const Rotation& q = tgt.local_rot[t][j];
      row.insert(row.end(), {p.x(), p.y(), p.z(), q.w(), q.x(), q.y(), q.z()});
    }
    doc.add_seq("human", "frame", row.begin(), row.end());
  }
  doc.add("object", "points", tgt.tracks.point_count());
  doc.add_seq("object", "vertex_ids", tgt.tracked_vertex_ids.begin(),
              tgt.tracked_vertex_ids.end());
  for (int t = 0; t < tgt.tracks.frames(); ++t) {
    std::vector<double> row;
    for (int m = 0; m < tgt.tracks.point_count(); ++m) {
      row.push_back(tgt.tracks.points[t][m].x());
      row.push_back(tgt.tracks.points[t][m].y());
      row.push_back(tgt.tracks.visible[t][m] ? 1.0 : 0.0);
    }
    doc.add_seq("object", "frame", row.begin(), row.end());
  }
  for (int t = 0; t < tgt.frames(); ++t) {
    const double row[2] = {static_cast<double>(tgt.contact[0][t]),
                           static_cast<double>(tgt.contact[1][t])};
    doc.add_seq("contact", "psi", row, row + 2);
  }
  if (!tgt.est2d_body.empty()) {
    for (int t = 0; t < tgt.frames(); ++t) {
      std::vector<double> row;
      for (const Vec2& p : tgt.est2d_body[t]) {
        row.push_back(p.x());
        row.push_back(p.y());
      }
      doc.add_seq("align2d", "body", row.begin(), row.end());
    }
    for (int t = 0; t < tgt.frames(); ++t) {
      std::vector<double> row;
      for (const Vec2& p : tgt.est2d_hand[t]) {
        row.push_back(p.x());
        row.push_back(p.y());
      }
      doc.add_seq("align2d", "hand", row.begin(), row.end());
    }
  }
  const CameraModel& c = tgt.camera;
  doc.add("camera", "f", c.f);
  doc.add("camera", "cx", c.cx);
  doc.add("camera", "cy", c.cy);
  doc.add("camera", "width", c.width);
  doc.add("camera", "height", c.height);
  const double q[4] = {c.rot.w(), c.rot.x(), c.rot.y(), c.rot.z()};
  doc.add_seq("camera", "rot", q, q + 4);
  const double tr[3] = {c.trans.x(), c.trans.y(), c.trans.z()};
  doc.add_seq("camera", "trans", tr, tr + 3);
  doc.save(path);
}

inline HybridTarget load_target(const std::string& path) {
  const TextDoc doc = TextDoc::load(path);
  HybridTarget tgt;
  tgt.fps = doc.get_double("human", "fps");
  const int F = doc.get_int("human", "frames");
  const int J = doc.get_int("human", "joints");
  for (double v : doc.get_vec("human", "body_ids")) tgt.body_ids.push_back(static_cast<int>(v));
  for (double v : doc.get_vec("human", "hand_ids")) tgt.hand_ids.push_back(static_cast<int>(v));
  for (const std::string& line : doc.get_all("human", "frame")) {
    const auto row = TextDoc::parse_numbers(line);
    if (static_cast<int>(row.size()) != 7 + 7 * J) throw ParseError("bad human frame row");
    tgt.root_pos.emplace_back(row[0], row[1], row[2]);
    tgt.root_rot.emplace_back(row[3], row[4], row[5], row[6]);
    std::vector<Vec3> pos(J);
    std::vector<Rotation> rot(J);
    for (int j = 0; j < J; ++j) {
      const double* r = row.data() + 7 + 7 * j;
      pos[j] = Vec3(r[0], r[1], r[2]);
      rot[j] = Rotation(r[3], r[4], r[5], r[6]);
    }
    tgt.joints.push_back(std::move(pos));
    tgt.local_rot.push_back(std::move(rot));
  }
  if (tgt.frames() != F) throw ParseError("human frame count mismatch");
  const int M = doc.get_int("object", "points");
  for (double v : doc.get_vec("object", "vertex_ids"))
    tgt.tracked_vertex_ids.push_back(static_cast<int>(v));
  for (const std::string& line : doc.get_all("object", "frame")) {
    const auto row = TextDoc::parse_numbers(line);
    if (static_cast<int>(row.size()) != 3 * M) throw ParseError("bad object frame row");
    std::vector<Vec2> pts(M);
    std::vector<uint8_t> vis(M);
    for (int m = 0; m < M; ++m) {
      pts[m] = Vec2(row[3 * m], row[3 * m + 1]);
      vis[m] = row[3 * m + 2] != 0.0 ? 1 : 0;
    }
    tgt.tracks.points.push_back(std::move(pts));
    tgt.tracks.visible.push_back(std::move(vis));
  }
  for (const std::string& line : doc.get_all("contact", "psi")) {
    const auto row = TextDoc::parse_numbers(line);
    if (row.size() != 2) throw ParseError("bad psi row");
    tgt.contact[0].push_back(row[0] != 0.0 ? 1 : 0);
    tgt.contact[1].push_back(row[1] != 0.0 ? 1 : 0);
  }
  if (doc.find("align2d")) {
    auto parse2d = [&](const char* key, std::vector<std::vector<Vec2>>& dst) {
      for (const std::string& line : doc.get_all("align2d", key)) {
        const auto row = TextDoc::parse_numbers(line);
        std::vector<Vec2> pts(row.size() / 2);
        for (size_t k = 0; k < pts.size(); ++k) pts[k] = Vec2(row[2 * k], row[2 * k + 1]);
        dst.push_back(std::move(pts));
      }
    };
    parse2d("body", tgt.est2d_body);
    parse2d("hand", tgt.est2d_hand);
  }
  CameraModel cam(doc.get_int("camera", "width"), doc.get_int("camera", "height"));
  cam.f = doc.get_double("camera", "f");
  cam.cx = doc.get_double("camera", "cx");
  cam.cy = doc.get_double("camera", "cy");
  const auto q = doc.get_vec("camera", "rot");
  cam.rot = Rotation(q[0], q[1], q[2], q[3]);
  const auto tr = doc.get_vec("camera", "trans");
  cam.trans = Vec3(tr[0], tr[1], tr[2]);
  tgt.camera = cam;
  tgt.validate();
  return tgt;
}

}  // namespace devi
