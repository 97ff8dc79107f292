#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cgcn/geometry.hpp"

namespace cgcn {

/// Positions with optional unsigned unit normals and optional per-point class labels.
/// `normals` and `labels` are either empty or hold one entry per point.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<int> labels;

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_labels() const { return !labels.empty(); }

  /// Throws ParameterError if attribute sizes disagree, a coordinate is not finite,
  /// or a normal is not unit length within 1e-9.
  void validate() const;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

/// ASCII OFF. Accepts the fused "OFF<nv> <nf> <ne>" header and '#' comments;
/// polygons are fan-triangulated, trailing per-face attributes ignored.
TriangleMesh parse_off(std::string_view text);

/// ASCII rows of "x y z" or "x y z nx ny nz"; normals are re-normalized.
PointCloud parse_xyz(std::string_view text);

/// One row per point with 17 significant digits, so parse_xyz restores bits exactly.
std::string write_xyz(const PointCloud& cloud);

/// Area-uniform surface samples with face normals. Deterministic per seed.
PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// PCA normals from the k nearest neighbours (point itself included).
/// The first component with magnitude above 1e-9 is made positive.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k);

/// Centroid to origin, max norm to 1. Normals and labels untouched.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

enum class ShapeKind { kSphere = 0, kCube = 1, kCylinder = 2, kTorus = 3, kComposite = 4 };

/// Synthetic surface family. Composite places two primitive parts side by side.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  ShapeKind first = ShapeKind::kSphere;
  ShapeKind second = ShapeKind::kCube;

  /// "sphere", "cube", "cylinder", "torus", "composite" or "composite(a,b)".
  static ShapeSpec parse(std::string_view text);
  std::string name() const;
  int label() const { return static_cast<int>(kind); }
};

/// Analytic surfaces: unit sphere, cube [-1,1]^3, capped cylinder (r=1, z in [-1,1]),
/// torus (R=1, r=0.3); composite halves are scaled by 0.5 and offset along x.
PointCloud gen_synthetic(const ShapeSpec& shape, std::size_t n, double noise_sigma,
                         std::uint64_t seed);

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& T);

/// Uniform axis, angle uniform in [0, max_angle_deg]; translation uniform in
/// [-max_translation, max_translation]^3 when max_translation > 0.
RigidTransform random_rotation(double max_angle_deg, std::uint64_t seed,
                               double max_translation = 0.0);

/// Rotation by `angle_rad` about a unit `axis`.
Mat3 axis_angle(const Vec3& axis, double angle_rad);

}  // namespace cgcn
