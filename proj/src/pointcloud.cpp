#include "cgcn/pointcloud.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "cgcn/errors.hpp"
#include "cgcn/rng.hpp"
#include "cgcn/spatial.hpp"

namespace cgcn {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string_view strip_comment(std::string_view line) {
  const auto hash = line.find('#');
  return trim(hash == std::string_view::npos ? line : line.substr(0, hash));
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double to_double(std::string_view tok, int line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("line " + std::to_string(line) + ": not a number: '" + std::string(tok) + "'");
  }
  if (!std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": non-finite value '" + std::string(tok) + "'");
  }
  return v;
}

long long to_integer(std::string_view tok, int line) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line) + ": not an integer: '" + std::string(tok) + "'");
  }
  return v;
}

// Splits into non-empty, comment-free lines tagged with their 1-based line number.
std::vector<std::pair<int, std::string_view>> content_lines(std::string_view text) {
  std::vector<std::pair<int, std::string_view>> lines;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    auto line = strip_comment(text.substr(pos, end - pos));
    if (!line.empty()) lines.emplace_back(number, line);
    pos = end + 1;
  }
  return lines;
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 g(rng.normal(), rng.normal(), rng.normal());
    const double n = g.norm();
    if (n > 1e-12) return g / n;
  }
}

}  // namespace

void PointCloud::validate() const {
  if (!normals.empty() && normals.size() != points.size()) {
    throw ParameterError("normal count does not match point count");
  }
  if (!labels.empty() && labels.size() != points.size()) {
    throw ParameterError("label count does not match point count");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw ParameterError("non-finite point coordinate");
  }
  for (const auto& v : normals) {
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-9) throw ParameterError("normal is not unit length");
  }
}

TriangleMesh parse_off(std::string_view text) {
  const auto lines = content_lines(text);
  if (lines.empty()) throw FormatError("empty OFF input");

  auto [header_line, header] = lines.front();
  auto tokens = split_ws(header);
  if (tokens.empty() || tokens[0].substr(0, 3) != "OFF") throw FormatError("missing OFF header");

  // Counts may follow on the header line ("OFF 3 1 0"), be fused ("OFF3 1 0"),
  // or sit on the next line.
  std::vector<std::string_view> count_tokens;
  if (tokens[0].size() > 3) count_tokens.push_back(tokens[0].substr(3));
  count_tokens.insert(count_tokens.end(), tokens.begin() + 1, tokens.end());
  std::size_t next = 1;
  int count_line = header_line;
  if (count_tokens.empty()) {
    if (lines.size() < 2) throw TruncationError("OFF counts missing");
    count_line = lines[1].first;
    count_tokens = split_ws(lines[1].second);
    next = 2;
  }
  if (count_tokens.size() < 2) throw FormatError("line " + std::to_string(count_line) + ": expected vertex and face counts");
  const long long nv = to_integer(count_tokens[0], count_line);
  const long long nf = to_integer(count_tokens[1], count_line);
  if (nv < 0 || nf < 0) throw FormatError("negative element count");

  TriangleMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(nv));
  for (long long i = 0; i < nv; ++i, ++next) {
    if (next >= lines.size()) throw TruncationError("OFF ends after " + std::to_string(i) + " of " + std::to_string(nv) + " vertices");
    const auto [ln, body] = lines[next];
    const auto t = split_ws(body);
    if (t.size() < 3) throw FormatError("line " + std::to_string(ln) + ": vertex needs 3 coordinates");
    mesh.vertices.emplace_back(to_double(t[0], ln), to_double(t[1], ln), to_double(t[2], ln));
  }
  for (long long f = 0; f < nf; ++f, ++next) {
    if (next >= lines.size()) throw TruncationError("OFF ends after " + std::to_string(f) + " of " + std::to_string(nf) + " faces");
    const auto [ln, body] = lines[next];
    const auto t = split_ws(body);
    if (t.empty()) throw FormatError("line " + std::to_string(ln) + ": empty face");
    const long long arity = to_integer(t[0], ln);
    if (arity < 3) throw FormatError("line " + std::to_string(ln) + ": face with fewer than 3 vertices");
    if (static_cast<long long>(t.size()) < arity + 1) throw TruncationError("line " + std::to_string(ln) + ": face lists fewer indices than declared");
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(arity));
    for (long long j = 0; j < arity; ++j) {
      const long long v = to_integer(t[static_cast<std::size_t>(j + 1)], ln);
      if (v < 0 || v >= nv) throw IndexError("line " + std::to_string(ln) + ": vertex index " + std::to_string(v) + " out of range");
      idx[static_cast<std::size_t>(j)] = static_cast<std::uint32_t>(v);
    }
    for (std::size_t j = 1; j + 1 < idx.size(); ++j) {
      const std::array<std::uint32_t, 3> tri{idx[0], idx[j], idx[j + 1]};
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
      mesh.faces.push_back(tri);
    }
  }
  return mesh;
}

PointCloud parse_xyz(std::string_view text) {
  PointCloud cloud;
  std::size_t arity = 0;
  for (const auto& [ln, body] : content_lines(text)) {
    const auto t = split_ws(body);
    if (t.size() != 3 && t.size() != 6) {
      throw FormatError("line " + std::to_string(ln) + ": expected 3 or 6 fields, got " + std::to_string(t.size()));
    }
    if (arity == 0) arity = t.size();
    if (t.size() != arity) throw FormatError("line " + std::to_string(ln) + ": mixed 3- and 6-field rows");
    cloud.points.emplace_back(to_double(t[0], ln), to_double(t[1], ln), to_double(t[2], ln));
    if (arity == 6) {
      Vec3 n(to_double(t[3], ln), to_double(t[4], ln), to_double(t[5], ln));
      const double len = n.norm();
      if (!(len > 0.0)) throw FormatError("line " + std::to_string(ln) + ": zero-length normal");
      // already-unit normals are kept bit-exact for round trips
      cloud.normals.push_back(std::abs(len - 1.0) <= 1e-15 ? n : Vec3(n / len));
    }
  }
  if (cloud.points.empty()) throw FormatError("no points in XYZ input");
  return cloud;
}

std::string write_xyz(const PointCloud& cloud) {
  std::string out;
  char buf[32];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
    out += sep;
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const bool normals = cloud.has_normals();
    put(p.x(), ' ');
    put(p.y(), ' ');
    put(p.z(), normals ? ' ' : '\n');
    if (normals) {
      const auto& n = cloud.normals[i];
      put(n.x(), ' ');
      put(n.y(), ' ');
      put(n.z(), '\n');
    }
  }
  return out;
}

PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  std::vector<Vec3> face_normals;
  face_normals.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    for (auto v : f) {
      if (v >= mesh.vertices.size()) throw IndexError("face index out of range");
    }
    const Vec3 cross = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    const double area = 0.5 * cross.norm();
    total += area;
    cumulative.push_back(total);
    face_normals.push_back(area > 0.0 ? Vec3(cross.normalized()) : Vec3::UnitZ());
  }
  PointCloud cloud;
  if (n == 0) return cloud;
  if (!(total > 0.0)) throw DegenerateGeometryError("mesh has zero total area");

  Rng rng(seed);
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    std::size_t fi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
    // skip zero-area faces that share a cumulative value with their predecessor
    while (fi > 0 && cumulative[fi] == cumulative[fi - 1]) --fi;
    const auto& f = mesh.faces[fi];
    double u = rng.uniform();
    double v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[f[0]];
    cloud.points.push_back(a + u * (mesh.vertices[f[1]] - a) + v * (mesh.vertices[f[2]] - a));
    cloud.normals.push_back(face_normals[fi]);
  }
  return cloud;
}

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k) {
  if (k < 3) throw ParameterError("estimate_normals needs k >= 3");
  if (k > cloud.size()) throw ParameterError("estimate_normals: k exceeds point count");
  const NeighborIndex index(cloud.points);
  PointCloud out = cloud;
  out.normals.assign(cloud.size(), Vec3::UnitZ());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto hits = index.knn(cloud.points[i], k);
    Vec3 mean = Vec3::Zero();
    for (const auto& h : hits) mean += cloud.points[h.index];
    mean /= static_cast<double>(hits.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& h : hits) {
      const Vec3 d = cloud.points[h.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    Vec3 normal = solver.eigenvectors().col(0).normalized();
    for (int c = 0; c < 3; ++c) {
      if (std::abs(normal[c]) > 1e-9) {
        if (normal[c] < 0.0) normal = -normal;
        break;
      }
    }
    out.normals[i] = normal;
  }
  return out;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  PointCloud out = cloud;
  if (cloud.size() == 0) return out;
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : cloud.points) centroid += p;
  centroid /= static_cast<double>(cloud.size());
  double max_norm = 0.0;
  for (auto& p : out.points) {
    p -= centroid;
    max_norm = std::max(max_norm, p.norm());
  }
  if (max_norm > 0.0) {
    for (auto& p : out.points) p /= max_norm;
  }
  return out;
}

namespace {

ShapeKind parse_kind(std::string_view s) {
  s = trim(s);
  if (s == "sphere") return ShapeKind::kSphere;
  if (s == "cube") return ShapeKind::kCube;
  if (s == "cylinder") return ShapeKind::kCylinder;
  if (s == "torus") return ShapeKind::kTorus;
  if (s == "composite") return ShapeKind::kComposite;
  throw ParameterError("unknown shape '" + std::string(s) + "'");
}

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kTorus: return "torus";
    case ShapeKind::kComposite: return "composite";
  }
  return "?";
}

constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.3;

// One exact surface sample with its outward normal.
void sample_primitive(ShapeKind kind, Rng& rng, Vec3& p, Vec3& n) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (kind) {
    case ShapeKind::kSphere: {
      n = random_unit(rng);
      p = n;
      return;
    }
    case ShapeKind::kCube: {
      const auto face = rng.below(6);
      const int axis = static_cast<int>(face / 2);
      const double side = (face % 2 == 0) ? 1.0 : -1.0;
      p = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      p[axis] = side;
      n = Vec3::Zero();
      n[axis] = side;
      return;
    }
    case ShapeKind::kCylinder: {
      // lateral area 4π, each cap π
      const double pick = rng.uniform() * 6.0;
      const double theta = two_pi * rng.uniform();
      if (pick < 4.0) {
        p = Vec3(std::cos(theta), std::sin(theta), rng.uniform(-1.0, 1.0));
        n = Vec3(std::cos(theta), std::sin(theta), 0.0);
      } else {
        const double side = pick < 5.0 ? 1.0 : -1.0;
        const double r = std::sqrt(rng.uniform());
        p = Vec3(r * std::cos(theta), r * std::sin(theta), side);
        n = Vec3(0.0, 0.0, side);
      }
      return;
    }
    case ShapeKind::kTorus: {
      // area element ∝ (R + r cos φ); rejection on φ
      double phi;
      for (;;) {
        phi = two_pi * rng.uniform();
        if (rng.uniform() * (kTorusMajor + kTorusMinor) <= kTorusMajor + kTorusMinor * std::cos(phi)) break;
      }
      const double theta = two_pi * rng.uniform();
      const double ring = kTorusMajor + kTorusMinor * std::cos(phi);
      p = Vec3(ring * std::cos(theta), ring * std::sin(theta), kTorusMinor * std::sin(phi));
      n = Vec3(std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi));
      return;
    }
    case ShapeKind::kComposite:
      break;
  }
  throw ParameterError("composite is not a primitive");
}

}  // namespace

ShapeSpec ShapeSpec::parse(std::string_view text) {
  text = trim(text);
  ShapeSpec spec;
  const auto open = text.find('(');
  if (open == std::string_view::npos) {
    spec.kind = parse_kind(text);
    return spec;
  }
  if (trim(text.substr(0, open)) != "composite" || text.back() != ')') {
    throw ParameterError("unknown shape '" + std::string(text) + "'");
  }
  const auto inner = text.substr(open + 1, text.size() - open - 2);
  const auto comma = inner.find(',');
  if (comma == std::string_view::npos) throw ParameterError("composite needs two parts");
  spec.kind = ShapeKind::kComposite;
  spec.first = parse_kind(inner.substr(0, comma));
  spec.second = parse_kind(inner.substr(comma + 1));
  if (spec.first == ShapeKind::kComposite || spec.second == ShapeKind::kComposite) {
    throw ParameterError("composite parts must be primitives");
  }
  return spec;
}

std::string ShapeSpec::name() const {
  if (kind != ShapeKind::kComposite) return kind_name(kind);
  return std::string("composite(") + kind_name(first) + "," + kind_name(second) + ")";
}

PointCloud gen_synthetic(const ShapeSpec& shape, std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 8) throw ParameterError("gen_synthetic needs n >= 8");
  if (noise_sigma < 0.0) throw ParameterError("noise_sigma must be non-negative");
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.resize(n);
  cloud.normals.resize(n);
  cloud.labels.assign(n, shape.label());
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p, v;
    if (shape.kind == ShapeKind::kComposite) {
      const bool first = i < n / 2;
      sample_primitive(first ? shape.first : shape.second, rng, p, v);
      p = 0.5 * p + (first ? Vec3(-0.6, -0.15, 0.0) : Vec3(0.6, 0.15, 0.1));
    } else {
      sample_primitive(shape.kind, rng, p, v);
    }
    cloud.points[i] = p;
    cloud.normals[i] = v;
  }
  if (noise_sigma > 0.0) {
    for (auto& p : cloud.points) p += noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  return cloud;
}

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& T) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = T.apply(p);
  for (auto& v : out.normals) v = T.R * v;
  return out;
}

Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

RigidTransform random_rotation(double max_angle_deg, std::uint64_t seed, double max_translation) {
  if (!(max_angle_deg >= 0.0 && max_angle_deg <= 180.0)) throw ParameterError("max_angle must lie in [0, 180]");
  Rng rng(seed);
  const Vec3 axis = random_unit(rng);
  const double angle = rng.uniform() * max_angle_deg * std::numbers::pi / 180.0;
  RigidTransform T;
  T.R = angle == 0.0 ? Mat3::Identity() : axis_angle(axis, angle);
  if (max_translation > 0.0) {
    T.t = Vec3(rng.uniform(-max_translation, max_translation), rng.uniform(-max_translation, max_translation),
               rng.uniform(-max_translation, max_translation));
  }
  return T;
}

}  // namespace cgcn
