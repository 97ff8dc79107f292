#include "cgcn/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "cgcn/errors.hpp"
#include "cgcn/spatial.hpp"

namespace cgcn::reg {

using nn::Graph;
using nn::Tensor;
using nn::Var;

Correspondence soft_correspondence(const Tensor& desc_src, const Tensor& desc_tgt, const std::vector<Vec3>& pts_tgt,
                                   double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (desc_src.cols != desc_tgt.cols) throw ParameterError("descriptor dimensions differ");
  if (desc_tgt.rows != pts_tgt.size()) throw ParameterError("one target point per target descriptor");
  const double scale = 1.0 / (std::sqrt(static_cast<double>(desc_src.cols)) * temperature);
  Correspondence c;
  c.weights = Tensor(desc_src.rows, desc_tgt.rows);
  c.virtual_points.assign(desc_src.rows, Vec3::Zero());
  for (std::size_t i = 0; i < desc_src.rows; ++i) {
    auto row = c.weights.row(i);
    for (std::size_t j = 0; j < desc_tgt.rows; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < desc_src.cols; ++d) s += desc_src(i, d) * desc_tgt(j, d);
      row[j] = s * scale;
    }
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& x : row) {
      x = std::exp(x - top);
      total += x;
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] /= total;
      c.virtual_points[i] += row[j] * pts_tgt[j];
    }
  }
  return c;
}

RigidTransform procrustes(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, std::span<const double> weights,
                          ProcrustesState* state) {
  const std::size_t n = src.size();
  if (dst.size() != n) throw ParameterError("procrustes: point counts differ");
  if (n < 3) throw DegenerateGeometryError("procrustes needs at least 3 points");
  if (!weights.empty() && weights.size() != n) throw ParameterError("procrustes: one weight per point");
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  if (!weights.empty()) {
    double total = 0.0;
    for (double x : weights) {
      if (!(x >= 0.0)) throw ParameterError("procrustes weights must be non-negative");
      total += x;
    }
    if (!(total > 0.0)) throw DegenerateGeometryError("procrustes weights sum to zero");
    for (std::size_t i = 0; i < n; ++i) w[i] = weights[i] / total;
  }
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cs += w[i] * src[i];
    cd += w[i] * dst[i];
  }
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) H += w[i] * (src[i] - cs) * (dst[i] - cd).transpose();

  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s[0] > 0.0) || !(s[1] > 1e-12 * s[0]) || !H.allFinite()) {
    throw DegenerateGeometryError("cross-covariance has rank < 2");
  }
  const Mat3 U = svd.matrixU(), V = svd.matrixV();
  const double reflection = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 D = Mat3::Identity();
  D(2, 2) = reflection;
  RigidTransform T;
  T.R = V * D * U.transpose();
  T.t = cd - T.R * cs;
  if (state) {
    state->src = src;
    state->dst = dst;
    state->weights = std::move(w);
    state->src_centroid = cs;
    state->dst_centroid = cd;
    state->U = U;
    state->V = V;
    state->singular_values = s;
    state->reflection = reflection;
    state->result = T;
  }
  return T;
}

std::atomic<std::size_t>& degenerate_gradient_count() {
  static std::atomic<std::size_t> count{0};
  return count;
}

ProcrustesGradient procrustes_backward(const ProcrustesState& st, const Mat3& dR, const Vec3& dt) {
  const std::size_t n = st.src.size();
  ProcrustesGradient out;
  out.d_src.assign(n, Vec3::Zero());
  out.d_dst.assign(n, Vec3::Zero());

  const Vec3& s = st.singular_values;
  const double tol = 1e-8 * std::max(1.0, s[0]);
  if (std::abs(s[0] - s[1]) <= tol || std::abs(s[1] - s[2]) <= tol || std::abs(s[0] - s[2]) <= tol) {
    ++degenerate_gradient_count();
    out.zeroed = true;
    return out;
  }
  const Mat3& R = st.result.R;
  const Mat3& U = st.U;

  // t = c_d - R c_s contributes to dR as well.
  const Mat3 dR_total = dR - dt * st.src_centroid.transpose();

  // Hᵀ = R P with P = U Λ Uᵀ, Λ = diag(s1, s2, ±s3). For dR = R Ω,
  // Ω P + P Ω = Rᵀ dHᵀ - dH R, solved in the U basis.
  const Vec3 lambda(s[0], s[1], st.reflection * s[2]);
  const Mat3 B = U.transpose() * (R.transpose() * dR_total) * U;
  Mat3 C = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double denom = lambda[i] + lambda[j];
      if (std::abs(denom) <= tol) {
        ++degenerate_gradient_count();
        out.zeroed = true;
        out.d_src.assign(n, Vec3::Zero());
        out.d_dst.assign(n, Vec3::Zero());
        return out;
      }
      C(i, j) = B(i, j) / denom;
    }
  }
  const Mat3 E = U * C * U.transpose();
  const Mat3 dHt = R * (E - E.transpose());  // gradient w.r.t. Hᵀ
  const Mat3 dH = dHt.transpose();

  const Vec3 rt_dt = R.transpose() * dt;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = st.weights[i];
    const Vec3 sc = st.src[i] - st.src_centroid;
    const Vec3 dc = st.dst[i] - st.dst_centroid;
    // centering terms cancel because Σ w (x - c) = 0
    out.d_src[i] = w * (dH * dc) - w * rt_dt;
    out.d_dst[i] = w * (dH.transpose() * sc) + w * dt;
  }
  return out;
}

double loss_rt(const RigidTransform& pred, const RigidTransform& truth) {
  return (pred.R.transpose() * truth.R - Mat3::Identity()).squaredNorm() + (pred.t - truth.t).squaredNorm();
}

namespace {
constexpr double kDeg = 180.0 / EIGEN_PI;
}

EulerZYX euler_zyx(const Mat3& R) {
  EulerZYX e;
  const double sy = -R(2, 0);
  if (std::abs(R(2, 0)) < 1.0 - 1e-9) {
    e.beta = std::asin(std::clamp(sy, -1.0, 1.0)) * kDeg;
    e.alpha = std::atan2(R(1, 0), R(0, 0)) * kDeg;
    e.gamma = std::atan2(R(2, 1), R(2, 2)) * kDeg;
  } else {
    // gimbal lock: only alpha ∓ gamma is defined; choose gamma = 0
    e.gamma = 0.0;
    if (sy > 0.0) {
      e.beta = 90.0;
      e.alpha = std::atan2(-R(0, 1), R(1, 1)) * kDeg;
    } else {
      e.beta = -90.0;
      e.alpha = std::atan2(-R(0, 1), R(1, 1)) * kDeg;
    }
  }
  return e;
}

Mat3 compose_zyx(const EulerZYX& e) {
  return (Eigen::AngleAxisd(e.alpha / kDeg, Vec3::UnitZ()) * Eigen::AngleAxisd(e.beta / kDeg, Vec3::UnitY()) *
          Eigen::AngleAxisd(e.gamma / kDeg, Vec3::UnitX()))
      .toRotationMatrix();
}

RegistrationMetrics compute_metrics(std::span<const RigidTransform> predictions, std::span<const RigidTransform> truths) {
  if (predictions.size() != truths.size()) throw ParameterError("prediction and truth counts differ");
  if (predictions.empty()) throw ParameterError("metrics need at least one pair");
  auto wrap = [](double d) {
    d = std::fmod(d + 180.0, 360.0);
    if (d < 0.0) d += 360.0;
    return d - 180.0;
  };
  double rs = 0, ra = 0, ts = 0, ta = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = euler_zyx(predictions[i].R);
    const auto q = euler_zyx(truths[i].R);
    const double dr[3] = {wrap(p.alpha - q.alpha), wrap(p.beta - q.beta), wrap(p.gamma - q.gamma)};
    const Vec3 dtv = predictions[i].t - truths[i].t;
    for (int c = 0; c < 3; ++c) {
      rs += dr[c] * dr[c];
      ra += std::abs(dr[c]);
      ts += dtv[c] * dtv[c];
      ta += std::abs(dtv[c]);
    }
  }
  const double count = 3.0 * static_cast<double>(predictions.size());
  RegistrationMetrics m;
  m.r_mse = rs / count;
  m.r_rmse = std::sqrt(m.r_mse);
  m.r_mae = ra / count;
  m.t_mse = ts / count;
  m.t_rmse = std::sqrt(m.t_mse);
  m.t_mae = ta / count;
  return m;
}

IcpResult icp_baseline(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt, int max_iters, double tol) {
  if (src.empty() || tgt.empty()) throw ParameterError("ICP needs non-empty clouds");
  const NeighborIndex index(tgt);
  IcpResult result;
  RigidTransform current;
  std::vector<Vec3> matched(src.size());
  auto mean_residual = [&](const RigidTransform& T) {
    double total = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto hit = index.knn(T.apply(src[i]), 1);
      matched[i] = tgt[hit[0].index];
      total += hit[0].distance;
    }
    return total / static_cast<double>(src.size());
  };
  double previous = mean_residual(current);
  for (int it = 0; it < max_iters; ++it) {
    RigidTransform next;
    try {
      next = procrustes(src, matched);
    } catch (const DegenerateGeometryError&) {
      break;
    }
    const double residual = mean_residual(next);
    result.iterations = it + 1;
    result.mean_residuals.push_back(residual);
    // matched[] now holds the correspondences of `next`
    const bool improved = residual <= previous;
    if (improved) current = next;
    if (!improved || previous - residual < tol) break;
    previous = residual;
  }
  result.transform = current;
  return result;
}

Tensor to_tensor(const std::vector<Vec3>& pts) {
  Tensor t(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int c = 0; c < 3; ++c) t(i, static_cast<std::size_t>(c)) = pts[i][c];
  }
  return t;
}

std::vector<Vec3> to_points(const Tensor& t) {
  std::vector<Vec3> pts(t.rows);
  for (std::size_t i = 0; i < t.rows; ++i) pts[i] = Vec3(t(i, 0), t(i, 1), t(i, 2));
  return pts;
}

RigidTransform to_transform(const Tensor& rt) {
  RigidTransform T;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) T.R(r, c) = rt(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    T.t[r] = rt(3, static_cast<std::size_t>(r));
  }
  return T;
}

Var soft_correspondence(Graph& g, Var desc_src, Var desc_tgt, Var pts_tgt, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  const double dim = static_cast<double>(g.value(desc_src).cols);
  const Var logits = g.scale(g.matmul(desc_src, g.transpose(desc_tgt)), 1.0 / (std::sqrt(dim) * temperature));
  return g.matmul(g.softmax_rows(logits), pts_tgt);
}

Var procrustes(Graph& g, Var src, Var dst) {
  auto state = std::make_shared<ProcrustesState>();
  const RigidTransform T = procrustes(to_points(g.value(src)), to_points(g.value(dst)), {}, state.get());
  Tensor out(4, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = T.R(r, c);
    out(3, static_cast<std::size_t>(r)) = T.t[r];
  }
  return g.custom(std::move(out), {src, dst}, [src, dst, state](Graph& gg, std::uint32_t self) {
    const Tensor& G = gg.grad_of(self);
    Mat3 dR;
    Vec3 dt;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) dR(r, c) = G(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      dt[r] = G(3, static_cast<std::size_t>(r));
    }
    const auto grads = procrustes_backward(*state, dR, dt);
    if (gg.needs(src)) gg.accumulate(src, to_tensor(grads.d_src));
    if (gg.needs(dst)) gg.accumulate(dst, to_tensor(grads.d_dst));
  });
}

Var loss_rt(Graph& g, Var rt, const RigidTransform& truth) {
  const Var R = g.slice_rows(rt, 0, 3);
  const Var t = g.slice_rows(rt, 3, 1);
  Tensor rgt(3, 3), tgt(1, 3), eye(3, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rgt(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = truth.R(r, c);
    tgt(0, static_cast<std::size_t>(r)) = truth.t[r];
    eye(static_cast<std::size_t>(r), static_cast<std::size_t>(r)) = 1.0;
  }
  const Var diff = g.sub(g.matmul(g.transpose(R), g.constant(std::move(rgt))), g.constant(std::move(eye)));
  const Var dtv = g.sub(t, g.constant(std::move(tgt)));
  return g.add(g.sum(g.mul(diff, diff)), g.sum(g.mul(dtv, dtv)));
}

}  // namespace cgcn::reg
