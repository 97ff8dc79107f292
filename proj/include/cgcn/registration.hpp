#pragma once

#include <array>
#include <atomic>
#include <span>
#include <string>
#include <vector>

#include "cgcn/geometry.hpp"
#include "cgcn/graph.hpp"

namespace cgcn::reg {

/// Soft assignment of each source point to the target points.
struct Correspondence {
  nn::Tensor weights;  // N x M, rows sum to 1
  std::vector<Vec3> virtual_points;
};

/// softmax_j(desc_src_i · desc_tgt_j / (√D·τ)); virtual point = Σ_j w_ij y_j.
Correspondence soft_correspondence(const nn::Tensor& desc_src, const nn::Tensor& desc_tgt,
                                   const std::vector<Vec3>& pts_tgt, double temperature);

struct ProcrustesState {
  std::vector<Vec3> src, dst;
  std::vector<double> weights;  // normalized
  Vec3 src_centroid, dst_centroid;
  Mat3 U, V;
  Vec3 singular_values;
  double reflection = 1.0;  // det(V Uᵀ)
  RigidTransform result;
};

/// Weighted Kabsch: H = Σ w (s - c_s)(d - c_d)ᵀ = U S Vᵀ, R = V diag(1,1,det(VUᵀ)) Uᵀ,
/// t = c_d - R c_s. Throws DegenerateGeometryError when rank(H) < 2.
RigidTransform procrustes(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                          std::span<const double> weights = {}, ProcrustesState* state = nullptr);

struct ProcrustesGradient {
  std::vector<Vec3> d_src, d_dst;
  bool zeroed = false;
};

/// Reverse-mode derivative of procrustes. Spectra with singular values closer
/// than 1e-8 (relative to the largest) yield a zero gradient and bump the counter.
ProcrustesGradient procrustes_backward(const ProcrustesState& state, const Mat3& d_rotation, const Vec3& d_translation);

std::atomic<std::size_t>& degenerate_gradient_count();

/// ‖Rᵀ R_gt - I‖²_F + ‖t - t_gt‖².
double loss_rt(const RigidTransform& pred, const RigidTransform& truth);

/// Intrinsic Z-Y-X angles in degrees: R = Rz(alpha) Ry(beta) Rx(gamma).
struct EulerZYX {
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
};
EulerZYX euler_zyx(const Mat3& R);
Mat3 compose_zyx(const EulerZYX& e);

/// MSE / RMSE / MAE over all pairs and all three components. Rotation residuals
/// are Euler differences in degrees wrapped to [-180, 180).
struct RegistrationMetrics {
  double r_mse = 0, r_rmse = 0, r_mae = 0;
  double t_mse = 0, t_rmse = 0, t_mae = 0;

  static constexpr std::array<const char*, 6> kColumns{"R-MSE", "R-RMSE", "R-MAE", "T-MSE", "T-RMSE", "T-MAE"};
  std::array<double, 6> values() const { return {r_mse, r_rmse, r_mae, t_mse, t_rmse, t_mae}; }
};

RegistrationMetrics compute_metrics(std::span<const RigidTransform> predictions, std::span<const RigidTransform> truths);

struct IcpResult {
  RigidTransform transform;
  int iterations = 0;
  std::vector<double> mean_residuals;  // one per iteration, after its update
};

/// Point-to-point ICP from identity; stops when the mean residual improves by less than `tol`.
IcpResult icp_baseline(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt, int max_iters, double tol);

// Graph versions.

/// Virtual target points (N x 3) from descriptor vars.
nn::Var soft_correspondence(nn::Graph& g, nn::Var desc_src, nn::Var desc_tgt, nn::Var pts_tgt, double temperature);
/// 4 x 3 output: rows 0..2 hold R, row 3 holds t.
nn::Var procrustes(nn::Graph& g, nn::Var src, nn::Var dst);
nn::Var loss_rt(nn::Graph& g, nn::Var rt, const RigidTransform& truth);

nn::Tensor to_tensor(const std::vector<Vec3>& pts);
std::vector<Vec3> to_points(const nn::Tensor& t);
RigidTransform to_transform(const nn::Tensor& rt);

}  // namespace cgcn::reg
