#pragma once

#include "common.hpp"

namespace dgs {

// Raw (pre-activation) per-Gaussian parameters. Scale activates through
// exp(), opacity through the logistic sigmoid, rotation is renormalized at
// every use; the stored values are unconstrained.
struct Gaussian {
    Vec3 mean = Vec3::Zero();
    Vec3 scale_raw = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);  // (w, x, y, z), not assumed unit
    std::vector<double> sh;            // (degree+1)^2 coefficients x 3 channels, channel-major per coeff
    double opacity_raw = 0.0;
};

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Optimizable canonical scene, stored struct-of-arrays.
struct GaussianCloud {
    int sh_degree = 3;
    std::vector<double> means;         // N x 3
    std::vector<double> scales_raw;    // N x 3
    std::vector<double> rotations;     // N x 4, (w,x,y,z)
    std::vector<double> sh;            // N x K x 3, K = (sh_degree+1)^2
    std::vector<double> opacities_raw; // N

    size_t size() const { return opacities_raw.size(); }
    int sh_coeffs() const { return sh_coeff_count(sh_degree); }

    void resize(size_t n) {
        means.resize(n * 3);
        scales_raw.resize(n * 3);
        rotations.resize(n * 4);
        sh.resize(n * sh_coeffs() * 3);
        opacities_raw.resize(n);
    }

    Vec3 mean(size_t i) const { return Vec3(means[3 * i], means[3 * i + 1], means[3 * i + 2]); }
    Vec3 scale_raw_v(size_t i) const {
        return Vec3(scales_raw[3 * i], scales_raw[3 * i + 1], scales_raw[3 * i + 2]);
    }
    Vec4 rotation_v(size_t i) const {
        return Vec4(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    }
};

/// Gradients for every parameter array of a cloud, same shapes.
struct CloudGrads {
    std::vector<double> means;
    std::vector<double> scales_raw;
    std::vector<double> rotations;
    std::vector<double> sh;
    std::vector<double> opacities_raw;

    void resize_zero(const GaussianCloud& c) {
        means.assign(c.means.size(), 0.0);
        scales_raw.assign(c.scales_raw.size(), 0.0);
        rotations.assign(c.rotations.size(), 0.0);
        sh.assign(c.sh.size(), 0.0);
        opacities_raw.assign(c.opacities_raw.size(), 0.0);
    }
};

// --- activations -----------------------------------------------------------

inline Vec3 activate_scale(const Vec3& raw) {
    return raw.array().exp();
}

inline double activate_opacity(double raw) { return sigmoid(raw); }

inline Vec4 normalize_quaternion(const Vec4& raw) {
    double n = raw.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw NumericError("cannot normalize zero/non-finite quaternion");
    }
    return raw / n;
}

/// d(q_hat)/d(q_raw) applied to an upstream gradient: (I - q q^T)/|raw|.
inline Vec4 normalize_quaternion_backward(const Vec4& raw, const Vec4& grad_unit) {
    double n = raw.norm();
    Vec4 q = raw / n;
    return (grad_unit - q * q.dot(grad_unit)) / n;
}

// --- covariance (Eq.: sigma = R S S^T R^T) ---------------------------------

/// Rotation matrix from a unit quaternion (w, x, y, z).
inline Mat3 quaternion_to_matrix(const Vec4& q) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Chain an upstream dL/dR into dL/dq for a unit quaternion q.
inline Vec4 quaternion_to_matrix_backward(const Vec4& q, const Mat3& grad_r) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y,
          2 * z, 0, -2 * x,
          -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z,
          2 * y, -4 * x, -2 * w,
          2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w,
          2 * x, 0, 2 * z,
          -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x,
          2 * w, -4 * z, 2 * y,
          2 * x, 2 * y, 0;
    return Vec4(grad_r.cwiseProduct(dw).sum(), grad_r.cwiseProduct(dx).sum(),
                grad_r.cwiseProduct(dy).sum(), grad_r.cwiseProduct(dz).sum());
}

/// Sigma = R S S^T R^T with S = diag(scale). scale must be activated
/// (positive) and rotation unit-norm.
inline Mat3 build_covariance(const Vec3& scale, const Vec4& rotation) {
    Mat3 r = quaternion_to_matrix(rotation);
    Mat3 m = r * scale.asDiagonal();
    return m * m.transpose();
}

/// Backpropagates dL/dSigma (full 3x3 sensitivity) to the activated scale
/// and the unit quaternion.
inline void build_covariance_backward(const Vec3& scale, const Vec4& rotation,
                                      const Mat3& grad_sigma,
                                      Vec3* grad_scale, Vec4* grad_rotation) {
    Mat3 r = quaternion_to_matrix(rotation);
    Mat3 m = r * scale.asDiagonal();
    Mat3 grad_m = (grad_sigma + grad_sigma.transpose()) * m;
    Mat3 grad_r = grad_m * scale.asDiagonal();
    for (int k = 0; k < 3; ++k) {
        (*grad_scale)[k] = grad_m.col(k).dot(r.col(k));
    }
    *grad_rotation = quaternion_to_matrix_backward(rotation, grad_r);
}

// --- density (Eq.: G(x) = exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))) --------------

constexpr double kCovarianceEps = 1e-9;  // added to the diagonal before inversion

/// Unnormalized Gaussian density; 1 exactly at x = mean.
inline double gaussian_density(const Vec3& x, const Vec3& mean, const Mat3& cov) {
    Mat3 reg = cov + kCovarianceEps * Mat3::Identity();
    double det = reg.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) {
        throw NumericError("covariance is singular beyond the regularization policy");
    }
    Vec3 d = x - mean;
    double q = d.dot(reg.llt().solve(d));
    return std::exp(-0.5 * q);
}

/// Analytic gradients of gaussian_density w.r.t. x, mean and covariance.
inline void gaussian_density_backward(const Vec3& x, const Vec3& mean, const Mat3& cov,
                                      double upstream, Vec3* grad_x, Vec3* grad_mean,
                                      Mat3* grad_cov) {
    Mat3 reg = cov + kCovarianceEps * Mat3::Identity();
    Mat3 inv = reg.inverse();
    Vec3 d = x - mean;
    double g = std::exp(-0.5 * d.dot(inv * d));
    Vec3 id = inv * d;
    double u = upstream * g;
    if (grad_x) *grad_x = -u * id;
    if (grad_mean) *grad_mean = u * id;
    if (grad_cov) *grad_cov = 0.5 * u * (id * id.transpose());
}

// --- spherical harmonics ----------------------------------------------------

// Real SH basis constants, band-major layout [l0, l1(-1,0,1), l2(-2..2), l3(-3..3)].
namespace sh {
constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
constexpr double kC1 = 0.4886025119029199;   // sqrt(3 / (4 pi))
constexpr double kC2[] = {1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
                          1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {0.5900435899266435, 2.890611442640554, 0.4570457994644658,
                          0.3731763325901154, 0.4570457994644658, 1.445305721320277,
                          0.5900435899266435};
}  // namespace sh

/// Fills basis[0..(degree+1)^2) with the real SH basis at a unit direction.
void eval_sh_basis(const Vec3& dir, int degree, double* basis);

/// d(basis_k)/d(dir) for every k; grad is (degree+1)^2 x 3 row-major.
void eval_sh_basis_grad(const Vec3& dir, int degree, double* basis, double* grad);

/// Contracts SH coefficients (K coeffs x 3 channels, channel-minor) with the
/// basis at view_dir, shifts by +0.5 and clamps to [0, 1].
/// `degree` must not exceed the degree the coefficients were stored with.
Vec3 eval_sh_color(const double* sh_coeffs, int stored_degree, int degree, const Vec3& view_dir);

/// As eval_sh_color but also reports the pre-clamp values, needed by the
/// backward pass (clamped channels pass no gradient).
Vec3 eval_sh_color_precompute(const double* sh_coeffs, int stored_degree, int degree,
                              const Vec3& view_dir, Vec3* pre_clamp);

/// Backward of eval_sh_color: accumulates dL/dcoeffs (same layout as input)
/// and returns dL/dview_dir. `pre_clamp` is from the forward call.
Vec3 eval_sh_color_backward(const double* sh_coeffs, int stored_degree, int degree,
                            const Vec3& view_dir, const Vec3& pre_clamp,
                            const Vec3& grad_color, double* grad_coeffs);

}  // namespace dgs
