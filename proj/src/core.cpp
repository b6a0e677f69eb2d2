#include "core.hpp"

namespace dgs {

void eval_sh_basis(const Vec3& dir, int degree, double* basis) {
    using namespace sh;
    double x = dir[0], y = dir[1], z = dir[2];
    basis[0] = kC0;
    if (degree < 1) return;
    basis[1] = kC1 * y;
    basis[2] = kC1 * z;
    basis[3] = kC1 * x;
    if (degree < 2) return;
    double xx = x * x, yy = y * y, zz = z * z;
    basis[4] = kC2[0] * x * y;
    basis[5] = kC2[1] * y * z;
    basis[6] = kC2[2] * (2.0 * zz - xx - yy);
    basis[7] = kC2[3] * x * z;
    basis[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    basis[9] = kC3[0] * y * (3.0 * xx - yy);
    basis[10] = kC3[1] * x * y * z;
    basis[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    basis[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    basis[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    basis[14] = kC3[5] * z * (xx - yy);
    basis[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void eval_sh_basis_grad(const Vec3& dir, int degree, double* basis, double* grad) {
    using namespace sh;
    double x = dir[0], y = dir[1], z = dir[2];
    int n = sh_coeff_count(degree);
    eval_sh_basis(dir, degree, basis);
    std::fill(grad, grad + 3 * n, 0.0);
    auto g = [grad](int k, int c) -> double& { return grad[3 * k + c]; };
    if (degree >= 1) {
        g(1, 1) = kC1;
        g(2, 2) = kC1;
        g(3, 0) = kC1;
    }
    if (degree >= 2) {
        g(4, 0) = kC2[0] * y;
        g(4, 1) = kC2[0] * x;
        g(5, 1) = kC2[1] * z;
        g(5, 2) = kC2[1] * y;
        g(6, 0) = kC2[2] * -2.0 * x;
        g(6, 1) = kC2[2] * -2.0 * y;
        g(6, 2) = kC2[2] * 4.0 * z;
        g(7, 0) = kC2[3] * z;
        g(7, 2) = kC2[3] * x;
        g(8, 0) = kC2[4] * 2.0 * x;
        g(8, 1) = kC2[4] * -2.0 * y;
    }
    if (degree >= 3) {
        double xx = x * x, yy = y * y, zz = z * z;
        g(9, 0) = kC3[0] * 6.0 * x * y;
        g(9, 1) = kC3[0] * (3.0 * xx - 3.0 * yy);
        g(10, 0) = kC3[1] * y * z;
        g(10, 1) = kC3[1] * x * z;
        g(10, 2) = kC3[1] * x * y;
        g(11, 0) = kC3[2] * -2.0 * x * y;
        g(11, 1) = kC3[2] * (4.0 * zz - xx - 3.0 * yy);
        g(11, 2) = kC3[2] * 8.0 * y * z;
        g(12, 0) = kC3[3] * -6.0 * x * z;
        g(12, 1) = kC3[3] * -6.0 * y * z;
        g(12, 2) = kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
        g(13, 0) = kC3[4] * (4.0 * zz - 3.0 * xx - yy);
        g(13, 1) = kC3[4] * -2.0 * x * y;
        g(13, 2) = kC3[4] * 8.0 * x * z;
        g(14, 0) = kC3[5] * 2.0 * x * z;
        g(14, 1) = kC3[5] * -2.0 * y * z;
        g(14, 2) = kC3[5] * (xx - yy);
        g(15, 0) = kC3[6] * (3.0 * xx - 3.0 * yy);
        g(15, 1) = kC3[6] * -6.0 * x * y;
    }
}

Vec3 eval_sh_color(const double* sh_coeffs, int stored_degree, int degree, const Vec3& view_dir) {
    Vec3 pre;
    return eval_sh_color_precompute(sh_coeffs, stored_degree, degree, view_dir, &pre);
}

Vec3 eval_sh_color_precompute(const double* sh_coeffs, int stored_degree, int degree,
                              const Vec3& view_dir, Vec3* pre_clamp) {
    if (degree > stored_degree) {
        throw ValidationError("eval_sh_color: requested degree " + std::to_string(degree) +
                              " exceeds stored degree " + std::to_string(stored_degree));
    }
    double basis[16];
    eval_sh_basis(view_dir, degree, basis);
    int n = sh_coeff_count(degree);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < n; ++k) {
        for (int ch = 0; ch < 3; ++ch) c[ch] += basis[k] * sh_coeffs[3 * k + ch];
    }
    c.array() += 0.5;
    *pre_clamp = c;
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

Vec3 eval_sh_color_backward(const double* sh_coeffs, int stored_degree, int degree,
                            const Vec3& view_dir, const Vec3& pre_clamp,
                            const Vec3& grad_color, double* grad_coeffs) {
    (void)stored_degree;
    double basis[16];
    double bgrad[16 * 3];
    eval_sh_basis_grad(view_dir, degree, basis, bgrad);
    int n = sh_coeff_count(degree);
    Vec3 g = grad_color;
    for (int ch = 0; ch < 3; ++ch) {
        if (pre_clamp[ch] <= 0.0 || pre_clamp[ch] >= 1.0) g[ch] = 0.0;
    }
    Vec3 grad_dir = Vec3::Zero();
    for (int k = 0; k < n; ++k) {
        double cdotg = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            grad_coeffs[3 * k + ch] += basis[k] * g[ch];
            cdotg += sh_coeffs[3 * k + ch] * g[ch];
        }
        grad_dir += cdotg * Vec3(bgrad[3 * k], bgrad[3 * k + 1], bgrad[3 * k + 2]);
    }
    return grad_dir;
}

}  // namespace dgs
