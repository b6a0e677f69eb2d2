#pragma once

#include "core.hpp"

namespace dgs {

struct Intrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
};

/// Pinhole camera. view_transform maps world to camera space; its rotation
/// block must be orthonormal.
struct Camera {
    Intrinsics intrinsics;
    Mat4 view_transform = Mat4::Identity();
    int width = 0, height = 0;
    double near_plane = 0.01;

    Mat3 view_rotation() const { return view_transform.topLeftCorner<3, 3>(); }
    Vec3 view_translation() const { return view_transform.topRightCorner<3, 1>(); }
    Vec3 center() const { return -view_rotation().transpose() * view_translation(); }

    void validate() const;
};

/// Camera from a rigid pose (rotation quaternion + translation): the view
/// transform is the inverse of the pose.
Camera camera_from_pose(const Intrinsics& k, const Vec4& pose_rotation,
                        const Vec3& pose_translation, int width, int height,
                        double near_plane = 0.01);

struct ProjectedGaussian {
    uint32_t index = 0;    // source index in the cloud
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Zero();   // after low-pass dilation
    Mat2 conic = Mat2::Zero();   // cov2d^-1
    double depth = 0;
    Vec3 color = Vec3::Zero();
    double opacity = 0;          // activated
    Vec2 bbox_min = Vec2::Zero();  // 3-sigma axis-aligned extent
    Vec2 bbox_max = Vec2::Zero();
};

struct RenderOutput {
    int width = 0, height = 0;
    std::vector<double> rgb;           // H x W x 3
    std::vector<double> alpha;         // H x W
    std::vector<int> contributors;     // H x W, composited count per pixel
    std::vector<double> transmittance; // H x W, terminal T
};

struct RasterConfig {
    int tile_size = 16;
    double lowpass = 0.3;                 // px^2 added to cov2d
    double alpha_min = 1.0 / 255.0;       // skip fainter contributions
    double alpha_max = 0.99;              // cap per-contributor alpha
    double transmittance_min = 1e-4;      // stop compositing below this
    double extent_sigma = 3.0;            // binning ellipse radius
};

/// Saved forward state consumed by render_backward.
struct RenderContext {
    bool recorded = false;
    Camera camera;
    RasterConfig config;
    Vec3 background = Vec3::Zero();
    int sh_degree_used = 0;
    std::vector<ProjectedGaussian> projected;   // depth-sorted visible gaussians
    std::vector<std::vector<uint32_t>> tiles;   // per tile: indices into `projected`
    int tiles_x = 0, tiles_y = 0;
    // per-Gaussian saved quantities for the parameter chain
    std::vector<Vec3> mean_cam;      // camera-space means of visible gaussians
    std::vector<Vec3> pre_clamp;     // SH pre-clamp colors
    std::vector<Vec3> view_dir;
    std::vector<double> view_dist;   // |mean - camera center|
};

struct RenderGrads {
    CloudGrads cloud;
    // Screen-space positional gradient stats for density control:
    // per-Gaussian accumulated |dL/d(ndc mean)| and a contributed flag.
    std::vector<double> ndc_grad_norm;
    std::vector<uint8_t> contributed;
};

/// J = d(pixel)/d(camera point) of the pinhole projection at mean_cam.
Mat23 projection_jacobian(const Vec3& mean_cam, const Intrinsics& k, double near_plane);

/// Sigma' = J W Sigma W^T J^T + lowpass * I.
Mat2 project_covariance(const Mat3& cov3d, const Mat3& view_rot, const Mat23& jacobian,
                        double lowpass);

/// Bins depth-sorted projected gaussians to the tiles their 3-sigma bounding
/// boxes overlap. tiles[ty * tiles_x + tx] lists indices into `projected`
/// in ascending (depth, index) order.
void bin_tiles(const std::vector<ProjectedGaussian>& projected, int tile_size,
               int width, int height, std::vector<std::vector<uint32_t>>* tiles,
               int* tiles_x, int* tiles_y);

/// Projects, bins and composites the cloud. When `record` is set, `ctx` keeps
/// every buffer the backward pass needs.
RenderOutput render_forward(const GaussianCloud& cloud, const Camera& camera,
                            const Vec3& background, const RasterConfig& config,
                            const ThreadPool& pool, bool record, RenderContext* ctx,
                            int sh_degree_override = -1);

/// Analytic gradients of the composited image w.r.t. every cloud parameter.
/// grad_alpha may be empty when the loss does not touch the alpha buffer.
RenderGrads render_backward(const GaussianCloud& cloud, const RenderContext& ctx,
                            const std::vector<double>& grad_rgb,
                            const std::vector<double>& grad_alpha,
                            const ThreadPool& pool);

/// Single-threaded per-pixel reference renderer (global depth sort, no
/// tiles). Oracle for the tiled path; same contributor rule.
RenderOutput render_reference(const GaussianCloud& cloud, const Camera& camera,
                              const Vec3& background, const RasterConfig& config,
                              int sh_degree_override = -1);

}  // namespace dgs
