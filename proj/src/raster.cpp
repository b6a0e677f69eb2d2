#include "raster.hpp"

#include <algorithm>

namespace dgs {

void Camera::validate() const {
    if (width <= 0 || height <= 0) {
        throw ValidationError("camera image size must be positive");
    }
    if (!(near_plane > 0.0)) {
        throw ValidationError("camera near_plane must be > 0");
    }
    Mat3 r = view_rotation();
    double dev = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(dev < 1e-8)) {
        throw ValidationError("camera view rotation is not orthonormal (max deviation " +
                              std::to_string(dev) + ")");
    }
    if (!view_transform.allFinite() || !std::isfinite(intrinsics.fx) ||
        !std::isfinite(intrinsics.fy)) {
        throw ValidationError("camera contains non-finite values");
    }
}

Camera camera_from_pose(const Intrinsics& k, const Vec4& pose_rotation,
                        const Vec3& pose_translation, int width, int height,
                        double near_plane) {
    Mat3 r = quaternion_to_matrix(normalize_quaternion(pose_rotation));
    Camera cam;
    cam.intrinsics = k;
    cam.width = width;
    cam.height = height;
    cam.near_plane = near_plane;
    // view = pose^-1
    cam.view_transform = Mat4::Identity();
    cam.view_transform.topLeftCorner<3, 3>() = r.transpose();
    cam.view_transform.topRightCorner<3, 1>() = -r.transpose() * pose_translation;
    return cam;
}

Mat23 projection_jacobian(const Vec3& mean_cam, const Intrinsics& k, double near_plane) {
    double z = mean_cam[2];
    if (z < near_plane) {
        throw ValidationError("projection_jacobian: point is behind the near plane");
    }
    Mat23 j;
    j << k.fx / z, 0, -k.fx * mean_cam[0] / (z * z),
         0, k.fy / z, -k.fy * mean_cam[1] / (z * z);
    return j;
}

Mat2 project_covariance(const Mat3& cov3d, const Mat3& view_rot, const Mat23& jacobian,
                        double lowpass) {
    Mat23 p = jacobian * view_rot;
    Mat2 c = p * cov3d * p.transpose();
    c += lowpass * Mat2::Identity();
    return c;
}

void bin_tiles(const std::vector<ProjectedGaussian>& projected, int tile_size,
               int width, int height, std::vector<std::vector<uint32_t>>* tiles,
               int* tiles_x, int* tiles_y) {
    int tx_count = (width + tile_size - 1) / tile_size;
    int ty_count = (height + tile_size - 1) / tile_size;
    *tiles_x = tx_count;
    *tiles_y = ty_count;
    tiles->assign(static_cast<size_t>(tx_count) * ty_count, {});
    for (uint32_t i = 0; i < projected.size(); ++i) {
        const auto& g = projected[i];
        int tx0 = std::max(0, static_cast<int>(std::floor(g.bbox_min[0] / tile_size)));
        int ty0 = std::max(0, static_cast<int>(std::floor(g.bbox_min[1] / tile_size)));
        int tx1 = std::min(tx_count - 1, static_cast<int>(std::floor(g.bbox_max[0] / tile_size)));
        int ty1 = std::min(ty_count - 1, static_cast<int>(std::floor(g.bbox_max[1] / tile_size)));
        for (int ty = ty0; ty <= ty1; ++ty) {
            double y0 = ty * static_cast<double>(tile_size);
            double y1 = std::min<double>(height, y0 + tile_size);
            if (!(g.bbox_max[1] >= y0 && g.bbox_min[1] < y1)) continue;
            for (int tx = tx0; tx <= tx1; ++tx) {
                double x0 = tx * static_cast<double>(tile_size);
                double x1 = std::min<double>(width, x0 + tile_size);
                if (!(g.bbox_max[0] >= x0 && g.bbox_min[0] < x1)) continue;
                (*tiles)[static_cast<size_t>(ty) * tx_count + tx].push_back(i);
            }
        }
    }
}

namespace {

// Projects every Gaussian, culls, evaluates SH colors and sorts by
// (depth, index). Fills the context buffers shared by forward and backward.
void preprocess(const GaussianCloud& cloud, const Camera& camera, const RasterConfig& cfg,
                int sh_degree, const ThreadPool& pool, RenderContext* ctx) {
    size_t n = cloud.size();
    Mat3 view_rot = camera.view_rotation();
    Vec3 view_t = camera.view_translation();
    Vec3 cam_center = camera.center();
    int coeffs = cloud.sh_coeffs();

    struct Candidate {
        bool visible = false;
        ProjectedGaussian pg;
        Vec3 mean_cam, pre_clamp, view_dir;
        double view_dist = 0;
    };
    std::vector<Candidate> cand(n);

    pool.parallel_ranges(n, [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) {
            Candidate& c = cand[i];
            Vec3 mean = cloud.mean(i);
            Vec3 mc = view_rot * mean + view_t;
            if (mc[2] < camera.near_plane) continue;

            Vec3 scale = activate_scale(cloud.scale_raw_v(i));
            Vec4 q = normalize_quaternion(cloud.rotation_v(i));
            Mat3 cov3d = build_covariance(scale, q);
            Mat23 j;
            j << camera.intrinsics.fx / mc[2], 0, -camera.intrinsics.fx * mc[0] / (mc[2] * mc[2]),
                 0, camera.intrinsics.fy / mc[2], -camera.intrinsics.fy * mc[1] / (mc[2] * mc[2]);
            Mat2 cov2d = project_covariance(cov3d, view_rot, j, cfg.lowpass);
            double det = cov2d.determinant();
            if (!(det > 0.0) || !cov2d.allFinite()) continue;

            Vec2 mean2d(camera.intrinsics.fx * mc[0] / mc[2] + camera.intrinsics.cx,
                        camera.intrinsics.fy * mc[1] / mc[2] + camera.intrinsics.cy);
            double rx = cfg.extent_sigma * std::sqrt(cov2d(0, 0));
            double ry = cfg.extent_sigma * std::sqrt(cov2d(1, 1));
            Vec2 bmin = mean2d - Vec2(rx, ry);
            Vec2 bmax = mean2d + Vec2(rx, ry);
            if (bmax[0] < 0 || bmax[1] < 0 || bmin[0] >= camera.width || bmin[1] >= camera.height) {
                continue;
            }

            Vec3 v = mean - cam_center;
            double dist = v.norm();
            Vec3 dir = dist > 0 ? Vec3(v / dist) : Vec3(0, 0, 1);
            Vec3 pre;
            Vec3 color = eval_sh_color_precompute(&cloud.sh[static_cast<size_t>(i) * coeffs * 3],
                                                  cloud.sh_degree, sh_degree, dir, &pre);

            c.visible = true;
            c.pg.index = static_cast<uint32_t>(i);
            c.pg.mean2d = mean2d;
            c.pg.cov2d = cov2d;
            c.pg.conic = cov2d.inverse();
            c.pg.depth = mc[2];
            c.pg.color = color;
            c.pg.opacity = activate_opacity(cloud.opacities_raw[i]);
            c.pg.bbox_min = bmin;
            c.pg.bbox_max = bmax;
            c.mean_cam = mc;
            c.pre_clamp = pre;
            c.view_dir = dir;
            c.view_dist = dist;
        }
    });

    ctx->projected.clear();
    ctx->mean_cam.clear();
    ctx->pre_clamp.clear();
    ctx->view_dir.clear();
    ctx->view_dist.clear();
    for (size_t i = 0; i < n; ++i) {
        if (!cand[i].visible) continue;
        ctx->projected.push_back(cand[i].pg);
        ctx->mean_cam.push_back(cand[i].mean_cam);
        ctx->pre_clamp.push_back(cand[i].pre_clamp);
        ctx->view_dir.push_back(cand[i].view_dir);
        ctx->view_dist.push_back(cand[i].view_dist);
    }

    std::vector<uint32_t> order(ctx->projected.size());
    for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        double da = ctx->projected[a].depth, db = ctx->projected[b].depth;
        if (da != db) return da < db;
        return ctx->projected[a].index < ctx->projected[b].index;
    });
    auto permute = [&order](auto& vec) {
        auto copy = vec;
        for (size_t i = 0; i < order.size(); ++i) vec[i] = copy[order[i]];
    };
    permute(ctx->projected);
    permute(ctx->mean_cam);
    permute(ctx->pre_clamp);
    permute(ctx->view_dir);
    permute(ctx->view_dist);
}

}  // namespace

RenderOutput render_forward(const GaussianCloud& cloud, const Camera& camera,
                            const Vec3& background, const RasterConfig& cfg,
                            const ThreadPool& pool, bool record, RenderContext* ctx,
                            int sh_degree_override) {
    if (cloud.size() == 0) {
        throw ValidationError("render_forward: cloud is empty");
    }
    camera.validate();
    int sh_degree = sh_degree_override < 0 ? cloud.sh_degree : sh_degree_override;
    if (sh_degree > cloud.sh_degree) {
        throw ValidationError("render_forward: sh degree override exceeds cloud degree");
    }

    RenderContext local;
    RenderContext& c = ctx ? *ctx : local;
    c.recorded = record;
    c.camera = camera;
    c.config = cfg;
    c.background = background;
    c.sh_degree_used = sh_degree;
    preprocess(cloud, camera, cfg, sh_degree, pool, &c);
    bin_tiles(c.projected, cfg.tile_size, camera.width, camera.height, &c.tiles, &c.tiles_x,
              &c.tiles_y);

    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    out.rgb.assign(static_cast<size_t>(camera.width) * camera.height * 3, 0.0);
    out.alpha.assign(static_cast<size_t>(camera.width) * camera.height, 0.0);
    out.contributors.assign(static_cast<size_t>(camera.width) * camera.height, 0);
    out.transmittance.assign(static_cast<size_t>(camera.width) * camera.height, 1.0);

    size_t n_tiles = c.tiles.size();
    pool.parallel_ranges(n_tiles, [&](size_t tb, size_t te) {
        for (size_t t = tb; t < te; ++t) {
            const auto& list = c.tiles[t];
            int tx = static_cast<int>(t % c.tiles_x);
            int ty = static_cast<int>(t / c.tiles_x);
            int px0 = tx * cfg.tile_size;
            int py0 = ty * cfg.tile_size;
            int px1 = std::min(camera.width, px0 + cfg.tile_size);
            int py1 = std::min(camera.height, py0 + cfg.tile_size);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    double cx = px + 0.5, cy = py + 0.5;
                    Vec3 acc = Vec3::Zero();
                    double tr = 1.0;
                    int count = 0;
                    for (uint32_t li : list) {
                        const ProjectedGaussian& g = c.projected[li];
                        if (cx < g.bbox_min[0] || cx > g.bbox_max[0] || cy < g.bbox_min[1] ||
                            cy > g.bbox_max[1]) {
                            continue;
                        }
                        double dx = cx - g.mean2d[0], dy = cy - g.mean2d[1];
                        double power = -0.5 * (g.conic(0, 0) * dx * dx + g.conic(1, 1) * dy * dy) -
                                       g.conic(0, 1) * dx * dy;
                        double alpha = std::min(cfg.alpha_max, g.opacity * std::exp(power));
                        if (alpha < cfg.alpha_min) continue;
                        double test_tr = tr * (1.0 - alpha);
                        if (test_tr < cfg.transmittance_min) break;
                        acc += g.color * (alpha * tr);
                        tr = test_tr;
                        ++count;
                    }
                    size_t pix = static_cast<size_t>(py) * camera.width + px;
                    for (int ch = 0; ch < 3; ++ch) {
                        out.rgb[3 * pix + ch] = acc[ch] + background[ch] * tr;
                    }
                    out.alpha[pix] = 1.0 - tr;
                    out.contributors[pix] = count;
                    out.transmittance[pix] = tr;
                }
            }
        }
    });
    return out;
}

RenderOutput render_reference(const GaussianCloud& cloud, const Camera& camera,
                              const Vec3& background, const RasterConfig& cfg,
                              int sh_degree_override) {
    if (cloud.size() == 0) {
        throw ValidationError("render_reference: cloud is empty");
    }
    camera.validate();
    int sh_degree = sh_degree_override < 0 ? cloud.sh_degree : sh_degree_override;
    ThreadPool single(1);
    RenderContext c;
    preprocess(cloud, camera, cfg, sh_degree, single, &c);

    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    out.rgb.assign(static_cast<size_t>(camera.width) * camera.height * 3, 0.0);
    out.alpha.assign(static_cast<size_t>(camera.width) * camera.height, 0.0);
    out.contributors.assign(static_cast<size_t>(camera.width) * camera.height, 0);
    out.transmittance.assign(static_cast<size_t>(camera.width) * camera.height, 1.0);

    for (int py = 0; py < camera.height; ++py) {
        for (int px = 0; px < camera.width; ++px) {
            double cx = px + 0.5, cy = py + 0.5;
            Vec3 acc = Vec3::Zero();
            double tr = 1.0;
            int count = 0;
            for (const ProjectedGaussian& g : c.projected) {  // already (depth, index) sorted
                if (cx < g.bbox_min[0] || cx > g.bbox_max[0] || cy < g.bbox_min[1] ||
                    cy > g.bbox_max[1]) {
                    continue;
                }
                double dx = cx - g.mean2d[0], dy = cy - g.mean2d[1];
                double power = -0.5 * (g.conic(0, 0) * dx * dx + g.conic(1, 1) * dy * dy) -
                               g.conic(0, 1) * dx * dy;
                double alpha = std::min(cfg.alpha_max, g.opacity * std::exp(power));
                if (alpha < cfg.alpha_min) continue;
                double test_tr = tr * (1.0 - alpha);
                if (test_tr < cfg.transmittance_min) break;
                acc += g.color * (alpha * tr);
                tr = test_tr;
                ++count;
            }
            size_t pix = static_cast<size_t>(py) * camera.width + px;
            for (int ch = 0; ch < 3; ++ch) {
                out.rgb[3 * pix + ch] = acc[ch] + background[ch] * tr;
            }
            out.alpha[pix] = 1.0 - tr;
            out.contributors[pix] = count;
            out.transmittance[pix] = tr;
        }
    }
    return out;
}

namespace {

// Per-contributor screen-space gradients accumulated in phase A of backward.
struct Grad2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

}  // namespace

RenderGrads render_backward(const GaussianCloud& cloud, const RenderContext& ctx,
                            const std::vector<double>& grad_rgb,
                            const std::vector<double>& grad_alpha,
                            const ThreadPool& pool) {
    if (!ctx.recorded) {
        throw ValidationError("render_backward: forward pass was not recorded");
    }
    const Camera& camera = ctx.camera;
    const RasterConfig& cfg = ctx.config;
    size_t n_pix = static_cast<size_t>(camera.width) * camera.height;
    if (grad_rgb.size() != n_pix * 3) {
        throw ValidationError("render_backward: grad_rgb shape mismatch");
    }
    if (!grad_alpha.empty() && grad_alpha.size() != n_pix) {
        throw ValidationError("render_backward: grad_alpha shape mismatch");
    }

    size_t n_vis = ctx.projected.size();
    size_t n_tiles = ctx.tiles.size();

    // Phase A: per-tile contributor gradients, tiles processed in parallel.
    std::vector<std::vector<Grad2D>> tile_grads(n_tiles);
    pool.parallel_ranges(n_tiles, [&](size_t tb, size_t te) {
        std::vector<double> alphas, powers;
        std::vector<uint32_t> hit;  // positions in the tile list that composited
        for (size_t t = tb; t < te; ++t) {
            const auto& list = ctx.tiles[t];
            if (list.empty()) continue;
            tile_grads[t].assign(list.size(), Grad2D{});
            auto& grads = tile_grads[t];
            int tx = static_cast<int>(t % ctx.tiles_x);
            int ty = static_cast<int>(t / ctx.tiles_x);
            int px0 = tx * cfg.tile_size;
            int py0 = ty * cfg.tile_size;
            int px1 = std::min(camera.width, px0 + cfg.tile_size);
            int py1 = std::min(camera.height, py0 + cfg.tile_size);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    size_t pix = static_cast<size_t>(py) * camera.width + px;
                    Vec3 grad_c(grad_rgb[3 * pix], grad_rgb[3 * pix + 1], grad_rgb[3 * pix + 2]);
                    double grad_a = grad_alpha.empty() ? 0.0 : grad_alpha[pix];
                    if (grad_c.isZero(0.0) && grad_a == 0.0) continue;

                    // Replay the forward walk to recover the composited set.
                    double cx = px + 0.5, cy = py + 0.5;
                    alphas.clear();
                    powers.clear();
                    hit.clear();
                    double tr = 1.0;
                    for (uint32_t li = 0; li < list.size(); ++li) {
                        const ProjectedGaussian& g = ctx.projected[list[li]];
                        if (cx < g.bbox_min[0] || cx > g.bbox_max[0] || cy < g.bbox_min[1] ||
                            cy > g.bbox_max[1]) {
                            continue;
                        }
                        double dx = cx - g.mean2d[0], dy = cy - g.mean2d[1];
                        double power = -0.5 * (g.conic(0, 0) * dx * dx + g.conic(1, 1) * dy * dy) -
                                       g.conic(0, 1) * dx * dy;
                        double alpha = std::min(cfg.alpha_max, g.opacity * std::exp(power));
                        if (alpha < cfg.alpha_min) continue;
                        double test_tr = tr * (1.0 - alpha);
                        if (test_tr < cfg.transmittance_min) break;
                        alphas.push_back(alpha);
                        powers.push_back(power);
                        hit.push_back(li);
                        tr = test_tr;
                    }
                    double t_final = tr;

                    // Back-to-front: reconstruct transmittance, accumulate the
                    // suffix color sum.
                    Vec3 suffix = Vec3::Zero();
                    double t_next = t_final;
                    for (size_t k = hit.size(); k-- > 0;) {
                        const ProjectedGaussian& g = ctx.projected[list[hit[k]]];
                        Grad2D& gg = grads[hit[k]];
                        double alpha = alphas[k];
                        double one_m = 1.0 - alpha;
                        double t_i = t_next / one_m;

                        gg.color += grad_c * (alpha * t_i);

                        double d_alpha = grad_c.dot(g.color) * t_i -
                                         grad_c.dot(suffix + ctx.background * t_final) / one_m +
                                         grad_a * (t_final / one_m);

                        if (alpha < cfg.alpha_max) {  // cap stops the gradient
                            double gval = std::exp(powers[k]);
                            gg.opacity += d_alpha * gval;
                            double d_power = d_alpha * g.opacity * gval;
                            double dx = cx - g.mean2d[0], dy = cy - g.mean2d[1];
                            gg.conic(0, 0) += -0.5 * dx * dx * d_power;
                            gg.conic(0, 1) += -0.5 * dx * dy * d_power;
                            gg.conic(1, 0) += -0.5 * dx * dy * d_power;
                            gg.conic(1, 1) += -0.5 * dy * dy * d_power;
                            double gx = g.conic(0, 0) * dx + g.conic(0, 1) * dy;
                            double gy = g.conic(0, 1) * dx + g.conic(1, 1) * dy;
                            gg.mean2d += Vec2(gx, gy) * d_power;
                        }

                        suffix += g.color * (alpha * t_i);
                        t_next = t_i;
                    }
                }
            }
        }
    });

    // Merge in tile order: bit-identical for any worker count.
    std::vector<Grad2D> vis_grads(n_vis);
    for (size_t t = 0; t < n_tiles; ++t) {
        const auto& list = ctx.tiles[t];
        const auto& grads = tile_grads[t];
        for (size_t li = 0; li < grads.size(); ++li) {
            Grad2D& dst = vis_grads[list[li]];
            const Grad2D& src = grads[li];
            dst.mean2d += src.mean2d;
            dst.conic += src.conic;
            dst.color += src.color;
            dst.opacity += src.opacity;
        }
    }

    // Phase B: chain per-Gaussian screen gradients to the raw parameters.
    RenderGrads out;
    out.cloud.resize_zero(cloud);
    out.ndc_grad_norm.assign(cloud.size(), 0.0);
    out.contributed.assign(cloud.size(), 0);

    Mat3 view_rot = camera.view_rotation();
    int coeffs = cloud.sh_coeffs();

    pool.parallel_ranges(n_vis, [&](size_t b, size_t e) {
        for (size_t v = b; v < e; ++v) {
            const ProjectedGaussian& g = ctx.projected[v];
            const Grad2D& sg = vis_grads[v];
            size_t i = g.index;
            out.contributed[i] = 1;
            out.ndc_grad_norm[i] = std::hypot(sg.mean2d[0] * camera.width * 0.5,
                                              sg.mean2d[1] * camera.height * 0.5);

            const Vec3& mc = ctx.mean_cam[v];
            Vec3 scale = activate_scale(cloud.scale_raw_v(i));
            Vec4 q_raw = cloud.rotation_v(i);
            Vec4 q = normalize_quaternion(q_raw);

            // conic -> cov2d
            Mat2 grad_cov2d = -g.conic * sg.conic * g.conic;

            // cov2d = P cov3d P^T + lowpass I, P = J * view_rot
            Mat3 cov3d = build_covariance(scale, q);
            double fx = camera.intrinsics.fx, fy = camera.intrinsics.fy;
            double z = mc[2];
            Mat23 j;
            j << fx / z, 0, -fx * mc[0] / (z * z),
                 0, fy / z, -fy * mc[1] / (z * z);
            Mat23 p = j * view_rot;
            Mat3 grad_cov3d = p.transpose() * grad_cov2d * p;
            Mat23 grad_p = (grad_cov2d + grad_cov2d.transpose()) * p * cov3d;
            Mat23 grad_j = grad_p * view_rot.transpose();

            // mean2d -> mean_cam through the pinhole Jacobian itself
            Vec3 grad_mc = j.transpose() * sg.mean2d;

            // J's own dependence on mean_cam
            double z2 = z * z, z3 = z2 * z;
            grad_mc[0] += grad_j(0, 2) * (-fx / z2);
            grad_mc[1] += grad_j(1, 2) * (-fy / z2);
            grad_mc[2] += grad_j(0, 0) * (-fx / z2) + grad_j(1, 1) * (-fy / z2) +
                          grad_j(0, 2) * (2.0 * fx * mc[0] / z3) +
                          grad_j(1, 2) * (2.0 * fy * mc[1] / z3);

            Vec3 grad_mean = view_rot.transpose() * grad_mc;

            // color -> sh coefficients and view direction
            double* grad_sh = &out.cloud.sh[static_cast<size_t>(i) * coeffs * 3];
            Vec3 grad_dir = eval_sh_color_backward(&cloud.sh[static_cast<size_t>(i) * coeffs * 3],
                                                   cloud.sh_degree, ctx.sh_degree_used,
                                                   ctx.view_dir[v], ctx.pre_clamp[v], sg.color,
                                                   grad_sh);
            if (ctx.view_dist[v] > 0) {
                const Vec3& dir = ctx.view_dir[v];
                grad_mean += (grad_dir - dir * dir.dot(grad_dir)) / ctx.view_dist[v];
            }

            // cov3d -> activated scale & unit quaternion -> raw
            Vec3 grad_scale_act;
            Vec4 grad_q_unit;
            build_covariance_backward(scale, q, grad_cov3d, &grad_scale_act, &grad_q_unit);
            Vec3 grad_scale_raw = grad_scale_act.cwiseProduct(scale);
            Vec4 grad_q_raw = normalize_quaternion_backward(q_raw, grad_q_unit);

            double opa = g.opacity;
            double grad_opa_raw = sg.opacity * opa * (1.0 - opa);

            for (int k = 0; k < 3; ++k) {
                out.cloud.means[3 * i + k] = grad_mean[k];
                out.cloud.scales_raw[3 * i + k] = grad_scale_raw[k];
            }
            for (int k = 0; k < 4; ++k) out.cloud.rotations[4 * i + k] = grad_q_raw[k];
            out.cloud.opacities_raw[i] = grad_opa_raw;
        }
    });
    return out;
}

}  // namespace dgs
