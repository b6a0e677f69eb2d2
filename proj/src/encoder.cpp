#include "encoder.hpp"

#include <cmath>

namespace dgs {

namespace {
constexpr uint32_t kHashPrimeX = 1u;
constexpr uint32_t kHashPrimeY = 2654435761u;

// Projection: drop the orthogonal coordinate. Plane order xy, yz, xz.
inline void project_plane(const Vec3& p, int plane, double* u, double* v) {
    switch (plane) {
        case 0: *u = p[0]; *v = p[1]; break;
        case 1: *u = p[1]; *v = p[2]; break;
        default: *u = p[0]; *v = p[2]; break;
    }
}

// Which position components feed (u, v) of a plane.
inline void plane_axes(int plane, int* ax_u, int* ax_v) {
    switch (plane) {
        case 0: *ax_u = 0; *ax_v = 1; break;
        case 1: *ax_u = 1; *ax_v = 2; break;
        default: *ax_u = 0; *ax_v = 2; break;
    }
}
}  // namespace

TriPlaneHashEncoder::TriPlaneHashEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.mode == EncoderConfig::Mode::kIdentity) return;
    if (cfg.levels < 1 || cfg.features_per_level < 1) {
        throw ValidationError("encoder: levels and features_per_level must be >= 1");
    }
    if (cfg.max_resolution < cfg.base_resolution) {
        throw ValidationError("encoder: max_resolution < base_resolution");
    }
    resolutions_.resize(cfg.levels);
    if (cfg.levels == 1) {
        resolutions_[0] = cfg.base_resolution;
    } else {
        double growth = std::pow(static_cast<double>(cfg.max_resolution) / cfg.base_resolution,
                                 1.0 / (cfg.levels - 1));
        int prev = 0;
        for (int l = 0; l < cfg.levels; ++l) {
            int r = static_cast<int>(std::lround(cfg.base_resolution * std::pow(growth, l)));
            if (r <= prev) r = prev + 1;  // keep strictly increasing
            resolutions_[l] = r;
            prev = r;
        }
    }
    table_size_ = 1u << cfg.table_size_log2;
    level_stride_ = static_cast<size_t>(table_size_) * cfg.features_per_level;
    tables_.assign(3 * static_cast<size_t>(cfg.levels) * level_stride_, 0.0);
}

void TriPlaneHashEncoder::init_tables(Rng& rng) {
    for (double& t : tables_) t = rng.uniform(-cfg_.init_range, cfg_.init_range);
}

int TriPlaneHashEncoder::output_dim() const {
    if (cfg_.mode == EncoderConfig::Mode::kIdentity) return 3;
    return 3 * cfg_.levels * cfg_.features_per_level;
}

uint32_t TriPlaneHashEncoder::hash_index(int ix, int iy, int level) const {
    uint32_t res = static_cast<uint32_t>(resolutions_[level]);
    uint64_t dense = static_cast<uint64_t>(res) * res;
    if (dense <= table_size_) {
        return static_cast<uint32_t>(iy) * res + static_cast<uint32_t>(ix);
    }
    uint32_t h = static_cast<uint32_t>(ix) * kHashPrimeX ^ static_cast<uint32_t>(iy) * kHashPrimeY;
    return h & (table_size_ - 1);
}

void TriPlaneHashEncoder::corners(const Vec3& p01, int plane, int level, Corner out[4]) const {
    double u, v;
    project_plane(p01, plane, &u, &v);
    int res = resolutions_[level];
    double gu = u * (res - 1);
    double gv = v * (res - 1);
    int iu = std::min(static_cast<int>(gu), res - 2);
    int iv = std::min(static_cast<int>(gv), res - 2);
    if (iu < 0) iu = 0;
    if (iv < 0) iv = 0;
    double fu = gu - iu;
    double fv = gv - iv;
    // corners (iu, iv), (iu+1, iv), (iu, iv+1), (iu+1, iv+1)
    out[0] = {hash_index(iu, iv, level), (1 - fu) * (1 - fv), -(1 - fv), -(1 - fu)};
    out[1] = {hash_index(iu + 1, iv, level), fu * (1 - fv), (1 - fv), -fu};
    out[2] = {hash_index(iu, iv + 1, level), (1 - fu) * fv, -fv, (1 - fu)};
    out[3] = {hash_index(iu + 1, iv + 1, level), fu * fv, fv, fu};
}

void TriPlaneHashEncoder::encode(const Vec3& position, double* out) const {
    if (!position.allFinite()) {
        throw ValidationError("encode: non-finite position");
    }
    if (cfg_.mode == EncoderConfig::Mode::kIdentity) {
        for (int k = 0; k < 3; ++k) out[k] = position[k];
        return;
    }
    Vec3 p01;
    bool clamped = false;
    for (int k = 0; k < 3; ++k) {
        double t = (position[k] - cfg_.bounds_min[k]) / (cfg_.bounds_max[k] - cfg_.bounds_min[k]);
        if (t < 0.0) { t = 0.0; clamped = true; }
        if (t > 1.0) { t = 1.0; clamped = true; }
        p01[k] = t;
    }
    if (clamped) ++clamp_count_;

    int f = cfg_.features_per_level;
    size_t o = 0;
    Corner cs[4];
    for (int plane = 0; plane < 3; ++plane) {
        for (int level = 0; level < cfg_.levels; ++level) {
            corners(p01, plane, level, cs);
            const double* table =
                &tables_[(static_cast<size_t>(plane) * cfg_.levels + level) * level_stride_];
            for (int ff = 0; ff < f; ++ff) {
                double acc = 0.0;
                for (int c = 0; c < 4; ++c) {
                    acc += cs[c].w * table[static_cast<size_t>(cs[c].idx) * f + ff];
                }
                out[o++] = acc;
            }
        }
    }
}

Vec3 TriPlaneHashEncoder::encode_backward(const Vec3& position, const double* upstream,
                                          EncodeTableGrads* table_grads) const {
    if (cfg_.mode == EncoderConfig::Mode::kIdentity) {
        return Vec3(upstream[0], upstream[1], upstream[2]);
    }
    Vec3 p01;
    bool interior[3];
    for (int k = 0; k < 3; ++k) {
        double t = (position[k] - cfg_.bounds_min[k]) / (cfg_.bounds_max[k] - cfg_.bounds_min[k]);
        interior[k] = t > 0.0 && t < 1.0;
        p01[k] = std::clamp(t, 0.0, 1.0);
    }
    Vec3 grad_pos = Vec3::Zero();
    int f = cfg_.features_per_level;
    size_t o = 0;
    Corner cs[4];
    if (table_grads) {
        size_t room = static_cast<size_t>(3) * cfg_.levels * 4 * f;
        table_grads->indices.reserve(table_grads->indices.size() + room);
        table_grads->values.reserve(table_grads->values.size() + room);
    }
    for (int plane = 0; plane < 3; ++plane) {
        int ax_u, ax_v;
        plane_axes(plane, &ax_u, &ax_v);
        for (int level = 0; level < cfg_.levels; ++level) {
            corners(p01, plane, level, cs);
            double grid_scale = (resolutions_[level] - 1);
            size_t level_base = (static_cast<size_t>(plane) * cfg_.levels + level) * level_stride_;
            const double* table = &tables_[level_base];
            for (int ff = 0; ff < f; ++ff) {
                double up = upstream[o++];
                double d_u = 0.0, d_v = 0.0;
                for (int c = 0; c < 4; ++c) {
                    size_t idx = static_cast<size_t>(cs[c].idx) * f + ff;
                    if (table_grads) {
                        table_grads->indices.push_back(static_cast<uint32_t>(level_base + idx));
                        table_grads->values.push_back(up * cs[c].w);
                    }
                    double tv = table[idx];
                    d_u += cs[c].dw_du * tv;
                    d_v += cs[c].dw_dv * tv;
                }
                // chain grid coords -> [0,1] coords -> world; clamped axes
                // are flat.
                double su = grid_scale / (cfg_.bounds_max[ax_u] - cfg_.bounds_min[ax_u]);
                double sv = grid_scale / (cfg_.bounds_max[ax_v] - cfg_.bounds_min[ax_v]);
                if (interior[ax_u]) grad_pos[ax_u] += up * d_u * su;
                if (interior[ax_v]) grad_pos[ax_v] += up * d_v * sv;
            }
        }
    }
    return grad_pos;
}

}  // namespace dgs
