#pragma once

#include "core.hpp"

namespace dgs {

struct EncoderConfig {
    // "identity" bypasses the grids and returns the raw 3D position
    // (the no-hash-grid ablation).
    enum class Mode { kHash, kIdentity };
    Mode mode = Mode::kHash;
    int levels = 14;
    int features_per_level = 1;
    int base_resolution = 64;
    int max_resolution = 512;
    int table_size_log2 = 15;
    Vec3 bounds_min = Vec3(-1, -1, -1);
    Vec3 bounds_max = Vec3(1, 1, 1);
    double init_range = 1e-4;  // tables start uniform in [-range, range]
};

/// Sparse table-gradient record for one encoded position: the bilinear
/// weights scattered to 4 corners per (plane, level).
struct EncodeTableGrads {
    std::vector<uint32_t> indices;  // into the flat table array
    std::vector<double> values;
};

/// Three axis-aligned multi-resolution 2D hash grids; a 3D point projects
/// onto each plane, per-level features are bilinearly interpolated and
/// concatenated plane-major then level-major.
class TriPlaneHashEncoder {
public:
    TriPlaneHashEncoder() = default;
    explicit TriPlaneHashEncoder(const EncoderConfig& cfg);

    void init_tables(Rng& rng);

    const EncoderConfig& config() const { return cfg_; }
    int output_dim() const;
    const std::vector<int>& resolutions() const { return resolutions_; }
    uint32_t table_entries_per_level() const { return table_size_; }

    /// Flat learned parameters: [plane][level][entry][feature].
    std::vector<double>& tables() { return tables_; }
    const std::vector<double>& tables() const { return tables_; }

    /// Dense row-major index when the level grid fits the table, otherwise
    /// the spatial hash (ix * 1 xor iy * 2654435761, masked).
    uint32_t hash_index(int ix, int iy, int level) const;

    /// Feature vector at a world position (clamped into bounds; the clamp
    /// counter tracks how often that happened).
    void encode(const Vec3& position, double* out) const;

    /// Gradients of encode: scatters bilinear weights into table gradients
    /// and returns the piecewise-bilinear position gradient.
    /// `upstream` has output_dim entries.
    Vec3 encode_backward(const Vec3& position, const double* upstream,
                         EncodeTableGrads* table_grads) const;

    uint64_t clamp_warnings() const { return clamp_count_; }

private:
    struct Corner {
        uint32_t idx;
        double w;
        double dw_du, dw_dv;  // weight derivatives in grid units
    };
    // 4 corners for (plane, level) at the projected point; returns the
    // grid scale (res-1)/extent per axis for position gradients.
    void corners(const Vec3& p01, int plane, int level, Corner out[4]) const;

    EncoderConfig cfg_;
    std::vector<int> resolutions_;
    uint32_t table_size_ = 0;
    size_t level_stride_ = 0;  // entries * features
    std::vector<double> tables_;
    mutable uint64_t clamp_count_ = 0;
};

}  // namespace dgs
