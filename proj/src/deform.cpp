#include "deform.hpp"

namespace dgs {

std::vector<double> positional_encoding(const std::vector<double>& p, int freqs) {
    std::vector<double> out;
    out.reserve(p.size() * 2 * freqs);
    for (double v : p) {
        if (!std::isfinite(v)) {
            throw ValidationError("positional_encoding: non-finite input");
        }
        double arg = M_PI * v;
        for (int i = 0; i < freqs; ++i) {
            out.push_back(std::sin(arg));
            out.push_back(std::cos(arg));
            arg *= 2.0;
        }
    }
    return out;
}

DeformMlp::DeformMlp(const MlpConfig& cfg) : cfg_(cfg) {
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.hidden_layers < 0 || cfg.output_dim < 1) {
        throw ValidationError("mlp: invalid dimensions");
    }
    size_t off = 0;
    int in = cfg.input_dim;
    for (int l = 0; l < cfg.hidden_layers; ++l) {
        layers_.push_back({off, off + static_cast<size_t>(cfg.hidden_dim) * in, in, cfg.hidden_dim});
        off += static_cast<size_t>(cfg.hidden_dim) * in + cfg.hidden_dim;
        in = cfg.hidden_dim;
    }
    layers_.push_back({off, off + static_cast<size_t>(cfg.output_dim) * in, in, cfg.output_dim});
    off += static_cast<size_t>(cfg.output_dim) * in + cfg.output_dim;
    params_.assign(off, 0.0);
}

void DeformMlp::init(Rng& rng) {
    for (size_t l = 0; l + 1 < layers_.size(); ++l) {
        const Layer& ly = layers_[l];
        double a = std::sqrt(6.0 / (ly.in + ly.out));
        for (int k = 0; k < ly.in * ly.out; ++k) params_[ly.w_off + k] = rng.uniform(-a, a);
        for (int k = 0; k < ly.out; ++k) params_[ly.b_off + k] = 0.0;
    }
    // final layer stays zero: identity deformation at start
    const Layer& last = layers_.back();
    std::fill(params_.begin() + last.w_off, params_.begin() + last.b_off + last.out, 0.0);
}

void DeformMlp::forward(const double* in, double* out) const {
    std::vector<double> cur(in, in + cfg_.input_dim), next;
    for (size_t l = 0; l < layers_.size(); ++l) {
        const Layer& ly = layers_[l];
        next.assign(ly.out, 0.0);
        const double* w = &params_[ly.w_off];
        const double* b = &params_[ly.b_off];
        for (int o = 0; o < ly.out; ++o) {
            double acc = b[o];
            const double* wrow = w + static_cast<size_t>(o) * ly.in;
            for (int i = 0; i < ly.in; ++i) acc += wrow[i] * cur[i];
            next[o] = acc;
        }
        if (l + 1 < layers_.size()) {
            for (double& v : next) v = v > 0 ? v : 0.0;  // ReLU
        }
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out);
}

void DeformMlp::backward(const double* in, const double* grad_out, double* grad_in,
                         double* grad_params) const {
    // forward, keeping every post-activation
    std::vector<std::vector<double>> acts(layers_.size() + 1);
    acts[0].assign(in, in + cfg_.input_dim);
    for (size_t l = 0; l < layers_.size(); ++l) {
        const Layer& ly = layers_[l];
        acts[l + 1].assign(ly.out, 0.0);
        const double* w = &params_[ly.w_off];
        const double* b = &params_[ly.b_off];
        for (int o = 0; o < ly.out; ++o) {
            double acc = b[o];
            const double* wrow = w + static_cast<size_t>(o) * ly.in;
            for (int i = 0; i < ly.in; ++i) acc += wrow[i] * acts[l][i];
            acts[l + 1][o] = acc;
        }
        if (l + 1 < layers_.size()) {
            for (double& v : acts[l + 1]) v = v > 0 ? v : 0.0;
        }
    }

    std::vector<double> delta(grad_out, grad_out + cfg_.output_dim), prev;
    for (size_t l = layers_.size(); l-- > 0;) {
        const Layer& ly = layers_[l];
        if (l + 1 < layers_.size()) {  // ReLU mask of this layer's output
            for (int o = 0; o < ly.out; ++o) {
                if (acts[l + 1][o] <= 0.0) delta[o] = 0.0;
            }
        }
        const double* w = &params_[ly.w_off];
        double* gw = grad_params + ly.w_off;
        double* gb = grad_params + ly.b_off;
        prev.assign(ly.in, 0.0);
        for (int o = 0; o < ly.out; ++o) {
            double d = delta[o];
            gb[o] += d;
            const double* wrow = w + static_cast<size_t>(o) * ly.in;
            double* gwrow = gw + static_cast<size_t>(o) * ly.in;
            for (int i = 0; i < ly.in; ++i) {
                gwrow[i] += d * acts[l][i];
                prev[i] += d * wrow[i];
            }
        }
        delta.swap(prev);
    }
    std::copy(delta.begin(), delta.end(), grad_in);
}

GaussianCloud deform_apply(const GaussianCloud& cloud, const TriPlaneHashEncoder& encoder,
                           const DeformMlp& mlp, const std::vector<double>& condition,
                           const ThreadPool& pool) {
    int enc_dim = encoder.output_dim();
    if (mlp.config().input_dim != enc_dim + static_cast<int>(condition.size())) {
        throw ValidationError("deform: MLP input dim " + std::to_string(mlp.config().input_dim) +
                              " != encoder " + std::to_string(enc_dim) + " + condition " +
                              std::to_string(condition.size()));
    }
    GaussianCloud out = cloud;  // sh and opacities copied unchanged
    size_t n = cloud.size();
    pool.parallel_ranges(n, [&](size_t b, size_t e) {
        std::vector<double> z(mlp.config().input_dim);
        double delta[10];
        for (size_t i = b; i < e; ++i) {
            encoder.encode(cloud.mean(i), z.data());
            std::copy(condition.begin(), condition.end(), z.begin() + enc_dim);
            mlp.forward(z.data(), delta);
            for (int k = 0; k < 3; ++k) out.means[3 * i + k] += delta[k];
            Vec4 q_plus = cloud.rotation_v(i) + Vec4(delta[3], delta[4], delta[5], delta[6]);
            Vec4 q = normalize_quaternion(q_plus);
            for (int k = 0; k < 4; ++k) out.rotations[4 * i + k] = q[k];
            for (int k = 0; k < 3; ++k) out.scales_raw[3 * i + k] += delta[7 + k];
        }
    });
    return out;
}

DeformGrads deform_backward(const GaussianCloud& cloud, const TriPlaneHashEncoder& encoder,
                            const DeformMlp& mlp, const std::vector<double>& condition,
                            const CloudGrads& deformed_grads, const ThreadPool& pool) {
    int enc_dim = encoder.output_dim();
    int cond_dim = static_cast<int>(condition.size());
    size_t n = cloud.size();

    DeformGrads out;
    out.cloud = deformed_grads;  // dq'/dq, ds'/ds are identity; sh/opacity pass through
    out.mlp_params.assign(mlp.param_count(), 0.0);
    out.tables.assign(encoder.tables().size(), 0.0);
    out.condition.assign(cond_dim, 0.0);

    // Fixed-size blocks (independent of worker count) with per-block partial
    // buffers merged serially in block order keep the reduction bit-identical
    // for any thread count.
    constexpr size_t kBlock = 256;
    size_t n_blocks = (n + kBlock - 1) / kBlock;
    std::vector<std::vector<double>> block_mlp(n_blocks), block_cond(n_blocks);
    std::vector<EncodeTableGrads> block_tables(n_blocks);

    pool.parallel_ranges(n_blocks, [&](size_t bb, size_t be) {
        std::vector<double> z(mlp.config().input_dim);
        std::vector<double> gz(mlp.config().input_dim);
        double delta[10];
        double gout[10];
        for (size_t blk = bb; blk < be; ++blk) {
            block_mlp[blk].assign(mlp.param_count(), 0.0);
            block_cond[blk].assign(cond_dim, 0.0);
            size_t lo = blk * kBlock, hi = std::min(n, lo + kBlock);
            for (size_t i = lo; i < hi; ++i) {
                Vec3 mean = cloud.mean(i);
                encoder.encode(mean, z.data());
                std::copy(condition.begin(), condition.end(), z.begin() + enc_dim);
                mlp.forward(z.data(), delta);
                // q' = normalize(q + dq); chain the unit-quaternion gradient
                // back through the normalization.
                Vec4 q_plus = cloud.rotation_v(i) + Vec4(delta[3], delta[4], delta[5], delta[6]);
                Vec4 grot_def(deformed_grads.rotations[4 * i], deformed_grads.rotations[4 * i + 1],
                              deformed_grads.rotations[4 * i + 2],
                              deformed_grads.rotations[4 * i + 3]);
                Vec4 grot = normalize_quaternion_backward(q_plus, grot_def);
                for (int k = 0; k < 3; ++k) gout[k] = deformed_grads.means[3 * i + k];
                for (int k = 0; k < 4; ++k) gout[3 + k] = grot[k];
                for (int k = 0; k < 3; ++k) gout[7 + k] = deformed_grads.scales_raw[3 * i + k];
                for (int k = 0; k < 4; ++k) out.cloud.rotations[4 * i + k] = grot[k];
                mlp.backward(z.data(), gout, gz.data(), block_mlp[blk].data());
                Vec3 gmean = encoder.encode_backward(mean, gz.data(), &block_tables[blk]);
                for (int k = 0; k < 3; ++k) out.cloud.means[3 * i + k] += gmean[k];
                for (int k = 0; k < cond_dim; ++k) block_cond[blk][k] += gz[enc_dim + k];
            }
        }
    });

    for (size_t blk = 0; blk < n_blocks; ++blk) {
        for (size_t k = 0; k < out.mlp_params.size(); ++k) out.mlp_params[k] += block_mlp[blk][k];
        for (int k = 0; k < cond_dim; ++k) out.condition[k] += block_cond[blk][k];
        const auto& tg = block_tables[blk];
        for (size_t k = 0; k < tg.indices.size(); ++k) out.tables[tg.indices[k]] += tg.values[k];
    }
    return out;
}

std::vector<double> head_condition(const std::vector<double>& f_a, double f_e) {
    std::vector<double> c = f_a;
    c.push_back(f_e);
    return c;
}

std::vector<double> torso_condition(const Vec4& pose_rotation, const Vec3& pose_translation,
                                    int freqs) {
    Vec4 q = normalize_quaternion(pose_rotation);
    std::vector<double> p = {q[0], q[1], q[2], q[3],
                             pose_translation[0], pose_translation[1], pose_translation[2]};
    return positional_encoding(p, freqs);
}

}  // namespace dgs
