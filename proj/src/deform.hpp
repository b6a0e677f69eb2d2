#pragma once

#include "encoder.hpp"

namespace dgs {

/// gamma(p): per component, (sin(2^i pi p), cos(2^i pi p)) for i = 0..freqs-1.
/// Output length = p.size() * 2 * freqs.
std::vector<double> positional_encoding(const std::vector<double>& p, int freqs);

struct MlpConfig {
    int input_dim = 0;
    int hidden_dim = 64;
    int hidden_layers = 2;
    int output_dim = 10;  // (dx:3, dq:4, ds:3)
};

/// Fully-connected net, ReLU hidden activations, linear output. Parameters
/// live in one flat array so the optimizer can treat them as a single group.
class DeformMlp {
public:
    DeformMlp() = default;
    explicit DeformMlp(const MlpConfig& cfg);

    /// Xavier-uniform hidden layers; final layer zeroed so the field starts
    /// as the identity deformation.
    void init(Rng& rng);

    const MlpConfig& config() const { return cfg_; }
    size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    void forward(const double* in, double* out) const;

    /// Recomputes the forward pass, accumulates dL/dparams into grad_params
    /// (same layout as params) and writes dL/din.
    void backward(const double* in, const double* grad_out, double* grad_in,
                  double* grad_params) const;

private:
    struct Layer {
        size_t w_off, b_off;
        int in, out;
    };
    MlpConfig cfg_;
    std::vector<Layer> layers_;
    std::vector<double> params_;
};

/// Deformed copy of a cloud: means, rotations and raw scales shifted by the
/// MLP output; SH and opacity buffers are copied unchanged.
GaussianCloud deform_apply(const GaussianCloud& cloud, const TriPlaneHashEncoder& encoder,
                           const DeformMlp& mlp, const std::vector<double>& condition,
                           const ThreadPool& pool);

struct DeformGrads {
    CloudGrads cloud;                 // w.r.t. canonical parameters
    std::vector<double> mlp_params;   // same layout as DeformMlp::params()
    std::vector<double> tables;       // same layout as encoder tables
    std::vector<double> condition;    // dL/dcondition
};

/// Backward of deform_apply. `deformed_grads` are gradients w.r.t. the
/// deformed cloud's parameters (as produced by render_backward).
DeformGrads deform_backward(const GaussianCloud& cloud, const TriPlaneHashEncoder& encoder,
                            const DeformMlp& mlp, const std::vector<double>& condition,
                            const CloudGrads& deformed_grads, const ThreadPool& pool);

/// Condition vector for the head field: smoothed audio feature + eye feature.
std::vector<double> head_condition(const std::vector<double>& f_a, double f_e);

/// Condition vector for the torso field: positionally encoded pose
/// (unit quaternion + translation, 7 scalars, 6 frequencies -> 84).
std::vector<double> torso_condition(const Vec4& pose_rotation, const Vec3& pose_translation,
                                    int freqs = 6);

}  // namespace dgs
