#pragma once

// Dense-network kernel: forward, exact backprop, SGD/Adam, MSE, gradient
// checking. Shared by the local regressors and the central autoencoders.

#include <cstddef>
#include <random>
#include <vector>

#include "corrfl/errors.hpp"

namespace corrfl::nn {

// Row-major dense matrix of 64-bit reals.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
};

enum class Activation { identity, relu };

// Fully connected net. weights[k] is layer_dims[k+1] x layer_dims[k],
// biases[k] has layer_dims[k+1] entries, activations[k] applies after layer k.
struct DenseNet {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<Activation> activations;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t layer_count() const { return weights.size(); }
    std::size_t parameter_count() const;
    void validate() const;  // throws InputError on inconsistent shapes
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 8;

    void validate() const;  // throws ConfigError
};

// Same shapes as the net's weights/biases.
struct GradientSet {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    void add_scaled(const GradientSet& other, double scale);
};

GradientSet zero_gradients(const DenseNet& net);

// Per-layer pre-activations and activations retained for backprop.
struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // z_k = a_{k-1} W_k^T + b_k
    std::vector<Matrix> post;  // a_k = act(z_k)

    const Matrix& output() const { return post.back(); }
};

// First moment / second moment buffers for Adam; lazily sized to the net.
struct OptimizerState {
    std::vector<Matrix> m_w, v_w;
    std::vector<std::vector<double>> m_b, v_b;
    std::size_t step_count = 0;

    void ensure_shapes(const DenseNet& net);
};

enum class Loss { mse };

// batch is rows x input_dim; returns rows x output_dim.
Matrix forward(const DenseNet& net, const Matrix& batch);
ForwardCache forward_cached(const DenseNet& net, const Matrix& batch);

// Mean of squared element differences over all entries.
double mse(const Matrix& pred, const Matrix& target);
// d mse / d pred, same shape as pred.
Matrix mse_grad(const Matrix& pred, const Matrix& target);

// Gradients of the given loss w.r.t. every weight and bias.
GradientSet backward(const DenseNet& net, const Matrix& batch, const Matrix& targets,
                     Loss loss = Loss::mse);

// Backprop from an arbitrary output gradient; optionally reports the
// gradient w.r.t. the cached input (needed when nets are composed).
GradientSet backward_from(const DenseNet& net, const ForwardCache& cache,
                          const Matrix& output_grad, Matrix* input_grad = nullptr);

// In-place parameter update.
void step(DenseNet& net, const GradientSet& grads, const TrainConfig& cfg,
          OptimizerState& state);

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// using central finite differences of the MSE loss.
double grad_check(const DenseNet& net, const Matrix& batch, const Matrix& targets,
                  double fd_step);

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
DenseNet make_dense_net(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& acts, std::mt19937_64& rng);

// Raw matrix products used by the kernel (and by test oracles' counterparts).
// y = a (m x k) * b^T (n x k) -> m x n
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// y = a (m x k) * b (k x n) -> m x n
Matrix matmul_nn(const Matrix& a, const Matrix& b);
// y = a^T (m x k, transposed) * b (m x n) -> k x n
Matrix matmul_tn(const Matrix& a, const Matrix& b);

}  // namespace corrfl::nn
