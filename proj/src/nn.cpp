#include "corrfl/nn.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace corrfl::nn {

bool Matrix::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

void DenseNet::validate() const {
    if (layer_dims.size() < 2) throw InputError("net needs at least input and output layers");
    const std::size_t layers = layer_dims.size() - 1;
    if (weights.size() != layers || biases.size() != layers || activations.size() != layers)
        throw InputError("net layer bookkeeping mismatch");
    for (std::size_t k = 0; k < layers; ++k) {
        if (weights[k].rows != layer_dims[k + 1] || weights[k].cols != layer_dims[k])
            throw InputError("weight matrix " + std::to_string(k) + " has wrong shape");
        if (biases[k].size() != layer_dims[k + 1])
            throw InputError("bias vector " + std::to_string(k) + " has wrong length");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(adam_beta1 > 0 && adam_beta1 < 1)) throw ConfigError("adam_beta1 must be in (0,1)");
    if (!(adam_beta2 > 0 && adam_beta2 < 1)) throw ConfigError("adam_beta2 must be in (0,1)");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

void GradientSet::add_scaled(const GradientSet& other, double scale) {
    for (std::size_t k = 0; k < weights.size(); ++k)
        for (std::size_t i = 0; i < weights[k].size(); ++i)
            weights[k].data[i] += scale * other.weights[k].data[i];
    for (std::size_t k = 0; k < biases.size(); ++k)
        for (std::size_t i = 0; i < biases[k].size(); ++i)
            biases[k][i] += scale * other.biases[k][i];
}

GradientSet zero_gradients(const DenseNet& net) {
    GradientSet g;
    for (const auto& w : net.weights) g.weights.emplace_back(w.rows, w.cols);
    for (const auto& b : net.biases) g.biases.emplace_back(b.size(), 0.0);
    return g;
}

void OptimizerState::ensure_shapes(const DenseNet& net) {
    if (m_w.size() == net.weights.size()) return;
    m_w.clear(); v_w.clear(); m_b.clear(); v_b.clear();
    for (const auto& w : net.weights) {
        m_w.emplace_back(w.rows, w.cols);
        v_w.emplace_back(w.rows, w.cols);
    }
    for (const auto& b : net.biases) {
        m_b.emplace_back(b.size(), 0.0);
        v_b.emplace_back(b.size(), 0.0);
    }
    step_count = 0;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    // a: m x k, b: n x k, out: m x n; contiguous row dots.
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* br = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    // a: m x k, b: k x n, out: m x n; ikj order keeps b access contiguous.
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            const double* br = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    // a: m x k (used transposed), b: m x n, out: k x n.
    Matrix out(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        const double* br = b.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            double* orow = out.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

namespace {

void apply_activation(Matrix& m, Activation act) {
    if (act == Activation::identity) return;
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] += bias[j];
    }
}

void check_forward_input(const DenseNet& net, const Matrix& batch) {
    if (batch.cols != net.input_dim())
        throw InputError("forward: batch has " + std::to_string(batch.cols) +
                         " columns, net expects " + std::to_string(net.input_dim()));
}

}  // namespace

ForwardCache forward_cached(const DenseNet& net, const Matrix& batch) {
    check_forward_input(net, batch);
    ForwardCache cache;
    cache.input = batch;
    const Matrix* cur = &cache.input;
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
        Matrix z = matmul_nt(*cur, net.weights[k]);
        add_bias_rows(z, net.biases[k]);
        cache.pre.push_back(z);
        apply_activation(z, net.activations[k]);
        cache.post.push_back(std::move(z));
        cur = &cache.post.back();
    }
    return cache;
}

Matrix forward(const DenseNet& net, const Matrix& batch) {
    check_forward_input(net, batch);
    Matrix cur = batch;
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
        Matrix z = matmul_nt(cur, net.weights[k]);
        add_bias_rows(z, net.biases[k]);
        apply_activation(z, net.activations[k]);
        cur = std::move(z);
    }
    if (!cur.all_finite()) throw InputError("forward produced non-finite output");
    return cur;
}

double mse(const Matrix& pred, const Matrix& target) {
    if (!pred.same_shape(target)) throw InputError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

Matrix mse_grad(const Matrix& pred, const Matrix& target) {
    if (!pred.same_shape(target)) throw InputError("mse_grad: shape mismatch");
    Matrix g(pred.rows, pred.cols);
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        g.data[i] = scale * (pred.data[i] - target.data[i]);
    return g;
}

GradientSet backward_from(const DenseNet& net, const ForwardCache& cache,
                          const Matrix& output_grad, Matrix* input_grad) {
    if (!output_grad.same_shape(cache.post.back()))
        throw InputError("backward_from: output gradient shape mismatch");
    GradientSet grads = zero_gradients(net);
    Matrix delta = output_grad;
    for (std::size_t k = net.layer_count(); k-- > 0;) {
        if (net.activations[k] == Activation::relu) {
            const Matrix& z = cache.pre[k];
            for (std::size_t i = 0; i < delta.size(); ++i)
                if (z.data[i] <= 0.0) delta.data[i] = 0.0;
        }
        const Matrix& below = k == 0 ? cache.input : cache.post[k - 1];
        grads.weights[k] = matmul_tn(delta, below);  // (out x B)^T via tn form
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* r = delta.row(i);
            for (std::size_t j = 0; j < delta.cols; ++j) grads.biases[k][j] += r[j];
        }
        if (k > 0 || input_grad != nullptr) {
            Matrix next = matmul_nn(delta, net.weights[k]);
            if (k == 0 && input_grad != nullptr) *input_grad = std::move(next);
            else delta = std::move(next);
        }
    }
    return grads;
}

GradientSet backward(const DenseNet& net, const Matrix& batch, const Matrix& targets,
                     Loss loss) {
    if (targets.rows != batch.rows)
        throw InputError("backward: targets row count differs from batch");
    (void)loss;  // only mse is defined
    ForwardCache cache = forward_cached(net, batch);
    if (targets.cols != cache.output().cols)
        throw InputError("backward: targets column count differs from net output");
    return backward_from(net, cache, mse_grad(cache.output(), targets));
}

namespace {

void step_param(double* p, const double* g, std::size_t n, const TrainConfig& cfg,
                double* m, double* v, double bias1, double bias2) {
    if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < n; ++i) p[i] -= cfg.learning_rate * g[i];
        return;
    }
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

}  // namespace

void step(DenseNet& net, const GradientSet& grads, const TrainConfig& cfg,
          OptimizerState& state) {
    if (grads.weights.size() != net.weights.size() || grads.biases.size() != net.biases.size())
        throw InputError("step: gradient layer count mismatch");
    for (std::size_t k = 0; k < net.weights.size(); ++k)
        if (!grads.weights[k].same_shape(net.weights[k]) ||
            grads.biases[k].size() != net.biases[k].size())
            throw InputError("step: gradient shape mismatch at layer " + std::to_string(k));
    state.ensure_shapes(net);
    state.step_count += 1;
    const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step_count));
    const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step_count));
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        step_param(net.weights[k].data.data(), grads.weights[k].data.data(),
                   net.weights[k].size(), cfg, state.m_w[k].data.data(),
                   state.v_w[k].data.data(), bias1, bias2);
        step_param(net.biases[k].data(), grads.biases[k].data(), net.biases[k].size(), cfg,
                   state.m_b[k].data(), state.v_b[k].data(), bias1, bias2);
    }
}

double grad_check(const DenseNet& net, const Matrix& batch, const Matrix& targets,
                  double fd_step) {
    if (!(fd_step > 0)) throw InputError("grad_check: step must be positive");
    GradientSet analytic = backward(net, batch, targets, Loss::mse);
    DenseNet probe = net;
    double worst = 0.0;
    auto record = [&](double a, double num) {
        const double denom = std::max({std::fabs(a), std::fabs(num), 1e-8});
        worst = std::max(worst, std::fabs(a - num) / denom);
    };
    auto central = [&](double* p) {
        const double orig = *p;
        *p = orig + fd_step;
        const double up = mse(forward(probe, batch), targets);
        *p = orig - fd_step;
        const double down = mse(forward(probe, batch), targets);
        *p = orig;
        return (up - down) / (2.0 * fd_step);
    };
    for (std::size_t k = 0; k < probe.weights.size(); ++k) {
        for (std::size_t i = 0; i < probe.weights[k].size(); ++i)
            record(analytic.weights[k].data[i], central(&probe.weights[k].data[i]));
        for (std::size_t i = 0; i < probe.biases[k].size(); ++i)
            record(analytic.biases[k][i], central(&probe.biases[k][i]));
    }
    return worst;
}

DenseNet make_dense_net(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& acts, std::mt19937_64& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw InputError("make_dense_net: need one activation per non-input layer");
    DenseNet net;
    net.layer_dims = dims;
    net.activations = acts;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const double span = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
        std::uniform_real_distribution<double> dist(-span, span);
        Matrix w(dims[k + 1], dims[k]);
        for (double& v : w.data) v = dist(rng);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(dims[k + 1], 0.0);
    }
    return net;
}

}  // namespace corrfl::nn
