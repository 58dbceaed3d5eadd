#include "corrfl/server.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace corrfl::server {

std::vector<double> fedavg(const std::vector<std::vector<double>>& snapshots) {
    if (snapshots.empty()) throw InputError("fedavg: no snapshots");
    const std::size_t len = snapshots.front().size();
    for (const auto& s : snapshots)
        if (s.size() != len) throw InputError("fedavg: mixed snapshot lengths");
    std::vector<double> mean(len, 0.0);
    for (const auto& s : snapshots)
        for (std::size_t i = 0; i < len; ++i) mean[i] += s[i];
    const double inv = 1.0 / static_cast<double>(snapshots.size());
    for (double& v : mean) v *= inv;
    return mean;
}

std::vector<std::size_t> CorrNet::view_widths() const {
    std::vector<std::size_t> w;
    for (const auto& e : encoders) w.push_back(e.input_dim());
    return w;
}

void CorrNet::validate() const {
    if (encoders.empty() || encoders.size() != decoders.size())
        throw ConfigError("corr net needs matching encoder/decoder pairs");
    for (std::size_t j = 0; j < encoders.size(); ++j) {
        encoders[j].validate();
        decoders[j].validate();
        if (encoders[j].output_dim() != latent_dim || decoders[j].input_dim() != latent_dim)
            throw ConfigError("view " + std::to_string(j) + " does not share the latent space");
        if (decoders[j].output_dim() != encoders[j].input_dim())
            throw ConfigError("view " + std::to_string(j) + " decoder width mismatch");
        for (const auto& net : {&encoders[j], &decoders[j]})
            for (auto act : net->activations)
                if (act != nn::Activation::identity)
                    throw ConfigError("corr net must have no activation functions");
    }
}

CorrNet make_corr_net(const std::vector<std::size_t>& view_widths, std::mt19937_64& rng,
                      std::size_t hidden, std::size_t latent) {
    CorrNet net;
    net.latent_dim = latent;
    const std::vector<nn::Activation> acts{nn::Activation::identity, nn::Activation::identity};
    for (std::size_t w : view_widths)
        net.encoders.push_back(nn::make_dense_net({w, hidden, latent}, acts, rng));
    for (std::size_t w : view_widths)
        net.decoders.push_back(nn::make_dense_net({latent, hidden, w}, acts, rng));
    net.validate();
    return net;
}

std::vector<std::pair<std::size_t, std::size_t>> latent_pairs(std::size_t n_views) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i + 1 < n_views; ++i)
        for (std::size_t j = i + 1; j < n_views; ++j) pairs.push_back({i, j});
    return pairs;
}

namespace {

constexpr double kCorrEps = 1e-12;

struct RowCorr {
    double c = 0.0;
    bool degenerate = false;
};

RowCorr row_pearson(const double* u, const double* v, std::size_t d) {
    double mu = 0.0, mv = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        mu += u[k];
        mv += v[k];
    }
    mu /= static_cast<double>(d);
    mv /= static_cast<double>(d);
    double suv = 0.0, su = 0.0, sv = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double cu = u[k] - mu;
        const double cv = v[k] - mv;
        suv += cu * cv;
        su += cu * cu;
        sv += cv * cv;
    }
    const double denom = std::sqrt(su) * std::sqrt(sv);
    RowCorr out;
    if (denom < kCorrEps) {
        out.degenerate = true;
        return out;
    }
    out.c = std::clamp(suv / denom, -1.0, 1.0);
    return out;
}

// Adds coef * dc/du into du and coef * dc/dv into dv. No-op for degenerate
// or clamped correlations.
void row_pearson_backward(const double* u, const double* v, std::size_t d, double coef,
                          double* du, double* dv) {
    double mu = 0.0, mv = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        mu += u[k];
        mv += v[k];
    }
    mu /= static_cast<double>(d);
    mv /= static_cast<double>(d);
    double suv = 0.0, su = 0.0, sv = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double cu = u[k] - mu;
        const double cv = v[k] - mv;
        suv += cu * cv;
        su += cu * cu;
        sv += cv * cv;
    }
    const double denom = std::sqrt(su) * std::sqrt(sv);
    if (denom < kCorrEps) return;
    const double c = suv / denom;
    if (c > 1.0 || c < -1.0) return;  // clamped: flat
    double sum_gu = 0.0, sum_gv = 0.0;
    std::vector<double> gu(d), gv(d);
    for (std::size_t k = 0; k < d; ++k) {
        const double cu = u[k] - mu;
        const double cv = v[k] - mv;
        gu[k] = cv / denom - c * cu / su;
        gv[k] = cu / denom - c * cv / sv;
        sum_gu += gu[k];
        sum_gv += gv[k];
    }
    // Chain through the centering: subtract each gradient's mean.
    const double gu_mean = sum_gu / static_cast<double>(d);
    const double gv_mean = sum_gv / static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k) {
        du[k] += coef * (gu[k] - gu_mean);
        dv[k] += coef * (gv[k] - gv_mean);
    }
}

}  // namespace

double pairwise_corr(const std::vector<double>& a, const std::vector<double>& b,
                     bool* degenerate) {
    if (a.size() != b.size()) throw InputError("pairwise_corr: length mismatch");
    if (a.size() < 2) throw InputError("pairwise_corr: need at least 2 entries");
    RowCorr rc = row_pearson(a.data(), b.data(), a.size());
    if (degenerate) *degenerate = rc.degenerate;
    return rc.c;
}

bool& l3_sign_flip_hook() {
    static bool flag = false;
    return flag;
}

double l3_from_correlations(const std::vector<double>& correlations) {
    const double sign = l3_sign_flip_hook() ? 1.0 : -1.0;
    double acc = 0.0;
    for (double c : correlations) acc += 1.0 + sign * c;
    return acc;
}

double l3_loss(const std::vector<LatentRep>& reps) {
    if (reps.size() < 2) throw InputError("l3_loss: need at least 2 representations");
    std::vector<double> cs;
    for (const auto& [i, j] : latent_pairs(reps.size()))
        cs.push_back(pairwise_corr(reps[i].values, reps[j].values));
    return l3_from_correlations(cs);
}

TripleBatch gather_batch(const std::vector<SnapshotTriple>& pool,
                         const std::vector<std::size_t>& indices) {
    if (pool.empty() || indices.empty()) throw InputError("gather_batch: nothing to gather");
    const std::size_t n = pool.front().views.size();
    TripleBatch batch;
    batch.rows = indices.size();
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t w = pool.front().views[v].size();
        nn::Matrix m(batch.rows, w);
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto& triple = pool[indices[r]];
            if (triple.views.size() != n || triple.views[v].size() != w)
                throw InputError("gather_batch: inconsistent triple shapes in pool");
            std::copy(triple.views[v].begin(), triple.views[v].end(), m.row(r));
        }
        batch.views.push_back(std::move(m));
    }
    return batch;
}

namespace {

void check_batch(const CorrNet& net, const TripleBatch& batch) {
    if (batch.views.size() != net.view_count())
        throw InputError("batch view count does not match the net");
    for (std::size_t j = 0; j < batch.views.size(); ++j)
        if (batch.views[j].cols != net.encoders[j].input_dim() ||
            batch.views[j].rows != batch.rows)
            throw InputError("batch view " + std::to_string(j) + " has wrong shape");
}

double mse_block(const nn::Matrix& out, std::size_t first_row, const nn::Matrix& target) {
    double acc = 0.0;
    const std::size_t total = target.rows * target.cols;
    for (std::size_t r = 0; r < target.rows; ++r) {
        const double* o = out.row(first_row + r);
        const double* t = target.row(r);
        for (std::size_t c = 0; c < target.cols; ++c) {
            const double d = o[c] - t[c];
            acc += d * d;
        }
    }
    return acc / static_cast<double>(total);
}

void mse_grad_block(const nn::Matrix& out, std::size_t first_row, const nn::Matrix& target,
                    double outer_coef, nn::Matrix& dout) {
    const double scale = outer_coef * 2.0 / static_cast<double>(target.rows * target.cols);
    for (std::size_t r = 0; r < target.rows; ++r) {
        const double* o = out.row(first_row + r);
        const double* t = target.row(r);
        double* g = dout.row(first_row + r);
        for (std::size_t c = 0; c < target.cols; ++c) g[c] = scale * (o[c] - t[c]);
    }
}

LossBreakdown evaluate_impl(const CorrNet& net, const TripleBatch& batch,
                            CorrGradients* grads) {
    check_batch(net, batch);
    const std::size_t n = net.view_count();
    const std::size_t B = batch.rows;
    const std::size_t D = net.latent_dim;

    std::vector<nn::ForwardCache> enc, enc0;
    for (std::size_t j = 0; j < n; ++j) {
        enc.push_back(nn::forward_cached(net.encoders[j], batch.views[j]));
        enc0.push_back(
            nn::forward_cached(net.encoders[j], nn::Matrix(1, net.encoders[j].input_dim())));
    }

    // Scenario stack: rows [0,B) carry the all-views representation, rows
    // [(1+i)B,(2+i)B) the representation with view i zeroed.
    nn::Matrix h_stack((n + 1) * B, D);
    for (std::size_t s = 0; s <= n; ++s)
        for (std::size_t b = 0; b < B; ++b) {
            double* dst = h_stack.row(s * B + b);
            for (std::size_t j = 0; j < n; ++j) {
                const double* src = (s > 0 && j == s - 1) ? enc0[j].output().row(0)
                                                          : enc[j].output().row(b);
                for (std::size_t k = 0; k < D; ++k) dst[k] += src[k];
            }
        }

    std::vector<nn::ForwardCache> dec;
    for (std::size_t j = 0; j < n; ++j)
        dec.push_back(nn::forward_cached(net.decoders[j], h_stack));

    LossBreakdown out;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j)
        out.l1 += mse_block(dec[j].output(), 0, batch.views[j]);
    out.l1 *= inv_n;
    for (std::size_t i = 0; i < n; ++i) {
        double scenario = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            scenario += mse_block(dec[j].output(), (1 + i) * B, batch.views[j]);
        out.l2 += scenario * inv_n;
    }
    out.l2 *= inv_n;

    const auto pairs = latent_pairs(n);
    for (const auto& [p, q] : pairs) {
        double mean_c = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            mean_c += row_pearson(h_stack.row((1 + p) * B + b), h_stack.row((1 + q) * B + b), D)
                          .c;
        out.pair_correlations.push_back(mean_c / static_cast<double>(B));
    }
    out.l3 = l3_from_correlations(out.pair_correlations);
    out.total = out.l1 + out.l2 + out.l3;

    for (std::size_t i = 0; i < n; ++i) {
        nn::Matrix rep(B, D);
        for (std::size_t b = 0; b < B; ++b)
            std::copy_n(h_stack.row((1 + i) * B + b), D, rep.row(b));
        out.masked_reps.push_back(std::move(rep));
    }

    if (!grads) return out;

    grads->encoders.clear();
    grads->decoders.clear();
    nn::Matrix dh_stack((n + 1) * B, D);
    for (std::size_t j = 0; j < n; ++j) {
        nn::Matrix dr((n + 1) * B, batch.views[j].cols);
        mse_grad_block(dec[j].output(), 0, batch.views[j], inv_n, dr);
        for (std::size_t i = 0; i < n; ++i)
            mse_grad_block(dec[j].output(), (1 + i) * B, batch.views[j], inv_n * inv_n, dr);
        nn::Matrix din;
        grads->decoders.push_back(nn::backward_from(net.decoders[j], dec[j], dr, &din));
        for (std::size_t r = 0; r < dh_stack.size(); ++r) dh_stack.data[r] += din.data[r];
    }

    // L3 reaches the masked representations directly. d l3 / d c = -1 per
    // pair (sign-flipped under the mutation hook), averaged over the batch.
    const double dcoef = (l3_sign_flip_hook() ? 1.0 : -1.0) / static_cast<double>(B);
    for (const auto& [p, q] : pairs)
        for (std::size_t b = 0; b < B; ++b)
            row_pearson_backward(h_stack.row((1 + p) * B + b), h_stack.row((1 + q) * B + b), D,
                                 dcoef, dh_stack.row((1 + p) * B + b),
                                 dh_stack.row((1 + q) * B + b));

    for (std::size_t j = 0; j < n; ++j) {
        nn::Matrix de(B, D);
        for (std::size_t b = 0; b < B; ++b) {
            double* dst = de.row(b);
            const double* full = dh_stack.row(b);
            for (std::size_t k = 0; k < D; ++k) dst[k] = full[k];
            for (std::size_t i = 0; i < n; ++i) {
                if (i == j) continue;  // view j is zeroed in its own scenario
                const double* m = dh_stack.row((1 + i) * B + b);
                for (std::size_t k = 0; k < D; ++k) dst[k] += m[k];
            }
        }
        grads->encoders.push_back(nn::backward_from(net.encoders[j], enc[j], de));

        // The masked scenario still trains the encoder's bias path.
        nn::Matrix de0(1, D);
        for (std::size_t b = 0; b < B; ++b) {
            const double* m = dh_stack.row((1 + j) * B + b);
            for (std::size_t k = 0; k < D; ++k) de0.data[k] += m[k];
        }
        auto g0 = nn::backward_from(net.encoders[j], enc0[j], de0);
        grads->encoders[j].add_scaled(g0, 1.0);
    }
    return out;
}

SnapshotTriple checked_triple(const CorrNet& net, const SnapshotTriple& t) {
    if (t.views.size() != net.view_count())
        throw InputError("triple view count does not match the net");
    return t;
}

TripleBatch batch_from_triple(const CorrNet& net, const SnapshotTriple& t) {
    checked_triple(net, t);
    TripleBatch batch;
    batch.rows = 1;
    for (std::size_t j = 0; j < t.views.size(); ++j) {
        nn::Matrix m(1, t.views[j].size());
        std::copy(t.views[j].begin(), t.views[j].end(), m.row(0));
        batch.views.push_back(std::move(m));
    }
    return batch;
}

}  // namespace

LossBreakdown evaluate_losses(const CorrNet& net, const TripleBatch& batch) {
    return evaluate_impl(net, batch, nullptr);
}

LossBreakdown evaluate_losses_with_grads(const CorrNet& net, const TripleBatch& batch,
                                         CorrGradients& grads) {
    return evaluate_impl(net, batch, &grads);
}

double l1_loss(const CorrNet& net, const SnapshotTriple& t) {
    return evaluate_losses(net, batch_from_triple(net, t)).l1;
}

std::pair<double, std::vector<LatentRep>> l2_loss_and_reps(const CorrNet& net,
                                                           const SnapshotTriple& t) {
    auto breakdown = evaluate_losses(net, batch_from_triple(net, t));
    std::vector<LatentRep> reps;
    std::vector<std::size_t> all;
    for (std::size_t j = 0; j < net.view_count(); ++j) all.push_back(j);
    for (std::size_t i = 0; i < net.view_count(); ++i) {
        LatentRep rep;
        rep.values.assign(breakdown.masked_reps[i].row(0),
                          breakdown.masked_reps[i].row(0) + net.latent_dim);
        rep.summed_views = all;
        rep.masked_view = i;
        reps.push_back(std::move(rep));
    }
    return {breakdown.l2, std::move(reps)};
}

double total_loss(const CorrNet& net, const SnapshotTriple& t) {
    return evaluate_losses(net, batch_from_triple(net, t)).total;
}

void CorrTrainConfig::validate() const {
    optim.validate();
    if (batch_size == 0) throw ConfigError("corr batch_size must be at least 1");
    if (epochs == 0) throw ConfigError("corr epochs must be at least 1");
}

TrainTrace corrfl_train(CorrNet& net, const std::vector<SnapshotTriple>& pool,
                        const CorrTrainConfig& cfg) {
    cfg.validate();
    if (pool.empty()) throw InputError("corrfl_train: empty pool");
    const std::size_t n = net.view_count();

    std::vector<nn::OptimizerState> enc_state(n), dec_state(n);
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(cfg.shuffle_seed);

    TrainTrace trace;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - first);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(first + count));
            TripleBatch batch = gather_batch(pool, idx);
            CorrGradients grads;
            LossBreakdown loss = evaluate_losses_with_grads(net, batch, grads);
            trace.total.push_back(loss.total);
            trace.l1.push_back(loss.l1);
            trace.l2.push_back(loss.l2);
            trace.l3.push_back(loss.l3);
            trace.correlations.push_back(loss.pair_correlations);
            for (std::size_t j = 0; j < n; ++j) {
                nn::step(net.encoders[j], grads.encoders[j], cfg.optim, enc_state[j]);
                nn::step(net.decoders[j], grads.decoders[j], cfg.optim, dec_state[j]);
            }
        }
    }
    return trace;
}

std::vector<double> reconstruct_missing(const CorrNet& net,
                                        const std::map<std::size_t, std::vector<double>>& available,
                                        std::size_t missing_view) {
    const std::size_t n = net.view_count();
    if (missing_view >= n) throw InputError("reconstruct_missing: no such view");
    if (available.size() != n - 1 || available.count(missing_view) > 0)
        throw InputError("reconstruct_missing: exactly one view may be absent");
    for (const auto& [j, w] : available) {
        if (j >= n) throw InputError("reconstruct_missing: unknown view index");
        if (w.size() != net.encoders[j].input_dim())
            throw InputError("reconstruct_missing: view " + std::to_string(j) +
                             " has wrong length");
    }

    nn::Matrix h(1, net.latent_dim);
    for (std::size_t j = 0; j < n; ++j) {
        nn::Matrix input(1, net.encoders[j].input_dim());
        if (j != missing_view) {
            const auto& w = available.at(j);
            std::copy(w.begin(), w.end(), input.row(0));
        }
        nn::Matrix e = nn::forward(net.encoders[j], input);
        for (std::size_t k = 0; k < net.latent_dim; ++k) h.data[k] += e.data[k];
    }
    nn::Matrix out = nn::forward(net.decoders[missing_view], h);
    return {out.data.begin(), out.data.end()};
}

double corrfl_grad_check(const CorrNet& net, const TripleBatch& batch, double fd_step,
                         std::size_t sample_count, std::uint64_t sample_seed) {
    if (!(fd_step > 0)) throw InputError("corrfl_grad_check: step must be positive");
    CorrGradients analytic;
    evaluate_losses_with_grads(net, batch, analytic);

    CorrNet probe = net;
    struct Param {
        double* value;
        double grad;
    };
    std::vector<Param> params;
    auto collect = [&](std::vector<nn::DenseNet>& nets, std::vector<nn::GradientSet>& grads) {
        for (std::size_t j = 0; j < nets.size(); ++j) {
            for (std::size_t k = 0; k < nets[j].weights.size(); ++k) {
                for (std::size_t i = 0; i < nets[j].weights[k].size(); ++i)
                    params.push_back({&nets[j].weights[k].data[i], grads[j].weights[k].data[i]});
                for (std::size_t i = 0; i < nets[j].biases[k].size(); ++i)
                    params.push_back({&nets[j].biases[k][i], grads[j].biases[k][i]});
            }
        }
    };
    collect(probe.encoders, analytic.encoders);
    collect(probe.decoders, analytic.decoders);

    std::vector<std::size_t> picks;
    if (sample_count == 0 || sample_count >= params.size()) {
        picks.resize(params.size());
        for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    } else {
        std::mt19937_64 rng(sample_seed);
        std::uniform_int_distribution<std::size_t> dist(0, params.size() - 1);
        for (std::size_t i = 0; i < sample_count; ++i) picks.push_back(dist(rng));
    }

    double worst = 0.0;
    for (std::size_t i : picks) {
        double* p = params[i].value;
        const double orig = *p;
        *p = orig + fd_step;
        const double up = evaluate_losses(probe, batch).total;
        *p = orig - fd_step;
        const double down = evaluate_losses(probe, batch).total;
        *p = orig;
        const double numeric = (up - down) / (2.0 * fd_step);
        const double a = params[i].grad;
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace corrfl::server
