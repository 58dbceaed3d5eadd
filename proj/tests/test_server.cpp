#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "corrfl/server.hpp"

using namespace corrfl;
using nn::Matrix;
using server::CorrNet;
using server::SnapshotTriple;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double span = 1.0) {
    std::uniform_real_distribution<double> dist(-span, span);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

CorrNet tiny_net(std::mt19937_64& rng) {
    return server::make_corr_net({6, 4, 6}, rng, 5, 3);
}

SnapshotTriple tiny_triple(std::mt19937_64& rng) {
    SnapshotTriple t;
    t.views = {random_vec(6, rng), random_vec(4, rng), random_vec(6, rng)};
    return t;
}

void zero_all(CorrNet& net, bool weights, bool biases) {
    for (auto* group : {&net.encoders, &net.decoders})
        for (auto& n : *group) {
            if (weights)
                for (auto& w : n.weights)
                    for (double& v : w.data) v = 0.0;
            if (biases)
                for (auto& b : n.biases)
                    for (double& v : b) v = 0.0;
        }
}

Matrix as_row(const std::vector<double>& v) {
    Matrix m(1, v.size());
    std::copy(v.begin(), v.end(), m.row(0));
    return m;
}

// Straight transcription of the loss formulas, independent of the batched
// evaluation path.
double oracle_l1(const CorrNet& net, const SnapshotTriple& t) {
    const std::size_t n = net.view_count();
    Matrix h(1, net.latent_dim);
    for (std::size_t j = 0; j < n; ++j) {
        Matrix e = nn::forward(net.encoders[j], as_row(t.views[j]));
        for (std::size_t k = 0; k < net.latent_dim; ++k) h.data[k] += e.data[k];
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        acc += nn::mse(nn::forward(net.decoders[j], h), as_row(t.views[j]));
    return acc / static_cast<double>(n);
}

std::pair<double, std::vector<std::vector<double>>> oracle_l2(const CorrNet& net,
                                                              const SnapshotTriple& t) {
    const std::size_t n = net.view_count();
    double total = 0.0;
    std::vector<std::vector<double>> reps;
    for (std::size_t masked = 0; masked < n; ++masked) {
        Matrix h(1, net.latent_dim);
        for (std::size_t j = 0; j < n; ++j) {
            Matrix input = j == masked ? Matrix(1, t.views[j].size()) : as_row(t.views[j]);
            Matrix e = nn::forward(net.encoders[j], input);
            for (std::size_t k = 0; k < net.latent_dim; ++k) h.data[k] += e.data[k];
        }
        double scenario = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            scenario += nn::mse(nn::forward(net.decoders[j], h), as_row(t.views[j]));
        total += scenario / static_cast<double>(n);
        reps.push_back({h.data.begin(), h.data.end()});
    }
    return {total / static_cast<double>(n), reps};
}

}  // namespace

TEST_CASE("fedavg: idempotence, arithmetic, loop oracle, errors") {
    std::mt19937_64 rng(1);
    auto w = random_vec(10, rng);
    CHECK(server::fedavg({w, w}) == w);

    CHECK(server::fedavg({{1.0, 2.0}, {3.0, 4.0}}) == std::vector<double>{2.0, 3.0});

    std::vector<std::vector<double>> group;
    for (int i = 0; i < 4; ++i) group.push_back(random_vec(33, rng));
    auto got = server::fedavg(group);
    for (std::size_t k = 0; k < 33; ++k) {
        double acc = 0.0;
        for (const auto& g : group) acc += g[k];
        CHECK(got[k] == doctest::Approx(acc / 4.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS((void)server::fedavg({}), InputError);
    CHECK_THROWS_AS((void)server::fedavg({{1.0}, {1.0, 2.0}}), InputError);
}

TEST_CASE("fedavg: 100 random groups of up to 8 vectors match the loop oracle") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> members(1, 8), width(1, 64);
    for (int round = 0; round < 100; ++round) {
        const std::size_t n = members(rng), w = width(rng);
        std::vector<std::vector<double>> group;
        for (std::size_t i = 0; i < n; ++i) group.push_back(random_vec(w, rng, 10.0));
        auto got = server::fedavg(group);
        for (std::size_t k = 0; k < w; ++k) {
            double acc = 0.0;
            for (const auto& g : group) acc += g[k];
            CHECK(got[k] == doctest::Approx(acc / static_cast<double>(n)).epsilon(1e-12));
        }
    }
}

TEST_CASE("corr net: factory shape and validation") {
    std::mt19937_64 rng(3);
    auto net = server::make_corr_net({448, 336, 448}, rng);
    CHECK(net.latent_dim == 32);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(net.encoders[j].layer_dims ==
              std::vector<std::size_t>{net.encoders[j].input_dim(), 128, 32});
        CHECK(net.decoders[j].layer_dims ==
              std::vector<std::size_t>{32, 128, net.decoders[j].output_dim()});
    }
    CHECK(net.view_widths() == std::vector<std::size_t>{448, 336, 448});

    auto bad = tiny_net(rng);
    bad.encoders[0].activations[0] = nn::Activation::relu;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("l1: zero net reduces to the mean of per-view mean squares") {
    std::mt19937_64 rng(4);
    auto net = tiny_net(rng);
    zero_all(net, true, true);
    auto t = tiny_triple(rng);
    double expected = 0.0;
    for (const auto& v : t.views) {
        double acc = 0.0;
        for (double x : v) acc += x * x;
        expected += acc / static_cast<double>(v.size());
    }
    expected /= 3.0;
    CHECK(server::l1_loss(net, t) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("l1: constructed exact reconstruction is measured as zero") {
    std::mt19937_64 rng(5);
    auto net = tiny_net(rng);
    auto t = tiny_triple(rng);
    // Constant decoders: zero weights, output bias holds the view itself.
    for (std::size_t j = 0; j < 3; ++j) {
        for (auto& w : net.decoders[j].weights)
            for (double& v : w.data) v = 0.0;
        net.decoders[j].biases[0].assign(net.decoders[j].biases[0].size(), 0.0);
        net.decoders[j].biases[1] = t.views[j];
    }
    CHECK(server::l1_loss(net, t) < 1e-6);
    CHECK(server::l1_loss(net, t) == 0.0);
}

TEST_CASE("l1: matches the transcription oracle on random nets") {
    std::mt19937_64 rng(6);
    for (int round = 0; round < 10; ++round) {
        auto net = tiny_net(rng);
        auto t = tiny_triple(rng);
        CHECK(server::l1_loss(net, t) == doctest::Approx(oracle_l1(net, t)).epsilon(1e-10));
    }
}

TEST_CASE("l2: zero net gives zero latent reps") {
    std::mt19937_64 rng(7);
    auto net = tiny_net(rng);
    zero_all(net, true, true);
    auto t = tiny_triple(rng);
    auto [loss, reps] = server::l2_loss_and_reps(net, t);
    REQUIRE(reps.size() == 3);
    for (const auto& rep : reps) {
        CHECK(rep.values.size() == net.latent_dim);
        for (double v : rep.values) CHECK(v == 0.0);
    }
    CHECK(loss >= 0.0);
}

TEST_CASE("l2: masking an already-zero view is a no-op") {
    std::mt19937_64 rng(8);
    auto net = tiny_net(rng);
    auto t = tiny_triple(rng);
    t.views[1].assign(t.views[1].size(), 0.0);
    auto [loss, reps] = server::l2_loss_and_reps(net, t);
    (void)loss;
    // Unmasked common representation via direct transcription.
    Matrix h(1, net.latent_dim);
    for (std::size_t j = 0; j < 3; ++j) {
        Matrix e = nn::forward(net.encoders[j], as_row(t.views[j]));
        for (std::size_t k = 0; k < net.latent_dim; ++k) h.data[k] += e.data[k];
    }
    for (std::size_t k = 0; k < net.latent_dim; ++k) CHECK(reps[1].values[k] == h.data[k]);
}

TEST_CASE("l2: matches the transcription oracle on random nets") {
    std::mt19937_64 rng(9);
    for (int round = 0; round < 10; ++round) {
        auto net = tiny_net(rng);
        auto t = tiny_triple(rng);
        auto [loss, reps] = server::l2_loss_and_reps(net, t);
        auto [oracle_loss, oracle_reps] = oracle_l2(net, t);
        CHECK(loss == doctest::Approx(oracle_loss).epsilon(1e-10));
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(reps[i].masked_view == i);
            for (std::size_t k = 0; k < net.latent_dim; ++k)
                CHECK(reps[i].values[k] == doctest::Approx(oracle_reps[i][k]).epsilon(1e-10));
        }
    }
}

TEST_CASE("pairwise_corr: self, anti, orthogonal, degenerate") {
    std::vector<double> a{1.0, -1.0, 1.0, -1.0};
    std::vector<double> b{1.0, 1.0, -1.0, -1.0};
    CHECK(server::pairwise_corr(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> neg(a);
    for (double& v : neg) v = -v;
    CHECK(server::pairwise_corr(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(server::pairwise_corr(a, b) == 0.0);

    bool degenerate = false;
    CHECK(server::pairwise_corr(std::vector<double>(4, 3.0), a, &degenerate) == 0.0);
    CHECK(degenerate);

    CHECK_THROWS_AS((void)server::pairwise_corr({1.0}, {2.0}), InputError);
    CHECK_THROWS_AS((void)server::pairwise_corr({1.0, 2.0}, {1.0, 2.0, 3.0}), InputError);
}

TEST_CASE("pairwise_corr: affine invariance for positive scale") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> scale(0.1, 5.0), shift(-10.0, 10.0);
    for (int round = 0; round < 200; ++round) {
        auto a = random_vec(32, rng);
        auto b = random_vec(32, rng);
        const double base = server::pairwise_corr(a, b);
        CHECK(base >= -1.0);
        CHECK(base <= 1.0);
        const double alpha = scale(rng), beta = shift(rng);
        auto scaled = a;
        for (double& v : scaled) v = alpha * v + beta;
        CHECK(server::pairwise_corr(scaled, b) == doctest::Approx(base).epsilon(1e-10));
        CHECK(server::pairwise_corr(b, a) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("l3: identical non-constant reps give zero") {
    std::mt19937_64 rng(11);
    server::LatentRep rep;
    rep.values = random_vec(32, rng);
    CHECK(server::l3_loss({rep, rep, rep}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("l3: correlation combination arithmetic") {
    // One anti-correlated pair among perfect ones: 0 + 0 + 2.
    CHECK(server::l3_from_correlations({1.0, 1.0, -1.0}) == 2.0);
    // Realizable with actual vectors: {a, -a, -a} gives pairs -1, -1, +1.
    std::mt19937_64 rng(12);
    server::LatentRep a, na;
    a.values = random_vec(16, rng);
    na.values = a.values;
    for (double& v : na.values) v = -v;
    CHECK(server::l3_loss({a, na, na}) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("l3: bounded by [0, 6] for three views over 1000 random reps") {
    std::mt19937_64 rng(13);
    for (int round = 0; round < 1000; ++round) {
        server::LatentRep r1, r2, r3;
        r1.values = random_vec(32, rng);
        r2.values = random_vec(32, rng);
        r3.values = random_vec(32, rng);
        const double l3 = server::l3_loss({r1, r2, r3});
        CHECK(l3 >= 0.0);
        CHECK(l3 <= 6.0);
    }
}

TEST_CASE("l3: sign-flip hook corrupts the loss (mutation seam)") {
    std::mt19937_64 rng(14);
    server::LatentRep rep;
    rep.values = random_vec(32, rng);
    server::l3_sign_flip_hook() = true;
    const double corrupted = server::l3_loss({rep, rep, rep});
    server::l3_sign_flip_hook() = false;
    CHECK(corrupted == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(server::l3_loss({rep, rep, rep}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("total loss equals the sum of its parts") {
    std::mt19937_64 rng(15);
    for (int round = 0; round < 10; ++round) {
        auto net = tiny_net(rng);
        auto t = tiny_triple(rng);
        const double l1 = server::l1_loss(net, t);
        auto [l2, reps] = server::l2_loss_and_reps(net, t);
        const double l3 = server::l3_loss(reps);
        CHECK(server::total_loss(net, t) == doctest::Approx(l1 + l2 + l3).epsilon(1e-10));
    }
}

TEST_CASE("gradients: analytic matches finite differences on every parameter") {
    std::mt19937_64 rng(16);
    auto net = tiny_net(rng);
    std::vector<SnapshotTriple> pool{tiny_triple(rng), tiny_triple(rng)};
    auto batch = server::gather_batch(pool, {0, 1});
    CHECK(server::corrfl_grad_check(net, batch, 1e-5) < 1e-4);

    auto single = server::gather_batch(pool, {0});
    CHECK(server::corrfl_grad_check(net, single, 1e-5) < 1e-4);
}

TEST_CASE("gradients: sampled check at deployment shape") {
    std::mt19937_64 rng(17);
    auto net = server::make_corr_net({448, 336, 448}, rng);
    std::vector<SnapshotTriple> pool;
    for (int i = 0; i < 4; ++i) {
        SnapshotTriple t;
        t.views = {random_vec(448, rng), random_vec(336, rng), random_vec(448, rng)};
        pool.push_back(std::move(t));
    }
    auto batch = server::gather_batch(pool, {0, 1, 2, 3});
    CHECK(server::corrfl_grad_check(net, batch, 1e-5, 20, 99) < 1e-4);
}

TEST_CASE("corrfl_train: iteration counts follow ceil(pool / batch) per epoch") {
    std::mt19937_64 rng(18);
    auto net = server::make_corr_net({4, 3, 4}, rng, 4, 2);
    std::vector<SnapshotTriple> pool;
    for (int i = 0; i < 7560; ++i) {
        SnapshotTriple t;
        t.views = {random_vec(4, rng), random_vec(3, rng), random_vec(4, rng)};
        pool.push_back(std::move(t));
    }
    server::CorrTrainConfig cfg;
    cfg.batch_size = 9;
    auto trace = server::corrfl_train(net, pool, cfg);
    CHECK(trace.iterations() == 840);
    CHECK(trace.correlations.size() == 840);

    auto net10 = server::make_corr_net({4, 3, 4}, rng, 4, 2);
    cfg.batch_size = 10;
    CHECK(server::corrfl_train(net10, pool, cfg).iterations() == 756);
}

TEST_CASE("corrfl_train: loss is monotone non-increasing early for a constant pool") {
    std::mt19937_64 rng(19);
    int successes = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 seeded(static_cast<std::uint64_t>(seed) + 1000);
        auto net = tiny_net(seeded);
        auto t = tiny_triple(seeded);
        std::vector<SnapshotTriple> pool(40, t);
        server::CorrTrainConfig cfg;
        cfg.optim.learning_rate = 2e-4;
        cfg.batch_size = 8;
        cfg.epochs = 20;  // 5 iterations per epoch
        cfg.shuffle_seed = static_cast<std::uint64_t>(seed);
        auto trace = server::corrfl_train(net, pool, cfg);
        REQUIRE(trace.iterations() >= 100);
        bool monotone = true;
        for (std::size_t i = 1; i < 100; ++i)
            if (trace.total[i] > trace.total[i - 1] + 1e-12) monotone = false;
        successes += monotone ? 1 : 0;
    }
    CHECK(successes >= 95);
}

TEST_CASE("corrfl_train: single-triple pool keeps improving L1") {
    std::mt19937_64 rng(20);
    auto net = tiny_net(rng);
    std::vector<SnapshotTriple> pool{tiny_triple(rng)};
    const double initial_l1 = server::l1_loss(net, pool[0]);
    server::CorrTrainConfig cfg;
    cfg.batch_size = 1;
    cfg.epochs = 2000;
    auto trace = server::corrfl_train(net, pool, cfg);
    CHECK(trace.iterations() == 2000);
    CHECK(server::l1_loss(net, pool[0]) < initial_l1);
}

TEST_CASE("reconstruct_missing: zero net yields the zero vector") {
    std::mt19937_64 rng(21);
    auto net = tiny_net(rng);
    zero_all(net, true, true);
    auto t = tiny_triple(rng);
    auto w = server::reconstruct_missing(net, {{0, t.views[0]}, {1, t.views[1]}}, 2);
    REQUIRE(w.size() == 6);
    for (double v : w) CHECK(v == 0.0);
}

TEST_CASE("reconstruct_missing: bit-exact with the masked branch of l2") {
    std::mt19937_64 rng(22);
    auto net = tiny_net(rng);
    auto t = tiny_triple(rng);
    auto [loss, reps] = server::l2_loss_and_reps(net, t);
    (void)loss;
    auto direct = server::reconstruct_missing(net, {{0, t.views[0]}, {1, t.views[1]}}, 2);
    auto branch = nn::forward(net.decoders[2], as_row(reps[2].values));
    REQUIRE(direct.size() == branch.cols);
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(direct[i] == branch.data[i]);
}

TEST_CASE("reconstruct_missing: rejects multi-view absence and bad lengths") {
    std::mt19937_64 rng(23);
    auto net = tiny_net(rng);
    auto t = tiny_triple(rng);
    CHECK_THROWS_AS((void)server::reconstruct_missing(net, {{0, t.views[0]}}, 2), InputError);
    CHECK_THROWS_AS(
        (void)server::reconstruct_missing(net, {{0, t.views[0]}, {2, t.views[2]}}, 2),
        InputError);
    auto short_w = t.views[1];
    short_w.pop_back();
    CHECK_THROWS_AS((void)server::reconstruct_missing(net, {{0, t.views[0]}, {1, short_w}}, 2),
                    InputError);
}

TEST_CASE("reconstruct_missing: additive in the available views for zero-bias nets") {
    std::mt19937_64 rng(24);
    auto net = tiny_net(rng);
    zero_all(net, false, true);  // weights stay, biases zeroed
    auto a1 = random_vec(6, rng);
    auto a1p = random_vec(6, rng);
    auto a2 = random_vec(4, rng);
    auto zeros2 = std::vector<double>(4, 0.0);

    auto sum_input = a1;
    for (std::size_t i = 0; i < 6; ++i) sum_input[i] += a1p[i];
    auto lhs = server::reconstruct_missing(net, {{0, sum_input}, {1, a2}}, 2);
    auto rhs1 = server::reconstruct_missing(net, {{0, a1}, {1, a2}}, 2);
    auto rhs2 = server::reconstruct_missing(net, {{0, a1p}, {1, zeros2}}, 2);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs[i] == doctest::Approx(rhs1[i] + rhs2[i]).epsilon(1e-10));

    auto zero_out = server::reconstruct_missing(net, {{0, std::vector<double>(6, 0.0)},
                                                      {1, zeros2}},
                                                2);
    for (double v : zero_out) CHECK(v == 0.0);
}

TEST_CASE("masked reps stay within correlation bounds during training") {
    std::mt19937_64 rng(25);
    auto net = tiny_net(rng);
    std::vector<SnapshotTriple> pool;
    for (int i = 0; i < 50; ++i) pool.push_back(tiny_triple(rng));
    server::CorrTrainConfig cfg;
    cfg.batch_size = 7;
    cfg.epochs = 3;
    auto trace = server::corrfl_train(net, pool, cfg);
    for (const auto& per_pair : trace.correlations) {
        REQUIRE(per_pair.size() == 3);
        for (double c : per_pair) {
            CHECK(std::isfinite(c));
            CHECK(c >= -1.0);
            CHECK(c <= 1.0);
        }
    }
}
