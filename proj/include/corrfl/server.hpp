#pragma once

// Central-server aggregation: FedAvg over homogeneous snapshots, and the
// correlational multi-view autoencoder that reconstructs a missing view's
// first-layer weights. Loss = reconstruction (all views present)
// + reconstruction under single-view masking + pairwise decorrelation
// penalty on the masked common representations.

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "corrfl/nn.hpp"

namespace corrfl::server {

// Element-wise arithmetic mean of equal-length flat weight vectors.
std::vector<double> fedavg(const std::vector<std::vector<double>>& snapshots);

// Per-view flat first-layer weight vectors aligned by dispatch index. The
// group-aggregated m1 entry comes first, then m2, then m3.
struct SnapshotTriple {
    std::vector<std::vector<double>> views;
    std::size_t dispatch_index = 0;
};

// Per-view encoder/decoder pairs sharing one latent space; no nonlinearity.
struct CorrNet {
    std::vector<nn::DenseNet> encoders;  // width -> hidden -> latent
    std::vector<nn::DenseNet> decoders;  // latent -> hidden -> width
    std::size_t latent_dim = 32;

    std::size_t view_count() const { return encoders.size(); }
    std::vector<std::size_t> view_widths() const;
    void validate() const;
};

// The deployed shape: hidden 128, latent 32, identity activations.
CorrNet make_corr_net(const std::vector<std::size_t>& view_widths, std::mt19937_64& rng,
                      std::size_t hidden = 128, std::size_t latent = 32);

// Common representation obtained while one view is zeroed out.
struct LatentRep {
    std::vector<double> values;
    std::vector<std::size_t> summed_views;  // every view contributes (masked one via its bias path)
    std::size_t masked_view = 0;
};

// Unordered view pairs (i1 < i2), n*(n-1)/2 of them.
std::vector<std::pair<std::size_t, std::size_t>> latent_pairs(std::size_t n_views);

// Pearson correlation across the latent entries of two representations.
// Zero-variance inputs yield 0 and set *degenerate when provided.
double pairwise_corr(const std::vector<double>& a, const std::vector<double>& b,
                     bool* degenerate = nullptr);

// Sum over pairs of (1 - c); degenerate pairs contribute 1.
double l3_from_correlations(const std::vector<double>& correlations);
double l3_loss(const std::vector<LatentRep>& reps);

// Test seam for the self-check's mutation probe: flips the correlation sign
// inside the L3 term.
bool& l3_sign_flip_hook();

double l1_loss(const CorrNet& net, const SnapshotTriple& t);
std::pair<double, std::vector<LatentRep>> l2_loss_and_reps(const CorrNet& net,
                                                           const SnapshotTriple& t);
// L1 + L2 + L3 with shared intermediate encodings.
double total_loss(const CorrNet& net, const SnapshotTriple& t);

// Column-stacked minibatch of triples.
struct TripleBatch {
    std::vector<nn::Matrix> views;  // per view: rows x width
    std::size_t rows = 0;
};

TripleBatch gather_batch(const std::vector<SnapshotTriple>& pool,
                         const std::vector<std::size_t>& indices);

struct LossBreakdown {
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double total = 0.0;
    std::vector<double> pair_correlations;  // batch means, latent_pairs order
    std::vector<nn::Matrix> masked_reps;    // per mask: rows x latent
};

struct CorrGradients {
    std::vector<nn::GradientSet> encoders;
    std::vector<nn::GradientSet> decoders;
};

LossBreakdown evaluate_losses(const CorrNet& net, const TripleBatch& batch);
LossBreakdown evaluate_losses_with_grads(const CorrNet& net, const TripleBatch& batch,
                                         CorrGradients& grads);

struct CorrTrainConfig {
    nn::TrainConfig optim;       // Adam, lr 1e-3
    std::size_t batch_size = 9;  // triples per iteration
    std::size_t epochs = 1;
    std::uint64_t shuffle_seed = 0;

    void validate() const;
};

struct TrainTrace {
    std::vector<double> total, l1, l2, l3;
    std::vector<std::vector<double>> correlations;  // per iteration, per pair

    std::size_t iterations() const { return total.size(); }
};

// Minibatch Adam over the pooled triples; deterministic per shuffle seed.
TrainTrace corrfl_train(CorrNet& net, const std::vector<SnapshotTriple>& pool,
                        const CorrTrainConfig& cfg);

// Zero the missing view, sum the encodings, decode the missing view.
// Exactly one view may be absent.
std::vector<double> reconstruct_missing(const CorrNet& net,
                                        const std::map<std::size_t, std::vector<double>>& available,
                                        std::size_t missing_view);

// Max relative error between analytic gradients of the total loss and
// central finite differences. sample_count == 0 sweeps every parameter,
// otherwise that many seeded random parameter coordinates.
double corrfl_grad_check(const CorrNet& net, const TripleBatch& batch, double fd_step,
                         std::size_t sample_count = 0, std::uint64_t sample_seed = 0);

}  // namespace corrfl::server
