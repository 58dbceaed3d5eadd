#pragma once

// Local agents: per-node regressors over a view's engineered features,
// chronological minibatch training, and first-layer weight snapshots at the
// dispatch cadence. Snapshot wire format: 16-byte header + little-endian
// 32-bit reals.

#include <cstdint>
#include <string>
#include <vector>

#include "corrfl/data.hpp"
#include "corrfl/nn.hpp"

namespace corrfl::client {

// Flattened first-layer weights of one view at one dispatch instant.
struct WeightSnapshot {
    data::ViewId view_id = data::ViewId::m1;
    std::string node_id;
    std::size_t dispatch_index = 0;
    std::size_t epoch = 0;
    std::size_t cc_index = 0;
    std::vector<double> weights;  // row-major flatten, length L * n_i
};

struct DispatchPolicy {
    std::size_t mdf = 5;  // batches between snapshots
    std::size_t batch_size = 8;
    std::size_t cc_batches = 2520;  // 20160 points at batch 8

    void validate() const;
};

struct LocalAgent {
    std::string node_id;
    data::ViewSpec view;
    nn::DenseNet net;  // n_i -> 16 -> 1, relu hidden, identity output
    nn::TrainConfig train_cfg;
    nn::OptimizerState opt_state;
    data::Scaler label_scaler;  // training runs on standardized CO2 targets

    std::vector<double> first_layer_flat() const;
};

// The initial net a central server draws once per view and distributes.
nn::DenseNet make_view_net(const data::ViewSpec& view, std::mt19937_64& rng);

LocalAgent make_agent(const data::ViewSpec& view, const std::string& node_id,
                      const nn::DenseNet& initial_net, const nn::TrainConfig& cfg,
                      const data::Scaler& label_scaler);

// Trains n_batches chronological minibatches; after every mdf-th batch a
// snapshot copy is appended. Returns floor(n_batches / mdf) snapshots.
std::vector<WeightSnapshot> train_batches(LocalAgent& agent,
                                          const data::FeatureVectorSet& set,
                                          std::size_t n_batches, std::size_t batch_size,
                                          std::size_t mdf, std::size_t epoch,
                                          std::size_t cc_index);

// One communication cycle under the policy; requires the full CC's rows.
std::vector<WeightSnapshot> train_cc(LocalAgent& agent, const data::FeatureVectorSet& set,
                                     const DispatchPolicy& policy, std::size_t epoch = 0,
                                     std::size_t cc_index = 0);

// Mean absolute error in ppm; no parameter updates.
double predict_mae(const LocalAgent& agent, const data::FeatureVectorSet& set);

// Overwrites the first-layer weight matrix from a row-major flat vector;
// biases and later layers untouched.
void install_first_layer(LocalAgent& agent, const std::vector<double>& weights);
void install_first_layer(nn::DenseNet& net, const std::vector<double>& weights);

// Wire format. Header: view (u32), numeric node id (u32), dispatch index
// (u32), weight count (u32); payload: IEEE-754 binary32, little-endian.
inline constexpr std::size_t kSnapshotHeaderBytes = 16;

std::size_t snapshot_wire_size(std::size_t weight_count);
std::vector<std::uint8_t> serialize_snapshot(const WeightSnapshot& snap);
WeightSnapshot deserialize_snapshot(const std::vector<std::uint8_t>& bytes);

}  // namespace corrfl::client
