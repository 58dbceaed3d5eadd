#include "corrfl/clients.hpp"

#include <cmath>
#include <cstring>

namespace corrfl::client {

void DispatchPolicy::validate() const {
    if (mdf == 0) throw ConfigError("mdf must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (cc_batches == 0) throw ConfigError("cc_batches must be at least 1");
}

std::vector<double> LocalAgent::first_layer_flat() const {
    return net.weights[0].data;
}

nn::DenseNet make_view_net(const data::ViewSpec& view, std::mt19937_64& rng) {
    return nn::make_dense_net({view.engineered_width, view.hidden_width, 1},
                              {nn::Activation::relu, nn::Activation::identity}, rng);
}

LocalAgent make_agent(const data::ViewSpec& view, const std::string& node_id,
                      const nn::DenseNet& initial_net, const nn::TrainConfig& cfg,
                      const data::Scaler& label_scaler) {
    LocalAgent agent;
    agent.node_id = node_id;
    agent.view = view;
    agent.net = initial_net;
    agent.train_cfg = cfg;
    agent.label_scaler = label_scaler;
    agent.net.validate();
    if (agent.net.layer_dims !=
        std::vector<std::size_t>{view.engineered_width, view.hidden_width, 1})
        throw ConfigError("agent net shape does not match its view");
    return agent;
}

namespace {

nn::Matrix rows_of(const nn::Matrix& m, std::size_t first, std::size_t count) {
    nn::Matrix out(count, m.cols);
    std::memcpy(out.data.data(), m.row(first), count * m.cols * sizeof(double));
    return out;
}

}  // namespace

std::vector<WeightSnapshot> train_batches(LocalAgent& agent, const data::FeatureVectorSet& set,
                                          std::size_t n_batches, std::size_t batch_size,
                                          std::size_t mdf, std::size_t epoch,
                                          std::size_t cc_index) {
    if (mdf == 0) throw ConfigError("mdf must be at least 1");
    if (set.rows() < n_batches * batch_size)
        throw DataError("agent " + agent.node_id + ": need " +
                        std::to_string(n_batches * batch_size) + " rows, have " +
                        std::to_string(set.rows()));
    std::vector<WeightSnapshot> snaps;
    snaps.reserve(n_batches / mdf);
    for (std::size_t b = 0; b < n_batches; ++b) {
        nn::Matrix x = rows_of(set.inputs, b * batch_size, batch_size);
        nn::Matrix y = rows_of(set.targets, b * batch_size, batch_size);
        for (double& v : y.data) v = agent.label_scaler.apply(v);
        auto grads = nn::backward(agent.net, x, y);
        nn::step(agent.net, grads, agent.train_cfg, agent.opt_state);
        if ((b + 1) % mdf == 0) {
            WeightSnapshot snap;
            snap.view_id = agent.view.view_id;
            snap.node_id = agent.node_id;
            snap.dispatch_index = (b + 1) / mdf - 1;
            snap.epoch = epoch;
            snap.cc_index = cc_index;
            snap.weights = agent.net.weights[0].data;
            snaps.push_back(std::move(snap));
        }
    }
    return snaps;
}

std::vector<WeightSnapshot> train_cc(LocalAgent& agent, const data::FeatureVectorSet& set,
                                     const DispatchPolicy& policy, std::size_t epoch,
                                     std::size_t cc_index) {
    policy.validate();
    return train_batches(agent, set, policy.cc_batches, policy.batch_size, policy.mdf, epoch,
                         cc_index);
}

double predict_mae(const LocalAgent& agent, const data::FeatureVectorSet& set) {
    if (set.rows() == 0) throw DataError("predict_mae: empty data");
    nn::Matrix pred = nn::forward(agent.net, set.inputs);
    double acc = 0.0;
    for (std::size_t r = 0; r < pred.rows; ++r)
        acc += std::fabs(agent.label_scaler.invert(pred.at(r, 0)) - set.targets.at(r, 0));
    return acc / static_cast<double>(pred.rows);
}

void install_first_layer(nn::DenseNet& net, const std::vector<double>& weights) {
    if (weights.size() != net.weights[0].size())
        throw InputError("install_first_layer: got " + std::to_string(weights.size()) +
                         " weights, layer holds " + std::to_string(net.weights[0].size()));
    net.weights[0].data = weights;
}

void install_first_layer(LocalAgent& agent, const std::vector<double>& weights) {
    install_first_layer(agent.net, weights);
}

std::size_t snapshot_wire_size(std::size_t weight_count) {
    return kSnapshotHeaderBytes + 4 * weight_count;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t numeric_node_id(const std::string& node_id) {
    std::uint32_t v = 0;
    for (char c : node_id)
        if (c >= '0' && c <= '9') v = v * 10 + static_cast<std::uint32_t>(c - '0');
    return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_snapshot(const WeightSnapshot& snap) {
    std::vector<std::uint8_t> out;
    out.reserve(snapshot_wire_size(snap.weights.size()));
    put_u32(out, static_cast<std::uint32_t>(snap.view_id) + 1);
    put_u32(out, numeric_node_id(snap.node_id));
    put_u32(out, static_cast<std::uint32_t>(snap.dispatch_index));
    put_u32(out, static_cast<std::uint32_t>(snap.weights.size()));
    for (double w : snap.weights) {
        const float f = static_cast<float>(w);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        put_u32(out, bits);
    }
    return out;
}

WeightSnapshot deserialize_snapshot(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kSnapshotHeaderBytes)
        throw InputError("snapshot blob shorter than its header");
    WeightSnapshot snap;
    const std::uint32_t view = get_u32(bytes.data());
    if (view < 1 || view > 3) throw InputError("snapshot header has invalid view tag");
    snap.view_id = static_cast<data::ViewId>(view - 1);
    snap.node_id = "node_" + std::to_string(get_u32(bytes.data() + 4));
    snap.dispatch_index = get_u32(bytes.data() + 8);
    const std::uint32_t count = get_u32(bytes.data() + 12);
    if (bytes.size() != snapshot_wire_size(count))
        throw InputError("snapshot blob length does not match its header");
    snap.weights.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(bytes.data() + kSnapshotHeaderBytes + 4 * i);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        snap.weights[i] = static_cast<double>(f);
    }
    return snap;
}

}  // namespace corrfl::client
