#pragma once

// Orchestrates the full use case: local training under normal activity,
// loss of the CO2 view's uplink, validation-phase retraining of the
// available groups, reconstruction of the missing first layer, and pure
// test-phase evaluation. Phases are strictly ordered.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "corrfl/clients.hpp"
#include "corrfl/data.hpp"
#include "corrfl/reporting.hpp"
#include "corrfl/server.hpp"

namespace corrfl::scenario {

// Pure accounting for dispatch volumes; no training involved.
std::size_t dispatches_per_cc(std::size_t cc_batches, std::size_t mdf);
std::size_t pool_triples(std::size_t delay_epochs, std::size_t cc_per_epoch,
                         std::size_t per_cc);
// Raw pooled-weight volume at the server, 8 bytes per weight as reported.
std::size_t pool_serialized_bytes(std::size_t triples, const std::vector<std::size_t>& widths,
                                  std::size_t bytes_per_weight = 8);

struct ScenarioConfig {
    std::size_t cc_per_epoch = 15;
    std::size_t delay = 1;  // d: local epochs before the server trains
    std::size_t mdf = 5;
    std::size_t ve = 1;  // validation epochs before reconstruction
    double activity_threshold = 7.0;
    std::size_t batch_size = 8;
    std::size_t cc_points = 2016;  // rows per communication cycle (paper scale: 20160)
    std::uint64_t seed = 1;

    double local_lr = 1e-3;
    std::size_t corrfl_batch = 9;
    std::size_t corrfl_epochs = 12;
    double corrfl_lr = 1e-3;

    std::string source = "synthetic";  // synthetic | csv
    std::string csv_path;
    data::SynthConfig synth;

    bool reconstruct_from_epoch_mean = false;  // default: latest snapshots
    bool parallel_agents = false;

    void validate() const;
    std::map<std::string, std::string> echo() const;  // fully resolved key-value view
};

// m3 loses its uplink when the shift regime starts; CO2 labels keep flowing.
struct AvailabilitySchedule {
    data::ViewId missing_view = data::ViewId::m3;
    bool uplink_cut_after_training = true;
    bool downlink_up = true;
    bool labels_still_flow = true;
};

struct PhaseResult {
    std::map<std::string, double> mae;  // model name -> MAE, ppm
    std::map<std::string, std::vector<double>> epoch_mae;
    std::size_t snapshots_dispatched = 0;
};

class ScenarioRun {
public:
    explicit ScenarioRun(const ScenarioConfig& cfg);

    void run_training_phase();
    void run_validation_phase();
    void run_test_phase();
    // Convenience: all three in order, then the report.
    report::MetricsReport run_all();

    report::MetricsReport build_report() const;

    const PhaseResult& training_result() const;
    const PhaseResult& validation_result() const;
    const PhaseResult& test_result() const;
    const report::ExchangeLedger& ledger() const { return ledger_; }
    const server::TrainTrace& corrfl_log() const;
    std::size_t pool_size() const { return pool_.size(); }
    const ScenarioConfig& config() const { return cfg_; }
    const AvailabilitySchedule& schedule() const { return schedule_; }

    // Data-shape introspection used by tests.
    std::size_t train_rows() const;
    std::size_t validation_rows() const;
    std::size_t test_rows() const;

private:
    enum class Stage { ready, trained, validated, tested };

    struct AgentSlot {
        client::LocalAgent agent;
        data::FeatureVectorSet train, validation, test;
        std::vector<double> latest_snapshot;
        std::vector<double> epoch_mean_snapshot;
        bool available = true;
    };

    void prepare_data();
    void require_stage(Stage need, const char* op) const;
    std::vector<double> reconstruction_input(std::size_t view_index) const;
    client::LocalAgent rebuild_missing_model(const std::vector<double>& first_layer) const;
    double group_mae(data::ViewId view, const data::FeatureVectorSet AgentSlot::*set) const;

    ScenarioConfig cfg_;
    AvailabilitySchedule schedule_;
    Stage stage_ = Stage::ready;

    std::vector<data::ViewSpec> views_;
    std::vector<AgentSlot> slots_;  // four m1 nodes, then m2, then m3
    std::size_t missing_slot_ = 0;

    client::LocalAgent benchmark_;      // m3 frozen at the uplink cut
    client::LocalAgent corrfl_model_;   // benchmark body + reconstructed first layer
    client::LocalAgent oracle_m3_;      // diagnostic: m3 as if it had stayed online
    bool have_models_ = false;

    server::CorrNet corr_net_;
    std::vector<server::SnapshotTriple> pool_;
    server::TrainTrace corr_trace_;
    std::uint64_t corr_shuffle_seed_ = 0;

    report::ExchangeLedger ledger_;
    PhaseResult training_result_, validation_result_, test_result_;
};

}  // namespace corrfl::scenario
