#include "corrfl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <thread>

namespace corrfl::scenario {

std::size_t dispatches_per_cc(std::size_t cc_batches, std::size_t mdf) {
    if (mdf == 0) throw ConfigError("mdf must be at least 1");
    return cc_batches / mdf;
}

std::size_t pool_triples(std::size_t delay_epochs, std::size_t cc_per_epoch,
                         std::size_t per_cc) {
    return delay_epochs * cc_per_epoch * per_cc;
}

std::size_t pool_serialized_bytes(std::size_t triples, const std::vector<std::size_t>& widths,
                                  std::size_t bytes_per_weight) {
    std::size_t per_triple = 0;
    for (std::size_t w : widths) per_triple += w;
    return triples * per_triple * bytes_per_weight;
}

void ScenarioConfig::validate() const {
    if (delay < 1) throw ConfigError("delay must be at least 1");
    if (ve < 1) throw ConfigError("ve must be at least 1");
    if (mdf < 1) throw ConfigError("mdf must be at least 1");
    if (cc_per_epoch < 1) throw ConfigError("cc_per_epoch must be at least 1");
    if (activity_threshold < 0) throw ConfigError("activity_threshold must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cc_points < batch_size || cc_points % batch_size != 0)
        throw ConfigError("cc_points must be a positive multiple of batch_size");
    if (!(local_lr > 0) || !(corrfl_lr > 0)) throw ConfigError("learning rates must be positive");
    if (corrfl_batch < 1) throw ConfigError("corrfl_batch must be at least 1");
    if (corrfl_epochs < 1) throw ConfigError("corrfl_epochs must be at least 1");
    if (source != "synthetic" && source != "csv")
        throw ConfigError("source must be 'synthetic' or 'csv'");
    if (source == "csv" && csv_path.empty()) throw ConfigError("csv source needs csv_path");
    synth.validate();
}

std::map<std::string, std::string> ScenarioConfig::echo() const {
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::map<std::string, std::string> kv;
    kv["cc_per_epoch"] = std::to_string(cc_per_epoch);
    kv["delay"] = std::to_string(delay);
    kv["mdf"] = std::to_string(mdf);
    kv["ve"] = std::to_string(ve);
    kv["activity_threshold"] = fmt(activity_threshold);
    kv["batch_size"] = std::to_string(batch_size);
    kv["cc_points"] = std::to_string(cc_points);
    kv["seed"] = std::to_string(seed);
    kv["local_lr"] = fmt(local_lr);
    kv["corrfl_batch"] = std::to_string(corrfl_batch);
    kv["corrfl_epochs"] = std::to_string(corrfl_epochs);
    kv["corrfl_lr"] = fmt(corrfl_lr);
    kv["source"] = source;
    kv["csv_path"] = csv_path;
    kv["reconstruct_from_epoch_mean"] = reconstruct_from_epoch_mean ? "true" : "false";
    kv["parallel_agents"] = parallel_agents ? "true" : "false";
    kv["synth_duration_minutes"] = std::to_string(synth.duration_minutes);
    kv["synth_meeting_rate_per_min"] = fmt(synth.meeting_rate_per_min);
    kv["synth_small_meeting_prob"] = fmt(synth.small_meeting_prob);
    kv["synth_k_occ"] = fmt(synth.k_occ);
    kv["synth_k_vent"] = fmt(synth.k_vent);
    kv["synth_co2_baseline_ppm"] = fmt(synth.co2_baseline_ppm);
    return kv;
}

namespace {

void run_jobs(std::vector<std::function<void()>>& jobs, bool parallel) {
    if (!parallel || jobs.size() < 2) {
        for (auto& job : jobs) job();
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(jobs.size());
    for (auto& job : jobs) threads.emplace_back(job);
    for (auto& t : threads) t.join();
}

}  // namespace

ScenarioRun::ScenarioRun(const ScenarioConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    views_ = data::default_views();
    prepare_data();
}

void ScenarioRun::prepare_data() {
    // Dataset seed equals the run seed; the parameter draws use a decoupled
    // stream so weights do not replay the sensor noise sequence.
    std::vector<data::SensorRecord> records;
    if (cfg_.source == "synthetic") {
        data::SynthConfig synth = cfg_.synth;
        synth.seed = cfg_.seed;
        records = data::synth_generate(synth);
    } else {
        records = data::read_csv(cfg_.csv_path);
    }
    std::vector<std::string> expected;
    for (const auto& v : views_)
        expected.insert(expected.end(), v.node_ids.begin(), v.node_ids.end());
    auto frame = data::align_resample_impute(records, expected);

    auto split = data::split_by_activity(frame, cfg_.activity_threshold);
    const std::size_t half = split.shift_indices.size() / 2;
    std::vector<std::size_t> val_idx(split.shift_indices.begin(),
                                     split.shift_indices.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::size_t> test_idx(split.shift_indices.begin() + static_cast<std::ptrdiff_t>(half),
                                      split.shift_indices.end());

    auto scalers = data::FrameScalers::fit(frame, split.train_indices);
    const std::string label_node = views_[2].node_ids[0];
    auto label_scaler =
        data::fit_scaler(frame.column(label_node, data::Feature::co2), split.train_indices);

    std::mt19937_64 param_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<nn::DenseNet> initial_nets;
    for (const auto& view : views_) initial_nets.push_back(client::make_view_net(view, param_rng));
    corr_net_ = server::make_corr_net(
        {views_[0].first_layer_weight_count(), views_[1].first_layer_weight_count(),
         views_[2].first_layer_weight_count()},
        param_rng);
    corr_shuffle_seed_ = param_rng();

    nn::TrainConfig train_cfg;
    train_cfg.learning_rate = cfg_.local_lr;
    train_cfg.batch_size = cfg_.batch_size;

    for (std::size_t v = 0; v < views_.size(); ++v) {
        for (const auto& node : views_[v].node_ids) {
            AgentSlot slot;
            slot.agent =
                client::make_agent(views_[v], node, initial_nets[v], train_cfg, label_scaler);
            auto full = data::engineer_features(frame, views_[v], node, label_node, {}, &scalers);
            slot.train = full.select_frame_indices(split.train_indices);
            slot.validation = full.select_frame_indices(val_idx);
            slot.test = full.select_frame_indices(test_idx);
            slot.available = views_[v].view_id != schedule_.missing_view;
            slots_.push_back(std::move(slot));
        }
    }
    for (std::size_t s = 0; s < slots_.size(); ++s)
        if (!slots_[s].available) missing_slot_ = s;

    const std::size_t need = cfg_.cc_per_epoch * cfg_.cc_points;
    if (train_rows() < need)
        throw DataError("training split has " + std::to_string(train_rows()) +
                        " rows, one epoch needs " + std::to_string(need));
}

void ScenarioRun::require_stage(Stage need, const char* op) const {
    if (stage_ != need)
        throw OrderingError(std::string(op) + ": phases must run in order train, validate, test");
}

std::size_t ScenarioRun::train_rows() const { return slots_.front().train.rows(); }
std::size_t ScenarioRun::validation_rows() const { return slots_.front().validation.rows(); }
std::size_t ScenarioRun::test_rows() const { return slots_.front().test.rows(); }

double ScenarioRun::group_mae(data::ViewId view,
                              const data::FeatureVectorSet AgentSlot::*set) const {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& slot : slots_) {
        if (slot.agent.view.view_id != view) continue;
        acc += client::predict_mae(slot.agent, slot.*set);
        ++count;
    }
    return acc / static_cast<double>(count);
}

void ScenarioRun::run_training_phase() {
    require_stage(Stage::ready, "run_training_phase");

    const std::size_t cc_batches = cfg_.cc_points / cfg_.batch_size;
    client::DispatchPolicy policy{cfg_.mdf, cfg_.batch_size, cc_batches};
    const std::size_t per_cc = dispatches_per_cc(cc_batches, cfg_.mdf);

    std::vector<std::vector<client::WeightSnapshot>> collected(slots_.size());
    std::map<std::string, std::vector<double>> cc_mae;

    for (std::size_t epoch = 0; epoch < cfg_.delay; ++epoch) {
        for (std::size_t cc = 0; cc < cfg_.cc_per_epoch; ++cc) {
            std::vector<std::vector<client::WeightSnapshot>> batch_snaps(slots_.size());
            std::vector<std::function<void()>> jobs;
            for (std::size_t s = 0; s < slots_.size(); ++s)
                jobs.push_back([&, s] {
                    auto slice = slots_[s].train.slice(cc * cfg_.cc_points, cfg_.cc_points);
                    batch_snaps[s] =
                        client::train_cc(slots_[s].agent, slice, policy, epoch, cc);
                });
            run_jobs(jobs, cfg_.parallel_agents);
            for (std::size_t s = 0; s < slots_.size(); ++s)
                collected[s].insert(collected[s].end(), batch_snaps[s].begin(),
                                    batch_snaps[s].end());
            for (const auto& view : views_) {
                double acc = 0.0;
                std::size_t n = 0;
                for (auto& slot : slots_) {
                    if (slot.agent.view.view_id != view.view_id) continue;
                    auto slice = slot.train.slice(cc * cfg_.cc_points, cfg_.cc_points);
                    acc += client::predict_mae(slot.agent, slice);
                    ++n;
                }
                cc_mae[data::view_name(view.view_id)].push_back(acc / static_cast<double>(n));
            }
        }
    }

    const std::size_t total_dispatches = pool_triples(cfg_.delay, cfg_.cc_per_epoch, per_cc);
    for (std::size_t s = 0; s < slots_.size(); ++s)
        if (collected[s].size() != total_dispatches)
            throw Error("dispatch misalignment in training phase");

    pool_.clear();
    pool_.reserve(total_dispatches);
    for (std::size_t k = 0; k < total_dispatches; ++k) {
        server::SnapshotTriple triple;
        triple.dispatch_index = k;
        std::vector<std::vector<double>> m1_members;
        for (std::size_t s = 0; s < slots_.size(); ++s)
            if (slots_[s].agent.view.view_id == data::ViewId::m1)
                m1_members.push_back(collected[s][k].weights);
        triple.views.push_back(server::fedavg(m1_members));
        for (std::size_t s = 0; s < slots_.size(); ++s)
            if (slots_[s].agent.view.view_id == data::ViewId::m2)
                triple.views.push_back(collected[s][k].weights);
        for (std::size_t s = 0; s < slots_.size(); ++s)
            if (slots_[s].agent.view.view_id == data::ViewId::m3)
                triple.views.push_back(collected[s][k].weights);
        pool_.push_back(std::move(triple));
    }

    for (std::size_t s = 0; s < slots_.size(); ++s)
        if (!collected[s].empty()) slots_[s].latest_snapshot = collected[s].back().weights;

    if (!pool_.empty()) {
        server::CorrTrainConfig corr_cfg;
        corr_cfg.optim.learning_rate = cfg_.corrfl_lr;
        corr_cfg.batch_size = cfg_.corrfl_batch;
        corr_cfg.epochs = cfg_.corrfl_epochs;
        corr_cfg.shuffle_seed = corr_shuffle_seed_;
        corr_trace_ = server::corrfl_train(corr_net_, pool_, corr_cfg);
    }

    benchmark_ = slots_[missing_slot_].agent;  // frozen copy at the uplink cut
    oracle_m3_ = slots_[missing_slot_].agent;

    training_result_ = {};
    for (const auto& view : views_)
        training_result_.mae[data::view_name(view.view_id)] =
            group_mae(view.view_id, &AgentSlot::train);
    training_result_.epoch_mae = std::move(cc_mae);
    // The uplink carried one snapshot per agent per dispatch instant.
    training_result_.snapshots_dispatched = total_dispatches * slots_.size();

    stage_ = Stage::trained;
}

std::vector<double> ScenarioRun::reconstruction_input(std::size_t view_index) const {
    std::vector<std::vector<double>> members;
    for (const auto& slot : slots_) {
        if (static_cast<std::size_t>(slot.agent.view.view_id) != view_index) continue;
        if (!slot.available) continue;
        const auto& chosen = cfg_.reconstruct_from_epoch_mean && !slot.epoch_mean_snapshot.empty()
                                 ? slot.epoch_mean_snapshot
                                 : slot.latest_snapshot;
        if (chosen.empty()) throw DataError("no snapshot available for reconstruction input");
        members.push_back(chosen);
    }
    return server::fedavg(members);
}

client::LocalAgent ScenarioRun::rebuild_missing_model(
    const std::vector<double>& first_layer) const {
    client::LocalAgent model = benchmark_;
    client::install_first_layer(model, first_layer);
    return model;
}

void ScenarioRun::run_validation_phase() {
    require_stage(Stage::trained, "run_validation_phase");
    if (corr_trace_.iterations() == 0)
        throw OrderingError("run_validation_phase: central model was never trained");

    const std::size_t val_batches = validation_rows() / cfg_.batch_size;
    validation_result_ = {};
    auto& traces = validation_result_.epoch_mae;

    for (std::size_t epoch = 0; epoch < cfg_.ve; ++epoch) {
        std::vector<std::vector<client::WeightSnapshot>> epoch_snaps(slots_.size());
        std::vector<std::function<void()>> jobs;
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            if (!slots_[s].available) continue;
            jobs.push_back([&, s] {
                epoch_snaps[s] = client::train_batches(slots_[s].agent, slots_[s].validation,
                                                       val_batches, cfg_.batch_size, cfg_.mdf,
                                                       epoch, 0);
            });
        }
        // The oracle trains as if the uplink never dropped; nothing dispatches.
        jobs.push_back([&] {
            (void)client::train_batches(oracle_m3_, slots_[missing_slot_].validation,
                                        val_batches, cfg_.batch_size, cfg_.mdf, epoch, 0);
        });
        run_jobs(jobs, cfg_.parallel_agents);

        for (std::size_t s = 0; s < slots_.size(); ++s) {
            if (epoch_snaps[s].empty()) continue;
            auto& slot = slots_[s];
            std::vector<std::vector<double>> epoch_weights;
            for (const auto& snap : epoch_snaps[s]) {
                const std::size_t last_row =
                    (snap.dispatch_index + 1) * cfg_.mdf * cfg_.batch_size - 1;
                ledger_.append({slot.validation.timestamps[last_row], snap.view_id,
                                snap.node_id, client::snapshot_wire_size(snap.weights.size())});
                epoch_weights.push_back(snap.weights);
            }
            slot.latest_snapshot = epoch_snaps[s].back().weights;
            slot.epoch_mean_snapshot = server::fedavg(epoch_weights);
            validation_result_.snapshots_dispatched += epoch_snaps[s].size();
        }

        // Reconstruction uses the freshest dispatched weights; the central
        // model itself does not train during validation.
        auto w1 = reconstruction_input(0);
        auto w2 = reconstruction_input(1);
        auto reconstructed =
            server::reconstruct_missing(corr_net_, {{0, w1}, {1, w2}},
                                        static_cast<std::size_t>(schedule_.missing_view));
        corrfl_model_ = rebuild_missing_model(reconstructed);
        have_models_ = true;

        traces["m1"].push_back(group_mae(data::ViewId::m1, &AgentSlot::validation));
        traces["m2"].push_back(group_mae(data::ViewId::m2, &AgentSlot::validation));
        traces["m3_benchmark"].push_back(
            client::predict_mae(benchmark_, slots_[missing_slot_].validation));
        traces["m3_corrfl"].push_back(
            client::predict_mae(corrfl_model_, slots_[missing_slot_].validation));
        traces["m3"].push_back(client::predict_mae(oracle_m3_, slots_[missing_slot_].validation));
    }

    for (const auto& [model, series] : traces) validation_result_.mae[model] = series.back();
    stage_ = Stage::validated;
}

void ScenarioRun::run_test_phase() {
    require_stage(Stage::validated, "run_test_phase");
    test_result_ = {};
    test_result_.mae["m1"] = group_mae(data::ViewId::m1, &AgentSlot::test);
    test_result_.mae["m2"] = group_mae(data::ViewId::m2, &AgentSlot::test);
    test_result_.mae["m3_benchmark"] =
        client::predict_mae(benchmark_, slots_[missing_slot_].test);
    test_result_.mae["m3_corrfl"] = client::predict_mae(corrfl_model_, slots_[missing_slot_].test);
    test_result_.mae["m3"] = client::predict_mae(oracle_m3_, slots_[missing_slot_].test);
    stage_ = Stage::tested;
}

report::MetricsReport ScenarioRun::run_all() {
    run_training_phase();
    run_validation_phase();
    run_test_phase();
    return build_report();
}

const PhaseResult& ScenarioRun::training_result() const {
    if (stage_ < Stage::trained) throw OrderingError("training phase has not run");
    return training_result_;
}

const PhaseResult& ScenarioRun::validation_result() const {
    if (stage_ < Stage::validated) throw OrderingError("validation phase has not run");
    return validation_result_;
}

const PhaseResult& ScenarioRun::test_result() const {
    if (stage_ < Stage::tested) throw OrderingError("test phase has not run");
    return test_result_;
}

const server::TrainTrace& ScenarioRun::corrfl_log() const {
    if (stage_ < Stage::trained) throw OrderingError("central model has not trained");
    return corr_trace_;
}

report::MetricsReport ScenarioRun::build_report() const {
    if (stage_ != Stage::tested)
        throw OrderingError("build_report: run all three phases first");
    report::MetricsReport rep;
    rep.config_echo = cfg_.echo();
    for (const auto& [model, mae] : training_result_.mae)
        rep.phase_metrics["training"][model]["mae"] = mae;
    for (const auto& [model, mae] : validation_result_.mae)
        rep.phase_metrics["validation"][model]["mae"] = mae;
    for (const auto& [model, mae] : test_result_.mae)
        rep.phase_metrics["test"][model]["mae"] = mae;

    rep.p_c = validation_result_.mae.at("m3_corrfl");
    rep.p_b = validation_result_.mae.at("m3_benchmark");
    rep.ir = report::improvement_ratio(*rep.p_c, *rep.p_b);
    if (*rep.ir != 0.0) rep.pi = report::pi_metric(ledger_, *rep.ir);

    rep.exchanged_bytes = ledger_.total_bytes;
    rep.exchanged_snapshots = ledger_.count();
    rep.training_cc_mae = training_result_.epoch_mae;
    rep.validation_epoch_mae = validation_result_.epoch_mae;
    rep.loss_total = corr_trace_.total;
    rep.loss_l1 = corr_trace_.l1;
    rep.loss_l2 = corr_trace_.l2;
    rep.loss_l3 = corr_trace_.l3;
    rep.correlations = report::correlation_trace(corr_trace_);
    return rep;
}

}  // namespace corrfl::scenario
