#pragma once

// Sensor ingestion, alignment/resampling with median imputation, lag-based
// feature engineering, the activity-threshold regime split, and a synthetic
// generator for the office CO2 environment. Long-form CSV in/out.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corrfl/nn.hpp"

namespace corrfl::data {

enum class Feature { humidity, temperature, pressure, activity, co2 };

const char* feature_name(Feature f);
std::optional<Feature> parse_feature(const std::string& name);

// One observation batch from one node at one instant.
struct SensorRecord {
    std::int64_t timestamp = 0;  // seconds since epoch
    std::string node_id;
    std::map<Feature, double> values;
};

enum class ViewId { m1, m2, m3 };

const char* view_name(ViewId v);

// A model group's identity: its nodes, raw features, and network widths.
struct ViewSpec {
    ViewId view_id = ViewId::m1;
    std::vector<std::string> node_ids;
    std::vector<Feature> raw_features;
    std::size_t engineered_width = 0;  // 7 columns per raw feature
    std::size_t hidden_width = 16;

    std::size_t first_layer_weight_count() const { return hidden_width * engineered_width; }
    void validate() const;
};

// The deployment layout: m1 holds four activity nodes, m2 one environmental
// node, m3 one CO2 node.
std::vector<ViewSpec> default_views();

constexpr std::int64_t kGranularitySeconds = 60;

// Common 60 s timeline with per-node per-feature columns of equal length.
struct AlignedFrame {
    std::int64_t start_timestamp = 0;
    std::map<std::string, std::map<Feature, std::vector<double>>> columns;

    std::size_t length() const;
    std::int64_t timestamp_at(std::size_t idx) const {
        return start_timestamp + static_cast<std::int64_t>(idx) * kGranularitySeconds;
    }
    const std::vector<double>& column(const std::string& node, Feature f) const;
    bool has_column(const std::string& node, Feature f) const;
};

// expected_nodes, when given, is the full node set that must appear; a node
// without records is an ingestion error.
AlignedFrame align_resample_impute(const std::vector<SensorRecord>& records,
                                   const std::vector<std::string>& expected_nodes = {});

// Per node-and-feature standardization statistics.
struct Scaler {
    double mean = 0.0;
    double stdev = 1.0;
    double apply(double v) const { return (v - mean) / stdev; }
    double invert(double v) const { return v * stdev + mean; }
};

Scaler fit_scaler(const std::vector<double>& column, const std::vector<std::size_t>& rows);

struct FrameScalers {
    std::map<std::string, std::map<Feature, Scaler>> by_node;

    const Scaler& get(const std::string& node, Feature f) const;
    // Statistics over the given frame indices only (the training regime).
    static FrameScalers fit(const AlignedFrame& frame, const std::vector<std::size_t>& rows);
};

struct FeatureParams {
    std::size_t history_steps = 5;  // lags t-5 .. t inclusive: 6 values + 1 delta
    std::size_t horizon_steps = 5;  // target co2(t + 5)
};

// Engineered rows: inputs (scaled when scalers given), CO2 targets in ppm,
// anchor timestamps, and the frame index of each row's anchor.
struct FeatureVectorSet {
    nn::Matrix inputs;
    nn::Matrix targets;  // rows x 1, ppm
    std::vector<std::int64_t> timestamps;
    std::vector<std::size_t> frame_indices;

    std::size_t rows() const { return inputs.rows; }
    FeatureVectorSet slice(std::size_t first_row, std::size_t count) const;
    // Rows whose anchor frame index belongs to the sorted index set.
    FeatureVectorSet select_frame_indices(const std::vector<std::size_t>& sorted_set) const;
};

// Raw features come from node_id's columns; targets from label_node_id's CO2.
FeatureVectorSet engineer_features(const AlignedFrame& frame, const ViewSpec& view,
                                   const std::string& node_id,
                                   const std::string& label_node_id,
                                   const FeatureParams& params = {},
                                   const FrameScalers* scalers = nullptr);

struct ActivitySplit {
    std::vector<std::size_t> train_indices;  // sorted frame indices
    std::vector<std::size_t> shift_indices;
};

// Shift set: union over activity-bearing nodes of indices with activity
// strictly above threshold. Train set is the complement.
ActivitySplit split_by_activity(const AlignedFrame& frame, double threshold);

struct SynthConfig {
    std::size_t duration_minutes = 40320;  // 28 days
    std::int64_t start_timestamp = 1700000000;

    // Meeting process: idle minutes start a meeting with this probability.
    double meeting_rate_per_min = 1.0 / 220.0;
    double small_meeting_prob = 0.32;  // small 2..5 people, else large 8..12
    std::size_t meeting_min_minutes = 30;
    std::size_t meeting_max_minutes = 90;

    // CO2 recurrence: co2 += k_occ * occupancy - k_vent * (co2 - baseline).
    double co2_baseline_ppm = 420.0;
    double k_occ = 12.0;
    double k_vent = 0.08;

    double noise_std_temperature = 0.05;
    double noise_std_humidity = 0.3;
    double noise_std_pressure = 10.0;
    double noise_std_co2 = 5.0;
    double activity_noise = 0.8;

    std::uint64_t seed = 1;

    void validate() const;
};

// One CO2 step of the generator's recurrence; exposed so the dynamics'
// fixed point is directly testable.
double co2_step(double co2, double occupancy, const SynthConfig& cfg);

// Deterministic per seed. Emits one record per node per minute following the
// default view layout's feature assignment.
std::vector<SensorRecord> synth_generate(const SynthConfig& cfg);

// Long-form CSV: header `timestamp,node_id,feature,value`, UTF-8.
void write_csv(const std::filesystem::path& path, const std::vector<SensorRecord>& records);
std::vector<SensorRecord> read_csv(const std::filesystem::path& path);

}  // namespace corrfl::data
