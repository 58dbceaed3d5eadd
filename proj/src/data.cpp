#include "corrfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace corrfl::data {

const char* feature_name(Feature f) {
    switch (f) {
        case Feature::humidity: return "humidity";
        case Feature::temperature: return "temperature";
        case Feature::pressure: return "pressure";
        case Feature::activity: return "activity";
        case Feature::co2: return "co2";
    }
    return "?";
}

std::optional<Feature> parse_feature(const std::string& name) {
    for (Feature f : {Feature::humidity, Feature::temperature, Feature::pressure,
                      Feature::activity, Feature::co2})
        if (name == feature_name(f)) return f;
    return std::nullopt;
}

const char* view_name(ViewId v) {
    switch (v) {
        case ViewId::m1: return "m1";
        case ViewId::m2: return "m2";
        case ViewId::m3: return "m3";
    }
    return "?";
}

void ViewSpec::validate() const {
    if (node_ids.empty()) throw ConfigError("view has no nodes");
    if (engineered_width != 7 * raw_features.size())
        throw ConfigError(std::string(view_name(view_id)) +
                          ": engineered width must be 7 per raw feature");
    if (hidden_width != 16) throw ConfigError("hidden width is fixed at 16");
}

std::vector<ViewSpec> default_views() {
    ViewSpec m1{ViewId::m1,
                {"node_913", "node_914", "node_915", "node_916"},
                {Feature::humidity, Feature::temperature, Feature::pressure, Feature::activity},
                28,
                16};
    ViewSpec m2{ViewId::m2,
                {"node_920"},
                {Feature::humidity, Feature::temperature, Feature::pressure},
                21,
                16};
    ViewSpec m3{ViewId::m3,
                {"node_924"},
                {Feature::humidity, Feature::temperature, Feature::pressure, Feature::co2},
                28,
                16};
    return {m1, m2, m3};
}

std::size_t AlignedFrame::length() const {
    for (const auto& [node, feats] : columns)
        for (const auto& [f, col] : feats) return col.size();
    return 0;
}

const std::vector<double>& AlignedFrame::column(const std::string& node, Feature f) const {
    auto n = columns.find(node);
    if (n == columns.end()) throw DataError("frame has no node " + node);
    auto c = n->second.find(f);
    if (c == n->second.end())
        throw DataError("node " + node + " has no feature " + feature_name(f));
    return c->second;
}

bool AlignedFrame::has_column(const std::string& node, Feature f) const {
    auto n = columns.find(node);
    return n != columns.end() && n->second.count(f) > 0;
}

namespace {

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

}  // namespace

AlignedFrame align_resample_impute(const std::vector<SensorRecord>& records,
                                   const std::vector<std::string>& expected_nodes) {
    // Per node, per feature: observations as (timestamp, value).
    std::map<std::string, std::map<Feature, std::vector<std::pair<std::int64_t, double>>>> obs;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> span;
    for (const auto& rec : records) {
        for (const auto& [f, v] : rec.values) obs[rec.node_id][f].push_back({rec.timestamp, v});
        auto it = span.find(rec.node_id);
        if (it == span.end()) span[rec.node_id] = {rec.timestamp, rec.timestamp};
        else {
            it->second.first = std::min(it->second.first, rec.timestamp);
            it->second.second = std::max(it->second.second, rec.timestamp);
        }
    }
    for (const auto& node : expected_nodes)
        if (obs.find(node) == obs.end())
            throw DataError("no records for node " + node);
    if (obs.empty()) throw DataError("no records at all");

    // Latest common start, earliest common end.
    std::int64_t start = span.begin()->second.first;
    std::int64_t last = span.begin()->second.second;
    for (const auto& [node, s] : span) {
        start = std::max(start, s.first);
        last = std::min(last, s.second);
    }
    if (last < start) throw DataError("node streams have no overlapping span");
    const std::size_t len = static_cast<std::size_t>((last - start) / kGranularitySeconds) + 1;

    AlignedFrame frame;
    frame.start_timestamp = start;
    for (auto& [node, feats] : obs) {
        for (auto& [f, points] : feats) {
            std::stable_sort(points.begin(), points.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            std::vector<double> col(len, std::numeric_limits<double>::quiet_NaN());
            std::vector<double> observed;
            observed.reserve(points.size());
            for (const auto& [ts, v] : points) {
                observed.push_back(v);
                if (ts < start || ts > last) continue;
                // Last observation within each minute wins.
                col[static_cast<std::size_t>((ts - start) / kGranularitySeconds)] = v;
            }
            const double med = median_of(observed);
            for (double& v : col)
                if (std::isnan(v)) v = med;
            frame.columns[node][f] = std::move(col);
        }
    }
    return frame;
}

Scaler fit_scaler(const std::vector<double>& column, const std::vector<std::size_t>& rows) {
    Scaler s;
    if (rows.empty()) return s;
    double sum = 0.0;
    for (std::size_t i : rows) sum += column[i];
    s.mean = sum / static_cast<double>(rows.size());
    double sq = 0.0;
    for (std::size_t i : rows) {
        const double d = column[i] - s.mean;
        sq += d * d;
    }
    s.stdev = std::sqrt(sq / static_cast<double>(rows.size()));
    if (s.stdev < 1e-12) s.stdev = 1.0;  // constant column
    return s;
}

const Scaler& FrameScalers::get(const std::string& node, Feature f) const {
    auto n = by_node.find(node);
    if (n == by_node.end()) throw DataError("no scaler for node " + node);
    auto c = n->second.find(f);
    if (c == n->second.end())
        throw DataError("no scaler for " + node + "/" + feature_name(f));
    return c->second;
}

FrameScalers FrameScalers::fit(const AlignedFrame& frame, const std::vector<std::size_t>& rows) {
    FrameScalers out;
    for (const auto& [node, feats] : frame.columns)
        for (const auto& [f, col] : feats) out.by_node[node][f] = fit_scaler(col, rows);
    return out;
}

FeatureVectorSet FeatureVectorSet::slice(std::size_t first_row, std::size_t count) const {
    if (first_row + count > rows()) throw DataError("slice exceeds available rows");
    FeatureVectorSet out;
    out.inputs = nn::Matrix(count, inputs.cols);
    out.targets = nn::Matrix(count, 1);
    for (std::size_t r = 0; r < count; ++r) {
        std::copy_n(inputs.row(first_row + r), inputs.cols, out.inputs.row(r));
        out.targets.at(r, 0) = targets.at(first_row + r, 0);
        out.timestamps.push_back(timestamps[first_row + r]);
        out.frame_indices.push_back(frame_indices[first_row + r]);
    }
    return out;
}

FeatureVectorSet FeatureVectorSet::select_frame_indices(
    const std::vector<std::size_t>& sorted_set) const {
    FeatureVectorSet out;
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < rows(); ++r)
        if (std::binary_search(sorted_set.begin(), sorted_set.end(), frame_indices[r]))
            keep.push_back(r);
    out.inputs = nn::Matrix(keep.size(), inputs.cols);
    out.targets = nn::Matrix(keep.size(), 1);
    for (std::size_t r = 0; r < keep.size(); ++r) {
        std::copy_n(inputs.row(keep[r]), inputs.cols, out.inputs.row(r));
        out.targets.at(r, 0) = targets.at(keep[r], 0);
        out.timestamps.push_back(timestamps[keep[r]]);
        out.frame_indices.push_back(frame_indices[keep[r]]);
    }
    return out;
}

FeatureVectorSet engineer_features(const AlignedFrame& frame, const ViewSpec& view,
                                   const std::string& node_id,
                                   const std::string& label_node_id,
                                   const FeatureParams& params, const FrameScalers* scalers) {
    const std::size_t len = frame.length();
    if (len <= params.history_steps + params.horizon_steps)
        throw DataError("frame too short for history plus horizon");
    const std::vector<double>& labels = frame.column(label_node_id, Feature::co2);

    const std::size_t lag_count = params.history_steps + 1;
    const std::size_t width = view.raw_features.size() * (lag_count + 1);
    const std::size_t first = params.history_steps;
    const std::size_t last = len - 1 - params.horizon_steps;
    const std::size_t n_rows = last - first + 1;

    FeatureVectorSet out;
    out.inputs = nn::Matrix(n_rows, width);
    out.targets = nn::Matrix(n_rows, 1);
    out.timestamps.reserve(n_rows);
    out.frame_indices.reserve(n_rows);

    std::vector<const std::vector<double>*> cols;
    std::vector<Scaler> col_scalers;
    for (Feature f : view.raw_features) {
        cols.push_back(&frame.column(node_id, f));
        col_scalers.push_back(scalers ? scalers->get(node_id, f) : Scaler{});
    }

    for (std::size_t t = first; t <= last; ++t) {
        double* row = out.inputs.row(t - first);
        std::size_t c = 0;
        for (std::size_t fi = 0; fi < cols.size(); ++fi) {
            const std::vector<double>& col = *cols[fi];
            const Scaler& sc = col_scalers[fi];
            for (std::size_t lag = 0; lag < lag_count; ++lag)
                row[c++] = sc.apply(col[t - params.history_steps + lag]);
            row[c++] = sc.apply(col[t]) - sc.apply(col[t - params.history_steps]);
        }
        out.targets.at(t - first, 0) = labels[t + params.horizon_steps];
        out.timestamps.push_back(frame.timestamp_at(t));
        out.frame_indices.push_back(t);
    }
    return out;
}

ActivitySplit split_by_activity(const AlignedFrame& frame, double threshold) {
    const std::size_t len = frame.length();
    std::vector<bool> shifted(len, false);
    bool any_activity = false;
    for (const auto& [node, feats] : frame.columns) {
        auto it = feats.find(Feature::activity);
        if (it == feats.end()) continue;
        any_activity = true;
        for (std::size_t i = 0; i < len; ++i)
            if (it->second[i] > threshold) shifted[i] = true;
    }
    if (!any_activity) throw ConfigError("no node carries the activity feature");
    ActivitySplit split;
    for (std::size_t i = 0; i < len; ++i)
        (shifted[i] ? split.shift_indices : split.train_indices).push_back(i);
    return split;
}

void SynthConfig::validate() const {
    if (meeting_rate_per_min < 0 || meeting_rate_per_min > 1)
        throw ConfigError("meeting_rate_per_min must be in [0,1]");
    if (!(k_occ > 0) || !(k_vent > 0)) throw ConfigError("co2 gains must be positive");
    if (k_vent >= 1) throw ConfigError("k_vent must be below 1");
    for (double s : {noise_std_temperature, noise_std_humidity, noise_std_pressure,
                     noise_std_co2, activity_noise})
        if (s < 0) throw ConfigError("noise std must be non-negative");
    if (meeting_min_minutes == 0 || meeting_max_minutes < meeting_min_minutes)
        throw ConfigError("meeting duration range is invalid");
    if (!(small_meeting_prob >= 0 && small_meeting_prob <= 1))
        throw ConfigError("small_meeting_prob must be in [0,1]");
}

double co2_step(double co2, double occupancy, const SynthConfig& cfg) {
    return co2 + cfg.k_occ * occupancy - cfg.k_vent * (co2 - cfg.co2_baseline_ppm);
}

std::vector<SensorRecord> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto views = default_views();
    struct NodePlan {
        std::string id;
        std::vector<Feature> features;
    };
    std::vector<NodePlan> nodes;
    for (const auto& v : views)
        for (const auto& id : v.node_ids) nodes.push_back({id, v.raw_features});

    std::vector<SensorRecord> out;
    out.reserve(cfg.duration_minutes * nodes.size());

    double co2 = cfg.co2_baseline_ppm;
    double pressure = 101325.0;
    double occ_smooth = 0.0;
    std::size_t meeting_left = 0;
    double meeting_size = 0.0;

    for (std::size_t minute = 0; minute < cfg.duration_minutes; ++minute) {
        if (meeting_left > 0) {
            --meeting_left;
            if (meeting_left == 0) meeting_size = 0.0;
        } else if (cfg.meeting_rate_per_min > 0 && uni(rng) < cfg.meeting_rate_per_min) {
            const bool small = uni(rng) < cfg.small_meeting_prob;
            std::uniform_int_distribution<int> size_dist(small ? 2 : 8, small ? 5 : 12);
            meeting_size = static_cast<double>(size_dist(rng));
            std::uniform_int_distribution<std::size_t> dur(cfg.meeting_min_minutes,
                                                           cfg.meeting_max_minutes);
            meeting_left = dur(rng);
        }
        const double occupancy = meeting_left > 0 ? meeting_size : 0.0;

        co2 = co2_step(co2, occupancy, cfg);
        pressure += -0.001 * (pressure - 101325.0) + 2.0 * gauss(rng);
        occ_smooth = 0.98 * occ_smooth + 0.02 * occupancy;

        const double day_phase =
            2.0 * 3.14159265358979323846 * static_cast<double>(minute % 1440) / 1440.0;
        const double temp_true = 21.5 + 0.06 * occ_smooth + 0.8 * std::sin(day_phase);
        const double hum_true = 34.0 + 0.15 * occ_smooth + 1.5 * std::sin(day_phase + 1.0);

        const std::int64_t ts =
            cfg.start_timestamp + static_cast<std::int64_t>(minute) * kGranularitySeconds;
        for (const auto& node : nodes) {
            SensorRecord rec;
            rec.timestamp = ts;
            rec.node_id = node.id;
            for (Feature f : node.features) {
                double v = 0.0;
                switch (f) {
                    case Feature::humidity:
                        v = hum_true + cfg.noise_std_humidity * gauss(rng);
                        break;
                    case Feature::temperature:
                        v = temp_true + cfg.noise_std_temperature * gauss(rng);
                        break;
                    case Feature::pressure:
                        v = pressure + cfg.noise_std_pressure * gauss(rng);
                        break;
                    case Feature::activity: {
                        if (occupancy == 0.0) {
                            v = 0.0;
                        } else {
                            const double raw =
                                std::round(occupancy + cfg.activity_noise * gauss(rng));
                            v = std::clamp(raw, 0.0, 12.0);
                        }
                        break;
                    }
                    case Feature::co2:
                        v = co2 + cfg.noise_std_co2 * gauss(rng);
                        break;
                }
                rec.values[f] = v;
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<SensorRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "timestamp,node_id,feature,value\n";
    char buf[64];
    for (const auto& rec : records) {
        for (const auto& [f, v] : rec.values) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << rec.timestamp << ',' << rec.node_id << ',' << feature_name(f) << ',' << buf
                << '\n';
        }
    }
    if (!out.good()) throw IoError("write failed: " + path.string());
}

std::vector<SensorRecord> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file: " + path.string());
    if (line.ends_with('\r')) line.pop_back();
    if (line != "timestamp,node_id,feature,value")
        throw DataError("unexpected CSV header in " + path.string());
    std::vector<SensorRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string ts_s, node, feat_s, val_s;
        if (!std::getline(ss, ts_s, ',') || !std::getline(ss, node, ',') ||
            !std::getline(ss, feat_s, ',') || !std::getline(ss, val_s))
            throw DataError("malformed CSV line " + std::to_string(line_no) + " in " +
                            path.string());
        auto feature = parse_feature(feat_s);
        if (!feature)
            throw DataError("unknown feature '" + feat_s + "' at line " +
                            std::to_string(line_no));
        SensorRecord rec;
        rec.timestamp = std::stoll(ts_s);
        rec.node_id = node;
        rec.values[*feature] = std::stod(val_s);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace corrfl::data
