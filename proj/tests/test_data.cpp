#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "corrfl/data.hpp"

using namespace corrfl;
using data::Feature;

namespace {

data::SensorRecord make_record(std::int64_t ts, const std::string& node, Feature f, double v) {
    data::SensorRecord r;
    r.timestamp = ts;
    r.node_id = node;
    r.values[f] = v;
    return r;
}

}  // namespace

TEST_CASE("align: gapless stream passes through") {
    std::vector<data::SensorRecord> recs;
    for (int i = 0; i < 4; ++i)
        recs.push_back(make_record(600 + 60 * i, "node_920", Feature::temperature, 20.0 + i));
    auto frame = data::align_resample_impute(recs);
    CHECK(frame.start_timestamp == 600);
    const auto& col = frame.column("node_920", Feature::temperature);
    REQUIRE(col.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(col[i] == 20.0 + i);
}

TEST_CASE("align: gap imputed with the feature median") {
    std::vector<data::SensorRecord> recs;
    recs.push_back(make_record(0, "node_920", Feature::humidity, 10.0));
    recs.push_back(make_record(120, "node_920", Feature::humidity, 30.0));
    auto frame = data::align_resample_impute(recs);
    const auto& col = frame.column("node_920", Feature::humidity);
    REQUIRE(col.size() == 3);
    CHECK(col[0] == 10.0);
    CHECK(col[1] == 20.0);  // median of {10, 30}
    CHECK(col[2] == 30.0);
}

TEST_CASE("align: frame starts at the latest common start") {
    std::vector<data::SensorRecord> recs;
    for (int i = 0; i < 10; ++i)
        recs.push_back(make_record(60 * i, "node_920", Feature::pressure, 101000.0));
    for (int i = 5; i < 10; ++i)
        recs.push_back(make_record(60 * i, "node_924", Feature::pressure, 101500.0));
    auto frame = data::align_resample_impute(recs);
    CHECK(frame.start_timestamp == 300);
    CHECK(frame.length() == 5);
}

TEST_CASE("align: missing node stream names the node") {
    std::vector<data::SensorRecord> recs{make_record(0, "node_920", Feature::humidity, 1.0)};
    try {
        data::align_resample_impute(recs, {"node_920", "node_924"});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("node_924") != std::string::npos);
    }
}

TEST_CASE("align: imputation never changes observed values") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> val(0.0, 50.0);
    std::vector<data::SensorRecord> recs;
    std::map<std::size_t, double> observed;
    for (std::size_t i = 0; i < 200; ++i) {
        if (rng() % 4 == 0) continue;  // gap
        const double v = val(rng);
        observed[i] = v;
        recs.push_back(make_record(static_cast<std::int64_t>(60 * i), "n", Feature::co2, v));
    }
    auto frame = data::align_resample_impute(recs);
    const auto& col = frame.column("n", Feature::co2);
    const std::size_t offset =
        static_cast<std::size_t>(frame.start_timestamp / data::kGranularitySeconds);
    for (const auto& [i, v] : observed) CHECK(col[i - offset] == v);
}

namespace {

// Frame with one raw feature plus a CO2 label column, values chosen per test.
data::AlignedFrame ramp_frame(std::size_t len) {
    data::AlignedFrame frame;
    frame.start_timestamp = 0;
    std::vector<double> ramp(len), labels(len);
    for (std::size_t i = 0; i < len; ++i) {
        ramp[i] = 400.0 + 10.0 * static_cast<double>(i);
        labels[i] = 500.0 + static_cast<double>(i);
    }
    frame.columns["node_a"][Feature::temperature] = ramp;
    frame.columns["node_b"][Feature::co2] = labels;
    return frame;
}

data::ViewSpec single_feature_view() {
    data::ViewSpec v;
    v.view_id = data::ViewId::m2;
    v.node_ids = {"node_a"};
    v.raw_features = {Feature::temperature};
    v.engineered_width = 7;
    return v;
}

}  // namespace

TEST_CASE("engineer: constant series yields constant lags and zero delta") {
    data::AlignedFrame frame;
    frame.start_timestamp = 0;
    frame.columns["node_a"][Feature::temperature] = std::vector<double>(20, 7.5);
    frame.columns["node_b"][Feature::co2] = std::vector<double>(20, 600.0);
    auto fvs = data::engineer_features(frame, single_feature_view(), "node_a", "node_b");
    REQUIRE(fvs.inputs.cols == 7);
    REQUIRE(fvs.rows() == 10);  // 20 - 5 - 5
    for (std::size_t r = 0; r < fvs.rows(); ++r) {
        for (std::size_t c = 0; c < 6; ++c) CHECK(fvs.inputs.at(r, c) == 7.5);
        CHECK(fvs.inputs.at(r, 6) == 0.0);
        CHECK(fvs.targets.at(r, 0) == 600.0);
    }
}

TEST_CASE("engineer: lag block and delta for a ramp") {
    auto frame = ramp_frame(12);
    auto fvs = data::engineer_features(frame, single_feature_view(), "node_a", "node_b");
    REQUIRE(fvs.rows() == 2);
    // Anchor t=5: lags are the series at t-5..t, delta is f(t)-f(t-5).
    for (std::size_t c = 0; c < 6; ++c)
        CHECK(fvs.inputs.at(0, c) == 400.0 + 10.0 * static_cast<double>(c));
    CHECK(fvs.inputs.at(0, 6) == 50.0);
    CHECK(fvs.targets.at(0, 0) == 510.0);  // co2 at t+5
    CHECK(fvs.timestamps[0] == 300);
}

TEST_CASE("engineer: m1 layout gives 28 inputs and 448 first-layer weights") {
    auto views = data::default_views();
    const auto& m1 = views[0];
    CHECK(m1.engineered_width == 28);
    CHECK(m1.first_layer_weight_count() == 448);
    CHECK(views[1].engineered_width == 21);
    CHECK(views[1].first_layer_weight_count() == 336);
    CHECK(views[2].engineered_width == 28);
    CHECK(views[2].first_layer_weight_count() == 448);
    for (const auto& v : views) v.validate();

    data::AlignedFrame frame;
    frame.start_timestamp = 0;
    for (Feature f : m1.raw_features)
        frame.columns["node_913"][f] = std::vector<double>(30, 1.0);
    frame.columns["node_924"][Feature::co2] = std::vector<double>(30, 420.0);
    auto fvs = data::engineer_features(frame, m1, "node_913", "node_924");
    CHECK(fvs.inputs.cols == 28);
}

TEST_CASE("engineer: frame too short is a sizing error") {
    auto frame = ramp_frame(10);
    CHECK_THROWS_AS(
        (void)data::engineer_features(frame, single_feature_view(), "node_a", "node_b"),
        DataError);
}

TEST_CASE("split: no activity above threshold leaves shift empty") {
    data::AlignedFrame frame;
    frame.columns["n1"][Feature::activity] = std::vector<double>(50, 0.0);
    auto split = data::split_by_activity(frame, 7.0);
    CHECK(split.shift_indices.empty());
    CHECK(split.train_indices.size() == 50);
}

TEST_CASE("split: union semantics over activity-bearing nodes") {
    data::AlignedFrame frame;
    std::vector<double> a(10, 0.0), b(10, 0.0);
    a[3] = 8.0;  // only node n1, only t=3
    frame.columns["n1"][Feature::activity] = a;
    frame.columns["n2"][Feature::activity] = b;
    frame.columns["n3"][Feature::co2] = std::vector<double>(10, 400.0);
    auto split = data::split_by_activity(frame, 7.0);
    REQUIRE(split.shift_indices.size() == 1);
    CHECK(split.shift_indices[0] == 3);
    CHECK(split.train_indices.size() == 9);
}

TEST_CASE("split: partition of all indices") {
    data::SynthConfig cfg;
    cfg.duration_minutes = 2000;
    cfg.seed = 5;
    auto frame = data::align_resample_impute(data::synth_generate(cfg));
    auto split = data::split_by_activity(frame, 7.0);
    CHECK(split.train_indices.size() + split.shift_indices.size() == frame.length());
    std::set<std::size_t> all(split.train_indices.begin(), split.train_indices.end());
    all.insert(split.shift_indices.begin(), split.shift_indices.end());
    CHECK(all.size() == frame.length());
}

TEST_CASE("split: no activity feature anywhere is a configuration error") {
    data::AlignedFrame frame;
    frame.columns["n"][Feature::co2] = std::vector<double>(5, 400.0);
    CHECK_THROWS_AS((void)data::split_by_activity(frame, 7.0), ConfigError);
}

TEST_CASE("synth: zero meeting rate means zero activity and baseline decay") {
    data::SynthConfig cfg;
    cfg.duration_minutes = 3000;
    cfg.meeting_rate_per_min = 0.0;
    auto recs = data::synth_generate(cfg);
    auto frame = data::align_resample_impute(recs);
    for (const auto& node : {"node_913", "node_914", "node_915", "node_916"})
        for (double v : frame.column(node, Feature::activity)) CHECK(v == 0.0);
    const auto& co2 = frame.column("node_924", Feature::co2);
    double tail_mean = 0.0;
    for (std::size_t i = co2.size() - 500; i < co2.size(); ++i) tail_mean += co2[i];
    tail_mean /= 500.0;
    CHECK(tail_mean == doctest::Approx(420.0).epsilon(0.02));
}

TEST_CASE("synth: identical seeds give identical record streams") {
    data::SynthConfig cfg;
    cfg.duration_minutes = 500;
    cfg.seed = 31;
    auto a = data::synth_generate(cfg);
    auto b = data::synth_generate(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].timestamp == b[i].timestamp);
        CHECK(a[i].node_id == b[i].node_id);
        REQUIRE(a[i].values.size() == b[i].values.size());
        auto ai = a[i].values.begin();
        auto bi = b[i].values.begin();
        for (; ai != a[i].values.end(); ++ai, ++bi) {
            CHECK(ai->first == bi->first);
            CHECK(ai->second == bi->second);
        }
    }
}

TEST_CASE("synth: co2 recurrence reaches its analytic fixed point") {
    data::SynthConfig cfg;
    cfg.k_occ = 15.0;
    cfg.k_vent = 0.1;
    double co2 = cfg.co2_baseline_ppm;
    for (int i = 0; i < 2000; ++i) co2 = data::co2_step(co2, 10.0, cfg);
    // Fixed point: 420 + 15*10/0.1 = 1920.
    CHECK(co2 == doctest::Approx(1920.0).epsilon(1e-9));
}

TEST_CASE("synth: co2 stays within [350, 5000] ppm across 10 seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        data::SynthConfig cfg;
        cfg.duration_minutes = 8000;
        cfg.seed = seed;
        auto recs = data::synth_generate(cfg);
        for (const auto& r : recs) {
            auto it = r.values.find(Feature::co2);
            if (it == r.values.end()) continue;
            CHECK(it->second >= 350.0);
            CHECK(it->second <= 5000.0);
        }
    }
}

TEST_CASE("synth: shift fraction lands near the intended 15 percent") {
    for (std::uint64_t seed : {1, 2, 3}) {
        data::SynthConfig cfg;
        cfg.seed = seed;
        auto frame = data::align_resample_impute(data::synth_generate(cfg));
        auto split = data::split_by_activity(frame, 7.0);
        const double fraction = static_cast<double>(split.shift_indices.size()) /
                                static_cast<double>(frame.length());
        CHECK(fraction >= 0.13);
        CHECK(fraction <= 0.17);
    }
}

TEST_CASE("csv: write then read round-trips every observation") {
    data::SynthConfig cfg;
    cfg.duration_minutes = 50;
    cfg.seed = 77;
    auto recs = data::synth_generate(cfg);
    auto path = std::filesystem::temp_directory_path() / "corrfl_roundtrip.csv";
    data::write_csv(path, recs);
    auto back = data::read_csv(path);
    std::filesystem::remove(path);

    auto flatten = [](const std::vector<data::SensorRecord>& rs) {
        std::multiset<std::tuple<std::int64_t, std::string, int, double>> out;
        for (const auto& r : rs)
            for (const auto& [f, v] : r.values)
                out.insert({r.timestamp, r.node_id, static_cast<int>(f), v});
        return out;
    };
    CHECK(flatten(recs) == flatten(back));
}

TEST_CASE("csv: missing file raises an I/O error naming the path") {
    try {
        (void)data::read_csv("/nonexistent/corrfl_missing.csv");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("corrfl_missing.csv") != std::string::npos);
    }
}

TEST_CASE("scaler: standardizes over selected rows only") {
    std::vector<double> col{0.0, 2.0, 4.0, 1000.0};
    auto s = data::fit_scaler(col, {0, 1, 2});
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.apply(2.0) == doctest::Approx(0.0));
    CHECK(s.invert(s.apply(4.0)) == doctest::Approx(4.0));
    auto flat = data::fit_scaler(std::vector<double>{3.0, 3.0, 3.0}, {0, 1, 2});
    CHECK(flat.stdev == 1.0);  // constant-column guard
}
