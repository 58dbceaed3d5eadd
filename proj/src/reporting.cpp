#include "corrfl/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace corrfl::report {

using ordered_json = nlohmann::ordered_json;

void ExchangeLedger::append(const LedgerEntry& entry) {
    entries.push_back(entry);
    total_bytes += entry.bytes;
}

double ExchangeLedger::total_megabytes() const {
    return static_cast<double>(total_bytes) / 1e6;
}

double improvement_ratio(double p_c, double p_b) {
    if (!(p_b > 0.0)) throw MetricError("improvement ratio undefined: benchmark MAE must be positive");
    return 100.0 * (p_b - p_c) / p_b;
}

double pi_metric(double u_megabytes, double ir) {
    if (ir == 0.0) throw MetricError("PI undefined: improvement ratio is zero");
    return u_megabytes / ir;
}

double pi_metric(const ExchangeLedger& ledger, double ir) {
    return pi_metric(ledger.total_megabytes(), ir);
}

CorrelationTraces correlation_trace(const server::TrainTrace& log) {
    if (log.iterations() == 0) throw InputError("correlation_trace: empty training log");
    const std::size_t n_pairs = log.correlations.front().size();
    // Pair ordering matches server::latent_pairs for three views.
    std::size_t n_views = 2;
    while (n_views * (n_views - 1) / 2 < n_pairs) ++n_views;
    CorrelationTraces out;
    for (const auto& [i, j] : server::latent_pairs(n_views))
        out.pair_names.push_back("H" + std::to_string(i + 1) + "_H" + std::to_string(j + 1));
    out.series.assign(n_pairs, {});
    for (const auto& per_iteration : log.correlations) {
        if (per_iteration.size() != n_pairs)
            throw InputError("correlation_trace: ragged training log");
        for (std::size_t p = 0; p < n_pairs; ++p) out.series[p].push_back(per_iteration[p]);
    }
    return out;
}

bool MetricsReport::operator==(const MetricsReport& other) const {
    auto traces_equal = [](const CorrelationTraces& a, const CorrelationTraces& b) {
        return a.pair_names == b.pair_names && a.series == b.series;
    };
    return schema_version == other.schema_version && config_echo == other.config_echo &&
           phase_metrics == other.phase_metrics && p_c == other.p_c && p_b == other.p_b &&
           ir == other.ir && pi == other.pi && exchanged_bytes == other.exchanged_bytes &&
           exchanged_snapshots == other.exchanged_snapshots &&
           training_cc_mae == other.training_cc_mae &&
           validation_epoch_mae == other.validation_epoch_mae &&
           loss_total == other.loss_total && loss_l1 == other.loss_l1 &&
           loss_l2 == other.loss_l2 && loss_l3 == other.loss_l3 &&
           traces_equal(correlations, other.correlations);
}

namespace {

const std::vector<std::string> kPhaseOrder{"training", "validation", "test"};

std::vector<std::string> ordered_phases(const MetricsReport& report) {
    std::vector<std::string> phases;
    for (const auto& p : kPhaseOrder)
        if (report.phase_metrics.count(p)) phases.push_back(p);
    for (const auto& [p, models] : report.phase_metrics)
        if (std::find(kPhaseOrder.begin(), kPhaseOrder.end(), p) == kPhaseOrder.end())
            phases.push_back(p);
    return phases;
}

const char* metric_unit(const std::string& metric) {
    if (metric == "mae") return "ppm";
    if (metric == "ir") return "percent";
    if (metric == "pi") return "MB_per_percent";
    if (metric == "u") return "MB";
    return "";
}

ordered_json optional_to_json(const std::optional<double>& v) {
    if (v.has_value()) return *v;
    return nullptr;
}

std::optional<double> optional_from_json(const ordered_json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

std::size_t csv_row_count(const MetricsReport& report) {
    std::size_t rows = 0;
    for (const auto& [phase, models] : report.phase_metrics)
        for (const auto& [model, metrics] : models) rows += metrics.size();
    return rows;
}

void emit_report(const MetricsReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);

    ordered_json j;
    j["schema_version"] = report.schema_version;
    j["config"] = ordered_json::object();
    for (const auto& [k, v] : report.config_echo) j["config"][k] = v;

    j["phases"] = ordered_json::object();
    for (const auto& phase : ordered_phases(report)) {
        ordered_json models = ordered_json::object();
        for (const auto& [model, metrics] : report.phase_metrics.at(phase)) {
            ordered_json mj = ordered_json::object();
            for (const auto& [metric, value] : metrics) mj[metric] = value;
            models[model] = std::move(mj);
        }
        j["phases"][phase] = std::move(models);
    }

    j["headline"] = {{"p_c_ppm", optional_to_json(report.p_c)},
                     {"p_b_ppm", optional_to_json(report.p_b)},
                     {"ir_percent", optional_to_json(report.ir)},
                     {"pi_mb_per_percent", optional_to_json(report.pi)}};
    j["exchange"] = {{"total_bytes", report.exchanged_bytes},
                     {"snapshots", report.exchanged_snapshots}};

    j["training_cc_mae"] = ordered_json::object();
    for (const auto& [model, series] : report.training_cc_mae)
        j["training_cc_mae"][model] = series;
    j["validation_epoch_mae"] = ordered_json::object();
    for (const auto& [model, series] : report.validation_epoch_mae)
        j["validation_epoch_mae"][model] = series;

    j["corrfl"] = ordered_json::object();
    j["corrfl"]["loss_total"] = report.loss_total;
    j["corrfl"]["loss_l1"] = report.loss_l1;
    j["corrfl"]["loss_l2"] = report.loss_l2;
    j["corrfl"]["loss_l3"] = report.loss_l3;
    j["corrfl"]["correlations"] = ordered_json::object();
    for (std::size_t p = 0; p < report.correlations.pair_names.size(); ++p)
        j["corrfl"]["correlations"][report.correlations.pair_names[p]] =
            report.correlations.series[p];

    {
        std::ofstream out(dir / "report.json", std::ios::binary);
        if (!out) throw IoError("cannot write report: " + (dir / "report.json").string());
        out << j.dump(2) << '\n';
        if (!out.good()) throw IoError("report write failed: " + (dir / "report.json").string());
    }

    {
        std::ofstream out(dir / "report.csv", std::ios::binary);
        if (!out) throw IoError("cannot write table: " + (dir / "report.csv").string());
        out << "phase,model,metric,value,unit\n";
        char buf[64];
        for (const auto& phase : ordered_phases(report))
            for (const auto& [model, metrics] : report.phase_metrics.at(phase))
                for (const auto& [metric, value] : metrics) {
                    std::snprintf(buf, sizeof(buf), "%.17g", value);
                    out << phase << ',' << model << ',' << metric << ',' << buf << ','
                        << metric_unit(metric) << '\n';
                }
        if (!out.good()) throw IoError("table write failed: " + (dir / "report.csv").string());
    }
}

MetricsReport parse_report(const std::filesystem::path& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw IoError("cannot open report: " + json_path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("malformed report " + json_path.string() + ": " + e.what());
    }

    MetricsReport report;
    report.schema_version = j.at("schema_version").get<int>();
    for (const auto& [k, v] : j.at("config").items())
        report.config_echo[k] = v.get<std::string>();
    for (const auto& [phase, models] : j.at("phases").items())
        for (const auto& [model, metrics] : models.items())
            for (const auto& [metric, value] : metrics.items())
                report.phase_metrics[phase][model][metric] = value.get<double>();
    report.p_c = optional_from_json(j.at("headline").at("p_c_ppm"));
    report.p_b = optional_from_json(j.at("headline").at("p_b_ppm"));
    report.ir = optional_from_json(j.at("headline").at("ir_percent"));
    report.pi = optional_from_json(j.at("headline").at("pi_mb_per_percent"));
    report.exchanged_bytes = j.at("exchange").at("total_bytes").get<std::size_t>();
    report.exchanged_snapshots = j.at("exchange").at("snapshots").get<std::size_t>();
    for (const auto& [model, series] : j.at("training_cc_mae").items())
        report.training_cc_mae[model] = series.get<std::vector<double>>();
    for (const auto& [model, series] : j.at("validation_epoch_mae").items())
        report.validation_epoch_mae[model] = series.get<std::vector<double>>();
    report.loss_total = j.at("corrfl").at("loss_total").get<std::vector<double>>();
    report.loss_l1 = j.at("corrfl").at("loss_l1").get<std::vector<double>>();
    report.loss_l2 = j.at("corrfl").at("loss_l2").get<std::vector<double>>();
    report.loss_l3 = j.at("corrfl").at("loss_l3").get<std::vector<double>>();
    for (const auto& [pair, series] : j.at("corrfl").at("correlations").items()) {
        report.correlations.pair_names.push_back(pair);
        report.correlations.series.push_back(series.get<std::vector<double>>());
    }
    return report;
}

}  // namespace corrfl::report
