#pragma once

// Metrics and artifact emission: the exchange ledger, improvement ratio and
// megabytes-per-percent-improvement, latent correlation traces, and the
// machine-readable report (JSON tree + flat CSV).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corrfl/data.hpp"
#include "corrfl/server.hpp"

namespace corrfl::report {

struct LedgerEntry {
    std::int64_t timestamp = 0;
    data::ViewId view = data::ViewId::m1;
    std::string node;
    std::size_t bytes = 0;
};

// Append-only record of validation-phase uplink traffic.
struct ExchangeLedger {
    std::vector<LedgerEntry> entries;
    std::size_t total_bytes = 0;

    void append(const LedgerEntry& entry);
    std::size_t count() const { return entries.size(); }
    double total_megabytes() const;  // 1 MB = 10^6 bytes
};

// IR = 100 * (p_b - p_c) / p_b; positive when the reconstructed model
// improves on the benchmark.
double improvement_ratio(double p_c, double p_b);

// PI = U / IR, U in megabytes.
double pi_metric(double u_megabytes, double ir);
double pi_metric(const ExchangeLedger& ledger, double ir);

struct CorrelationTraces {
    std::vector<std::string> pair_names;           // H1_H2, H1_H3, H2_H3
    std::vector<std::vector<double>> series;       // one value per iteration
};

CorrelationTraces correlation_trace(const server::TrainTrace& log);

struct MetricsReport {
    int schema_version = 1;
    std::map<std::string, std::string> config_echo;

    // phase -> model -> metric -> value
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> phase_metrics;

    std::optional<double> p_c;  // reconstructed-model validation MAE, ppm
    std::optional<double> p_b;  // benchmark validation MAE, ppm
    std::optional<double> ir;   // percent
    std::optional<double> pi;   // MB per percent; absent when IR == 0

    std::size_t exchanged_bytes = 0;
    std::size_t exchanged_snapshots = 0;

    std::map<std::string, std::vector<double>> training_cc_mae;
    std::map<std::string, std::vector<double>> validation_epoch_mae;

    std::vector<double> loss_total, loss_l1, loss_l2, loss_l3;
    CorrelationTraces correlations;

    bool operator==(const MetricsReport& other) const;
};

// Writes <dir>/report.json and <dir>/report.csv; re-emission of an equal
// report is byte-identical.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);
MetricsReport parse_report(const std::filesystem::path& json_path);

// Flat table rows, one per phase x model x metric.
std::size_t csv_row_count(const MetricsReport& report);

}  // namespace corrfl::report
