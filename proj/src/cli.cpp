#include "corrfl/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

namespace corrfl::cli {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

template <class Fn>
void with_phase_tag(const char* phase, Fn&& fn) {
    auto tag = [phase](const char* what) { return std::string(phase) + " phase: " + what; };
    try {
        fn();
    } catch (const ConfigError& e) {
        throw ConfigError(tag(e.what()));
    } catch (const DataError& e) {
        throw DataError(tag(e.what()));
    } catch (const IoError& e) {
        throw IoError(tag(e.what()));
    } catch (const OrderingError& e) {
        throw OrderingError(tag(e.what()));
    } catch (const Error& e) {
        throw Error(tag(e.what()));
    }
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t master, std::size_t delay, std::size_t mdf,
                        std::size_t ve) {
    std::uint64_t mix = splitmix64(master);
    mix = splitmix64(mix ^ static_cast<std::uint64_t>(delay));
    mix = splitmix64(mix ^ static_cast<std::uint64_t>(mdf));
    mix = splitmix64(mix ^ static_cast<std::uint64_t>(ve));
    return mix;
}

void write_dataset_summary(const std::vector<data::SensorRecord>& records,
                           double activity_threshold, std::ostream& out) {
    std::size_t rows = 0;
    for (const auto& r : records) rows += r.values.size();
    out << "csv rows: " << rows << "\n";
    if (records.empty()) return;
    auto frame = data::align_resample_impute(records);
    auto split = data::split_by_activity(frame, activity_threshold);
    const double fraction =
        static_cast<double>(split.shift_indices.size()) / static_cast<double>(frame.length());
    out << "minutes: " << frame.length() << "\n";
    out << "activity>" << activity_threshold << " fraction: " << fmt3(fraction) << "\n";
}

int cmd_synth(const data::SynthConfig& cfg, double activity_threshold,
              const std::filesystem::path& out_dir, std::ostream& out) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    auto records = data::synth_generate(cfg);
    const auto path = out_dir / "dataset.csv";
    data::write_csv(path, records);
    out << "dataset: " << path.string() << "\n";
    write_dataset_summary(records, activity_threshold, out);
    return kExitOk;
}

int cmd_run(const scenario::ScenarioConfig& cfg, const std::filesystem::path& out_dir,
            std::ostream& out) {
    scenario::ScenarioRun run(cfg);
    with_phase_tag("training", [&] { run.run_training_phase(); });
    with_phase_tag("validation", [&] { run.run_validation_phase(); });
    with_phase_tag("test", [&] { run.run_test_phase(); });
    auto rep = run.build_report();
    report::emit_report(rep, out_dir);

    out << "pool triples: " << run.pool_size() << "\n";
    out << "validation p_b: " << fmt3(*rep.p_b) << " ppm, p_c: " << fmt3(*rep.p_c)
        << " ppm\n";
    out << "ir: " << fmt3(*rep.ir) << " %";
    if (rep.pi.has_value()) out << ", pi: " << fmt(*rep.pi) << " MB/%";
    out << ", u: " << fmt3(run.ledger().total_megabytes()) << " MB\n";
    out << "report: " << (out_dir / "report.json").string() << "\n";
    return kExitOk;
}

int cmd_sweep(const scenario::ScenarioConfig& base, const SweepGrid& grid, bool parallel_cells,
              const std::filesystem::path& out_dir, std::ostream& out) {
    if (grid.delays.empty() || grid.mdfs.empty() || grid.ves.empty())
        throw ConfigError("sweep grid must not be empty");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    struct Cell {
        std::size_t delay, mdf, ve;
        std::uint64_t seed;
        std::string status = "ok";
        std::optional<double> p_b, p_c, ir, pi;
        double u_mb = 0.0;
    };
    std::vector<Cell> cells;
    for (std::size_t d : grid.delays)
        for (std::size_t m : grid.mdfs)
            for (std::size_t v : grid.ves)
                cells.push_back({d, m, v, cell_seed(base.seed, d, m, v)});

    auto run_cell = [&](Cell& cell) {
        scenario::ScenarioConfig cfg = base;
        cfg.delay = cell.delay;
        cfg.mdf = cell.mdf;
        cfg.ve = cell.ve;
        cfg.seed = cell.seed;
        char name[64];
        std::snprintf(name, sizeof(name), "d%zu_mdf%zu_ve%zu", cell.delay, cell.mdf, cell.ve);
        try {
            scenario::ScenarioRun run(cfg);
            auto rep = run.run_all();
            report::emit_report(rep, out_dir / name);
            cell.p_b = rep.p_b;
            cell.p_c = rep.p_c;
            cell.ir = rep.ir;
            cell.pi = rep.pi;
            cell.u_mb = run.ledger().total_megabytes();
        } catch (const std::exception& e) {
            cell.status = e.what();
        }
    };

    if (parallel_cells && cells.size() > 1) {
        std::atomic<std::size_t> next{0};
        const std::size_t workers =
            std::min<std::size_t>(cells.size(), std::max(1u, std::thread::hardware_concurrency()));
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w)
            threads.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                    run_cell(cells[i]);
            });
        for (auto& t : threads) t.join();
    } else {
        for (auto& cell : cells) run_cell(cell);
    }

    const auto table_path = out_dir / "sweep.csv";
    std::ofstream table(table_path, std::ios::binary);
    if (!table) throw IoError("cannot write sweep table: " + table_path.string());
    table << "delay,mdf,ve,seed,p_b_ppm,p_c_ppm,ir_percent,pi_mb_per_percent,u_mb,status\n";
    auto cellnum = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    for (const auto& c : cells) {
        std::string status = c.status;
        for (char& ch : status)
            if (ch == ',' || ch == '\n') ch = ';';
        table << c.delay << ',' << c.mdf << ',' << c.ve << ',' << c.seed << ','
              << cellnum(c.p_b) << ',' << cellnum(c.p_c) << ',' << cellnum(c.ir) << ','
              << cellnum(c.pi) << ',' << fmt(c.u_mb) << ',' << status << '\n';
    }
    table.close();

    std::size_t failed = 0;
    for (const auto& c : cells) failed += c.status == "ok" ? 0 : 1;
    out << "sweep cells: " << cells.size() << ", failed: " << failed << "\n";
    out << "table: " << table_path.string() << "\n";
    return kExitOk;
}

namespace {

struct CheckReporter {
    std::ostream& out;
    int failures = 0;

    void operator()(const char* name, bool ok) {
        out << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
        failures += ok ? 0 : 1;
    }
};

}  // namespace

int cmd_check(bool corrupt_l3, std::ostream& out) {
    server::l3_sign_flip_hook() = corrupt_l3;
    CheckReporter check{out};
    std::mt19937_64 rng(2024);

    {
        auto net = nn::make_dense_net({28, 16, 1},
                                      {nn::Activation::relu, nn::Activation::identity}, rng);
        nn::Matrix x(6, 28), y(6, 1);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (double& v : x.data) v = dist(rng);
        for (double& v : y.data) v = dist(rng);
        check("local-net gradient check < 1e-4", nn::grad_check(net, x, y, 1e-5) < 1e-4);
    }
    {
        auto net = server::make_corr_net({6, 4, 6}, rng, 5, 3);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<server::SnapshotTriple> pool(2);
        for (auto& t : pool) {
            t.views = {std::vector<double>(6), std::vector<double>(4), std::vector<double>(6)};
            for (auto& v : t.views)
                for (double& x : v) x = dist(rng);
        }
        auto batch = server::gather_batch(pool, {0, 1});
        check("corr-net total-loss gradient check < 1e-4",
              server::corrfl_grad_check(net, batch, 1e-5) < 1e-4);
    }
    {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<double> a(32), b(32);
        for (double& v : a) v = dist(rng);
        for (double& v : b) v = dist(rng);
        auto neg = a;
        for (double& v : neg) v = -v;
        auto scaled = a;
        for (double& v : scaled) v = 2.5 * v + 3.0;
        const bool corr_ok =
            std::fabs(server::pairwise_corr(a, a) - 1.0) < 1e-10 &&
            std::fabs(server::pairwise_corr(a, neg) + 1.0) < 1e-10 &&
            std::fabs(server::pairwise_corr(scaled, b) - server::pairwise_corr(a, b)) < 1e-10;
        check("pairwise correlation identities", corr_ok);

        server::LatentRep rep;
        rep.values = a;
        check("decorrelation loss vanishes for identical reps",
              std::fabs(server::l3_loss({rep, rep, rep})) < 1e-9);
    }
    {
        auto net = server::make_corr_net({6, 4, 6}, rng, 5, 3);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        server::SnapshotTriple t;
        t.views = {std::vector<double>(6), std::vector<double>(4), std::vector<double>(6)};
        for (auto& v : t.views)
            for (double& x : v) x = dist(rng);
        const double l1 = server::l1_loss(net, t);
        auto [l2, reps] = server::l2_loss_and_reps(net, t);
        const double l3 = server::l3_loss(reps);
        check("total loss equals the sum of its parts",
              std::fabs(server::total_loss(net, t) - (l1 + l2 + l3)) < 1e-10);
    }
    {
        std::uniform_real_distribution<double> dist(-5.0, 5.0);
        bool ok = true;
        for (int round = 0; round < 20; ++round) {
            std::uniform_int_distribution<std::size_t> members(1, 8);
            const std::size_t n = members(rng);
            std::vector<std::vector<double>> group(n, std::vector<double>(17));
            for (auto& g : group)
                for (double& v : g) v = dist(rng);
            auto avg = server::fedavg(group);
            for (std::size_t k = 0; k < 17; ++k) {
                double acc = 0.0;
                for (const auto& g : group) acc += g[k];
                if (std::fabs(avg[k] - acc / static_cast<double>(n)) > 1e-12) ok = false;
            }
        }
        check("fedavg matches the loop oracle", ok);
    }

    server::l3_sign_flip_hook() = false;
    out << (check.failures == 0 ? "all checks passed" : "CHECKS FAILED") << "\n";
    return check.failures == 0 ? kExitOk : kExitRuntime;
}

namespace {

void add_scenario_options(CLI::App* cmd, scenario::ScenarioConfig& cfg) {
    cmd->add_option("--seed", cfg.seed, "Master seed")->envname("CORRFL_SEED");
    cmd->add_option("--delay", cfg.delay, "Local epochs before the server trains (d)")
        ->envname("CORRFL_DELAY");
    cmd->add_option("--mdf", cfg.mdf, "Batches between weight dispatches")
        ->envname("CORRFL_MDF");
    cmd->add_option("--ve", cfg.ve, "Validation epochs before reconstruction")
        ->envname("CORRFL_VE");
    cmd->add_option("--cc-points,--cc_points", cfg.cc_points, "Data points per communication cycle")
        ->envname("CORRFL_CC_POINTS");
    cmd->add_option("--batch-size,--batch_size", cfg.batch_size, "Local training batch size")
        ->envname("CORRFL_BATCH_SIZE");
    cmd->add_option("--activity-threshold,--activity_threshold", cfg.activity_threshold,
                    "Activity level separating the shift regime")
        ->envname("CORRFL_ACTIVITY_THRESHOLD");
    cmd->add_option("--cc-per-epoch,--cc_per_epoch", cfg.cc_per_epoch,
                    "Communication cycles per local epoch")
        ->envname("CORRFL_CC_PER_EPOCH");
    cmd->add_option("--local-lr,--local_lr", cfg.local_lr, "Local Adam learning rate")
        ->envname("CORRFL_LOCAL_LR");
    cmd->add_option("--corrfl-batch,--corrfl_batch", cfg.corrfl_batch,
                    "Central training batch size in triples")
        ->envname("CORRFL_CORRFL_BATCH");
    cmd->add_option("--corrfl-epochs,--corrfl_epochs", cfg.corrfl_epochs,
                    "Central training epochs over the pooled triples")
        ->envname("CORRFL_CORRFL_EPOCHS");
    cmd->add_option("--corrfl-lr,--corrfl_lr", cfg.corrfl_lr, "Central Adam learning rate")
        ->envname("CORRFL_CORRFL_LR");
    cmd->add_option("--source", cfg.source, "Dataset source: synthetic or csv")
        ->envname("CORRFL_SOURCE");
    cmd->add_option("--csv-path,--csv_path", cfg.csv_path, "Long-form CSV dataset path")
        ->envname("CORRFL_CSV_PATH");
    cmd->add_flag("--reconstruct-from-epoch-mean,--reconstruct_from_epoch_mean",
                  cfg.reconstruct_from_epoch_mean,
                  "Feed the central model epoch-mean snapshots instead of the latest")
        ->envname("CORRFL_RECONSTRUCT_FROM_EPOCH_MEAN");
    cmd->add_option("--synth-duration,--synth_duration_minutes", cfg.synth.duration_minutes,
                    "Synthetic dataset length in minutes")
        ->envname("CORRFL_SYNTH_DURATION");
    cmd->add_option("--synth-meeting-rate,--synth_meeting_rate_per_min",
                    cfg.synth.meeting_rate_per_min, "Meeting start probability per idle minute")
        ->envname("CORRFL_SYNTH_MEETING_RATE");
    cmd->add_option("--synth-k-occ,--synth_k_occ", cfg.synth.k_occ,
                    "CO2 gain per occupant per minute")
        ->envname("CORRFL_SYNTH_K_OCC");
    cmd->add_option("--synth-k-vent,--synth_k_vent", cfg.synth.k_vent,
                    "Ventilation decay rate per minute")
        ->envname("CORRFL_SYNTH_K_VENT");
}

}  // namespace

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated CO2-prediction simulator with correlational weight reconstruction"};
    app.require_subcommand(1);

    std::filesystem::path out_dir = "out";

    auto* synth = app.add_subcommand("synth", "Generate a synthetic sensor dataset as CSV");
    data::SynthConfig synth_cfg;
    double synth_threshold = 7.0;
    synth->set_config("--config")->envname("CORRFL_CONFIG");
    synth->add_option("--seed", synth_cfg.seed, "Generator seed")->envname("CORRFL_SEED");
    synth->add_option("--duration,--duration_minutes", synth_cfg.duration_minutes,
                      "Dataset length in minutes")
        ->envname("CORRFL_SYNTH_DURATION");
    synth->add_option("--meeting-rate,--meeting_rate_per_min", synth_cfg.meeting_rate_per_min,
                      "Meeting start probability per idle minute");
    synth->add_option("--activity-threshold,--activity_threshold", synth_threshold,
                      "Threshold used for the printed shift fraction");
    synth->add_option("--out", out_dir, "Output directory")->envname("CORRFL_OUT");

    auto* run = app.add_subcommand("run", "Run the train/validate/test scenario");
    scenario::ScenarioConfig run_cfg;
    run->set_config("--config")->envname("CORRFL_CONFIG");
    add_scenario_options(run, run_cfg);
    run->add_flag("--parallel,--parallel_agents", run_cfg.parallel_agents,
                  "Train local agents on separate threads")
        ->envname("CORRFL_PARALLEL");
    run->add_option("--out", out_dir, "Output directory")->envname("CORRFL_OUT");

    auto* sweep = app.add_subcommand("sweep", "Grid of runs over delay x mdf x ve");
    scenario::ScenarioConfig sweep_cfg;
    SweepGrid grid;
    bool parallel_cells = false;
    sweep->set_config("--config")->envname("CORRFL_CONFIG");
    add_scenario_options(sweep, sweep_cfg);
    sweep->add_option("--delays", grid.delays, "Delay values")->delimiter(',');
    sweep->add_option("--mdfs", grid.mdfs, "Dispatch frequency values")->delimiter(',');
    sweep->add_option("--ves", grid.ves, "Validation epoch values")->delimiter(',');
    sweep->add_flag("--parallel", parallel_cells, "Run sweep cells on separate threads")
        ->envname("CORRFL_PARALLEL");
    sweep->add_option("--out", out_dir, "Output directory")->envname("CORRFL_OUT");

    auto* chk = app.add_subcommand("check", "Run fast numeric self-tests");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_cfg, synth_threshold, out_dir, out);
        if (run->parsed()) return cmd_run(run_cfg, out_dir, out);
        if (sweep->parsed()) return cmd_sweep(sweep_cfg, grid, parallel_cells, out_dir, out);
        if (chk->parsed()) {
            const char* env = std::getenv("CORRFL_CHECK_CORRUPT_L3");
            return cmd_check(env != nullptr && env[0] == '1', out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IoError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace corrfl::cli
