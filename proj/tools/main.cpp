// fedci command line: data generation, partitioning, federated runs over
// sockets or the in-process loopback, and ledger/report rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "fedci/experiment.hpp"
#include "fedci/kernels.hpp"
#include "fedci/tcp.hpp"

using namespace fedci;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kConfigKeys = {
    "t_in",        "t_out",       "hidden",     "d_td",       "d_tw",        "d_n",
    "k_layers",    "dropout",     "use_time_emb", "use_node_emb", "use_bias",
    "global_epochs", "local_epochs", "batch",    "lr",         "seed",        "clients",
    "weighting",   "listen",      "mode",       "data_dir",   "synthetic",   "synth_nodes",
    "synth_days",  "interval_s",  "synth_noise", "partition",  "strategy",    "split_train",
    "split_val",   "split_test",  "task",       "out_dir"};

// Register every config key as a --key flag; values are applied on top of the
// config file, and FEDCI_SEED on top of everything.
void add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& overrides) {
    for (const auto& key : kConfigKeys)
        cmd->add_option_function<std::string>(
            "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; });
}

ExperimentConfig build_config(const std::string& config_path,
                              const std::map<std::string, std::string>& overrides) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = config_from_file(config_path);
    for (const auto& [key, value] : overrides) apply_config_line(cfg, key, value);
    apply_env_overrides(cfg);
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void print_reports(const std::vector<MetricReport>& reports) {
    std::printf("%-8s %-8s %12s %12s %12s %10s\n", "scope", "task", "mae", "rmse", "mape%", "count");
    for (const auto& r : reports)
        std::printf("%-8s %-8s %12.4f %12.4f %12.4f %10lld\n", r.scope.c_str(), r.task.c_str(),
                    r.mae, r.rmse, r.mape_percent, static_cast<long long>(r.count));
}

int cmd_report(const std::string& ledger_path, const std::string& reports_path,
               const std::string& round_csv) {
    CostLedger ledger = CostLedger::from_csv(read_file(ledger_path));

    uint64_t model_payload = ledger.payload_total(Channel::model);
    uint64_t data_payload = ledger.payload_total(Channel::data);
    uint64_t framing = ledger.framing_total();
    std::printf("ledger: %zu records\n", ledger.records().size());
    std::printf("model_payload_bytes=%llu\n", static_cast<unsigned long long>(model_payload));
    std::printf("data_payload_bytes=%llu\n", static_cast<unsigned long long>(data_payload));
    std::printf("framing_bytes=%llu\n", static_cast<unsigned long long>(framing));
    std::printf("total_bytes=%llu\n",
                static_cast<unsigned long long>(model_payload + data_payload + framing));

    // per-round rollup
    std::map<int64_t, std::array<uint64_t, 3>> rounds;  // round -> {down, up, framing}
    for (const auto& rec : ledger.records()) {
        auto& row = rounds[rec.round];
        if (rec.direction == Direction::down)
            row[0] += rec.payload_bytes;
        else
            row[1] += rec.payload_bytes;
        row[2] += rec.framing_bytes;
    }
    std::printf("%-8s %16s %16s %16s\n", "round", "down_payload", "up_payload", "framing");
    for (const auto& [round, row] : rounds)
        std::printf("%-8lld %16llu %16llu %16llu\n", static_cast<long long>(round),
                    static_cast<unsigned long long>(row[0]), static_cast<unsigned long long>(row[1]),
                    static_cast<unsigned long long>(row[2]));

    if (!round_csv.empty()) {
        std::ofstream out(round_csv);
        if (!out) throw IoError("cannot write " + round_csv);
        out << "round,down_payload_bytes,up_payload_bytes,framing_bytes,total_bytes\n";
        for (const auto& [round, row] : rounds)
            out << round << ',' << row[0] << ',' << row[1] << ',' << row[2] << ','
                << (row[0] + row[1] + row[2]) << '\n';
    }

    if (!reports_path.empty()) print_reports(reports_from_json(read_file(reports_path)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator_for_tensors();
    CLI::App app{"Fed-CI: channel-independent federated traffic forecasting"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic traffic series");
    int64_t gen_nodes = 8, gen_days = 14, gen_interval = 300;
    uint64_t gen_seed = 1;
    double gen_noise = 0.1;
    std::string gen_out = "data";
    gen->add_option("--nodes", gen_nodes);
    gen->add_option("--days", gen_days);
    gen->add_option("--interval", gen_interval);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--noise", gen_noise);
    gen->add_option("--out", gen_out);

    // partition
    auto* part_cmd = app.add_subcommand("partition", "assign nodes to clients");
    std::string part_data = "data", part_strategy = "contiguous", part_out = "partition.json";
    uint32_t part_clients = 4;
    uint64_t part_seed = 1;
    part_cmd->add_option("--data", part_data);
    part_cmd->add_option("--clients", part_clients);
    part_cmd->add_option("--strategy", part_strategy);
    part_cmd->add_option("--seed", part_seed);
    part_cmd->add_option("--out", part_out);

    // server
    auto* server_cmd = app.add_subcommand("server", "run the aggregation server");
    std::string server_config, server_port_file;
    std::map<std::string, std::string> server_overrides;
    server_cmd->add_option("--config", server_config);
    server_cmd->add_option("--port_file", server_port_file);
    add_config_flags(server_cmd, server_overrides);

    // client
    auto* client_cmd = app.add_subcommand("client", "run one federated client");
    std::string client_config, client_connect = "127.0.0.1:9450", client_save;
    uint32_t client_id = 0;
    std::map<std::string, std::string> client_overrides;
    client_cmd->add_option("--config", client_config);
    client_cmd->add_option("--connect", client_connect);
    client_cmd->add_option("--client_id", client_id);
    client_cmd->add_option("--save_params", client_save);
    add_config_flags(client_cmd, client_overrides);

    // run-local
    auto* run_cmd = app.add_subcommand("run-local", "run a full federated experiment");
    std::string run_config;
    std::map<std::string, std::string> run_overrides;
    std::vector<std::string> run_ablate;
    run_cmd->add_option("--config", run_config);
    run_cmd->add_option("--ablate", run_ablate, "disable a component: time_emb, node_emb, bias")
        ->delimiter(',');
    add_config_flags(run_cmd, run_overrides);

    // report
    auto* report_cmd = app.add_subcommand("report", "summarize a run's ledger and metrics");
    std::string rep_ledger, rep_reports, rep_round_csv;
    report_cmd->add_option("--ledger", rep_ledger)->required();
    report_cmd->add_option("--reports", rep_reports);
    report_cmd->add_option("--round_csv", rep_round_csv);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto frame = gen_synthetic(gen_nodes, gen_days, gen_interval, gen_seed, gen_noise);
            fs::create_directories(gen_out);
            save_csv(frame, (fs::path(gen_out) / "series.csv").string(),
                     (fs::path(gen_out) / "series.meta.json").string());
            std::printf("wrote %lld rows x %lld nodes to %s\n",
                        static_cast<long long>(frame.rows()), static_cast<long long>(frame.nodes()),
                        gen_out.c_str());
            return 0;
        }
        if (part_cmd->parsed()) {
            auto frame = load_csv((fs::path(part_data) / "series.csv").string(),
                                  (fs::path(part_data) / "series.meta.json").string());
            auto part = partition_nodes(frame.node_ids, part_clients, part_strategy, part_seed);
            save_partition(part, part_out);
            std::printf("wrote %u-client partition to %s\n", part_clients, part_out.c_str());
            return 0;
        }
        if (server_cmd->parsed())
            return cli_server_run(build_config(server_config, server_overrides), server_port_file);
        if (client_cmd->parsed())
            return cli_client_run(build_config(client_config, client_overrides), client_id,
                                  client_connect, client_save);
        if (run_cmd->parsed()) {
            ExperimentConfig cfg = build_config(run_config, run_overrides);
            for (const auto& a : run_ablate) {
                if (a == "time_emb")
                    cfg.model.use_time_emb = false;
                else if (a == "node_emb")
                    cfg.model.use_node_emb = false;
                else if (a == "bias")
                    cfg.model.use_bias = false;
                else
                    throw ConfigError("unknown ablation '" + a + "'");
            }
            RunOutputs outs = run_experiment(cfg);
            std::printf("kernels: %s\n", kernels::isa_name(kernels::active_isa()).c_str());
            std::vector<MetricReport> all = outs.reports;
            if (!all.empty()) all.push_back(aggregate_reports(outs.reports));
            print_reports(all);
            std::printf("model_payload_bytes=%llu data_payload_bytes=%llu\n",
                        static_cast<unsigned long long>(outs.ledger.payload_total(Channel::model)),
                        static_cast<unsigned long long>(outs.ledger.payload_total(Channel::data)));
            std::printf("outputs in %s\n", cfg.out_dir.c_str());
            return 0;
        }
        if (report_cmd->parsed()) return cmd_report(rep_ledger, rep_reports, rep_round_csv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
