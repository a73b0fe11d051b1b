#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedci/data.hpp"
#include "fedci/federation.hpp"
#include "fedci/trainer.hpp"

namespace fedci {

// Resolved knobs of one run. Field names double as config-file keys and CLI
// flag names; FEDCI_SEED in the environment wins over both.
struct ExperimentConfig {
    ModelConfig model;

    int64_t global_epochs = 100;
    int64_t local_epochs = 2;
    int64_t batch = 64;
    double lr = 0.001;
    uint64_t seed = 1;
    uint32_t clients = 4;
    std::string weighting = "uniform";
    std::string listen = "127.0.0.1:0";
    std::string mode = "local";  // local | process

    std::string data_dir;  // directory with series.csv + series.meta.json
    bool synthetic = false;
    int64_t synth_nodes = 32;
    int64_t synth_days = 14;
    int64_t interval_s = 300;
    double synth_noise = 0.1;

    std::string partition;  // path to partition.json; empty generates one
    std::string strategy = "contiguous";
    double split_train = 0.7;
    double split_val = 0.1;
    double split_test = 0.2;

    std::string task = "flow";
    std::string out_dir = "run";

    void validate() const;
    SplitSpec split_spec() const { return SplitSpec{split_train, split_val, split_test}; }
};

// Flat `key = value` text; '#' starts a comment. Unknown keys are errors.
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);
void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_text(const ExperimentConfig& cfg);
void apply_env_overrides(ExperimentConfig& cfg);

struct RunOutputs {
    std::vector<MetricReport> reports;  // per client plus the "global" aggregate
    CostLedger ledger;
    ParamSet<float> global_params;
    // local mode only: complete per-client stores, personal bias included
    std::map<uint32_t, ParamSet<float>> client_params;
};

// End-to-end run per the resolved config; writes manifest.json, reports.json,
// ledger.csv and global_params.bin into out_dir.
RunOutputs run_experiment(const ExperimentConfig& cfg);

// Plain sequential training on the full node set; the reference the C=1
// federated run must reproduce bitwise.
ParamStore<float> train_centralized(const ExperimentConfig& cfg, int64_t total_epochs);

// Shared helpers (also used by the client/server CLI paths).
SeriesFrame load_or_generate_frame(const ExperimentConfig& cfg);
Partition load_or_generate_partition(const ExperimentConfig& cfg, const SeriesFrame& frame);

struct ClientBundle {
    std::vector<int64_t> nodes;
    Windows train;
    Windows test;
    Normalizer norm;
};
ClientBundle make_client_bundle(const ExperimentConfig& cfg, const SeriesFrame& frame,
                                const std::vector<int64_t>& nodes);
ClientCore make_client_core(const ExperimentConfig& cfg, uint32_t client_id,
                            const SeriesFrame& frame, const std::vector<int64_t>& nodes);

void save_param_file(const ParamSet<float>& params, const std::string& path);
ParamSet<float> load_param_file(const std::string& path);

// Standalone socket-mode entry points behind the `server` / `client`
// subcommands; run_experiment's process mode spawns these.
int cli_server_run(const ExperimentConfig& cfg, const std::string& port_file);
int cli_client_run(const ExperimentConfig& cfg, uint32_t client_id, const std::string& connect_addr,
                   const std::string& save_params);

}  // namespace fedci
