#include "fedci/experiment.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fedci/tcp.hpp"

namespace fedci {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    if (global_epochs < 0) throw ConfigError("global_epochs must be >= 0");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (clients < 1) throw ConfigError("clients must be >= 1");
    if (mode != "local" && mode != "process")
        throw ConfigError("mode must be 'local' or 'process', got '" + mode + "'");
    if (!synthetic && data_dir.empty())
        throw ConfigError("either synthetic=true or data_dir must be set");
    if (interval_s <= 0 || 86400 % interval_s != 0)
        throw ConfigError("interval_s must divide 86400");
    weighting_from_string(weighting);
    split_spec().validate();
    model.validate();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad boolean '" + v + "' for " + key);
}

}  // namespace

void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "t_in") cfg.model.t_in = std::stoll(value);
        else if (key == "t_out") cfg.model.t_out = std::stoll(value);
        else if (key == "hidden") cfg.model.hidden = std::stoll(value);
        else if (key == "d_td") cfg.model.d_td = std::stoll(value);
        else if (key == "d_tw") cfg.model.d_tw = std::stoll(value);
        else if (key == "d_n") cfg.model.d_n = std::stoll(value);
        else if (key == "k_layers") cfg.model.k_layers = std::stoll(value);
        else if (key == "dropout") cfg.model.dropout = std::stod(value);
        else if (key == "use_time_emb") cfg.model.use_time_emb = parse_bool(value, key);
        else if (key == "use_node_emb") cfg.model.use_node_emb = parse_bool(value, key);
        else if (key == "use_bias") cfg.model.use_bias = parse_bool(value, key);
        else if (key == "global_epochs") cfg.global_epochs = std::stoll(value);
        else if (key == "local_epochs") cfg.local_epochs = std::stoll(value);
        else if (key == "batch") cfg.batch = std::stoll(value);
        else if (key == "lr") cfg.lr = std::stod(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "clients") cfg.clients = static_cast<uint32_t>(std::stoul(value));
        else if (key == "weighting") cfg.weighting = value;
        else if (key == "listen") cfg.listen = value;
        else if (key == "mode") cfg.mode = value;
        else if (key == "data_dir") cfg.data_dir = value;
        else if (key == "synthetic") cfg.synthetic = parse_bool(value, key);
        else if (key == "synth_nodes") cfg.synth_nodes = std::stoll(value);
        else if (key == "synth_days") cfg.synth_days = std::stoll(value);
        else if (key == "interval_s") cfg.interval_s = std::stoll(value);
        else if (key == "synth_noise") cfg.synth_noise = std::stod(value);
        else if (key == "partition") cfg.partition = value;
        else if (key == "strategy") cfg.strategy = value;
        else if (key == "split_train") cfg.split_train = std::stod(value);
        else if (key == "split_val") cfg.split_val = std::stod(value);
        else if (key == "split_test") cfg.split_test = std::stod(value);
        else if (key == "task") cfg.task = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("value '" + value + "' out of range for config key '" + key + "'");
    }
}

ExperimentConfig config_from_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value'");
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "t_in = " << cfg.model.t_in << '\n';
    out << "t_out = " << cfg.model.t_out << '\n';
    out << "hidden = " << cfg.model.hidden << '\n';
    out << "d_td = " << cfg.model.d_td << '\n';
    out << "d_tw = " << cfg.model.d_tw << '\n';
    out << "d_n = " << cfg.model.d_n << '\n';
    out << "k_layers = " << cfg.model.k_layers << '\n';
    out << "dropout = " << cfg.model.dropout << '\n';
    out << "use_time_emb = " << (cfg.model.use_time_emb ? "true" : "false") << '\n';
    out << "use_node_emb = " << (cfg.model.use_node_emb ? "true" : "false") << '\n';
    out << "use_bias = " << (cfg.model.use_bias ? "true" : "false") << '\n';
    out << "global_epochs = " << cfg.global_epochs << '\n';
    out << "local_epochs = " << cfg.local_epochs << '\n';
    out << "batch = " << cfg.batch << '\n';
    out << "lr = " << cfg.lr << '\n';
    out << "seed = " << cfg.seed << '\n';
    out << "clients = " << cfg.clients << '\n';
    out << "weighting = " << cfg.weighting << '\n';
    out << "listen = " << cfg.listen << '\n';
    out << "mode = " << cfg.mode << '\n';
    if (!cfg.data_dir.empty()) out << "data_dir = " << cfg.data_dir << '\n';
    out << "synthetic = " << (cfg.synthetic ? "true" : "false") << '\n';
    out << "synth_nodes = " << cfg.synth_nodes << '\n';
    out << "synth_days = " << cfg.synth_days << '\n';
    out << "interval_s = " << cfg.interval_s << '\n';
    out << "synth_noise = " << cfg.synth_noise << '\n';
    if (!cfg.partition.empty()) out << "partition = " << cfg.partition << '\n';
    out << "strategy = " << cfg.strategy << '\n';
    out << "split_train = " << cfg.split_train << '\n';
    out << "split_val = " << cfg.split_val << '\n';
    out << "split_test = " << cfg.split_test << '\n';
    out << "task = " << cfg.task << '\n';
    out << "out_dir = " << cfg.out_dir << '\n';
    return out.str();
}

void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* env = std::getenv("FEDCI_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("FEDCI_SEED is not a number: " + std::string(env));
        }
    }
}

SeriesFrame load_or_generate_frame(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) {
        const fs::path dir(cfg.data_dir);
        return load_csv((dir / "series.csv").string(), (dir / "series.meta.json").string());
    }
    return gen_synthetic(cfg.synth_nodes, cfg.synth_days, cfg.interval_s, cfg.seed, cfg.synth_noise);
}

Partition load_or_generate_partition(const ExperimentConfig& cfg, const SeriesFrame& frame) {
    Partition part = cfg.partition.empty()
                         ? partition_nodes(frame.node_ids, cfg.clients, cfg.strategy, cfg.seed)
                         : load_partition(cfg.partition);
    if (part.clients.size() != cfg.clients)
        throw ConfigError("partition has " + std::to_string(part.clients.size()) +
                          " clients, config says " + std::to_string(cfg.clients));
    part.validate_cover(frame.node_ids);
    return part;
}

ClientBundle make_client_bundle(const ExperimentConfig& cfg, const SeriesFrame& frame,
                                const std::vector<int64_t>& nodes) {
    SeriesFrame local = select_nodes(frame, nodes);
    SplitFrames parts = split(local, cfg.split_spec());
    Normalizer norm = Normalizer::fit(parts.train);
    Windows train(parts.train, norm, cfg.model.t_in, cfg.model.t_out);
    Windows test(parts.test, norm, cfg.model.t_in, cfg.model.t_out);
    return ClientBundle{nodes, std::move(train), std::move(test), std::move(norm)};
}

ClientCore make_client_core(const ExperimentConfig& cfg, uint32_t client_id,
                            const SeriesFrame& frame, const std::vector<int64_t>& nodes) {
    ClientBundle bundle = make_client_bundle(cfg, frame, nodes);
    TrainConfig tc;
    tc.batch = cfg.batch;
    tc.lr = cfg.lr;
    tc.seed = cfg.seed;
    tc.client_id = client_id;
    return ClientCore(cfg.model, tc, cfg.local_epochs, cfg.global_epochs, bundle.nodes,
                      std::move(bundle.train), std::move(bundle.test), std::move(bundle.norm),
                      cfg.task);
}

void save_param_file(const ParamSet<float>& params, const std::string& path) {
    std::vector<uint8_t> bytes;
    serialize_params(params, bytes);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamSet<float> load_param_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t off = 0;
    auto params = deserialize_params(bytes, off);
    if (off != bytes.size()) throw DecodeError("trailing bytes in " + path, off);
    return params;
}

namespace {

// Fill in knobs that depend on the data before anything runs.
ExperimentConfig resolve(const ExperimentConfig& raw, const SeriesFrame& frame) {
    ExperimentConfig cfg = raw;
    cfg.interval_s = frame.interval_s;
    cfg.model.steps_per_day = 86400 / frame.interval_s;
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

json config_json(const ExperimentConfig& cfg) {
    json j;
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        j[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return j;
}

void write_outputs(const ExperimentConfig& cfg, const Partition& part,
                   const std::vector<MetricReport>& client_reports, const CostLedger& ledger,
                   const ParamSet<float>& global_params) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);

    std::vector<MetricReport> reports = client_reports;
    if (!client_reports.empty()) reports.push_back(aggregate_reports(client_reports));
    write_text((out / "reports.json").string(), reports_to_json(reports));
    write_text((out / "ledger.csv").string(), ledger.to_csv());
    save_param_file(global_params, (out / "global_params.bin").string());

    int64_t total_nodes = 0;
    for (const auto& [id, nodes] : part.clients) total_nodes += static_cast<int64_t>(nodes.size());

    json manifest;
    manifest["config"] = config_json(cfg);
    manifest["derived"]["nodes"] = total_nodes;
    manifest["derived"]["steps_per_day"] = cfg.model.steps_per_day;
    manifest["derived"]["param_elements"] = param_set_elements(global_params);
    json part_json = json::object();
    for (const auto& [id, nodes] : part.clients) part_json[std::to_string(id)] = nodes;
    manifest["partition"] = part_json;
    manifest["outputs"] = {{"reports", "reports.json"},
                           {"ledger", "ledger.csv"},
                           {"global_params", "global_params.bin"}};
    write_text((out / "manifest.json").string(), manifest.dump(2) + "\n");
}

RunOutputs run_local_mode(const ExperimentConfig& cfg, const SeriesFrame& frame,
                          const Partition& part) {
    ServerCore server(cfg.model, cfg.seed, cfg.global_epochs, weighting_from_string(cfg.weighting),
                      part.clients.size());
    std::vector<std::unique_ptr<ClientCore>> clients;
    for (const auto& [id, nodes] : part.clients)
        clients.push_back(std::make_unique<ClientCore>(make_client_core(cfg, id, frame, nodes)));

    auto bounce = [](const Message& m) {
        auto bytes = frame_message(m);
        FrameParser p;
        p.feed(bytes.data(), bytes.size());
        Message out;
        if (!p.next(out)) throw ProtocolError("framing round-trip failed");
        return out;
    };

    for (auto& c : clients) server.handle_hello(bounce(c->make_hello()));
    server.start();

    // client turns run sequentially in client-id order: determinism by design
    while (!server.finished()) {
        for (auto& c : clients) c->handle_global(bounce(server.make_global(c->id())));
        for (auto& c : clients) {
            const bool final_round = c->is_final_round();
            server.handle_local(bounce(c->make_local()));
            if (final_round) server.handle_metrics(bounce(c->make_metrics()));
        }
        server.aggregate();
    }
    for (auto& c : clients) server.make_shutdown(c->id());

    RunOutputs outs;
    outs.reports = server.client_reports();
    outs.ledger = server.ledger();
    outs.global_params = server.global_params();
    for (auto& c : clients) outs.client_params[c->id()] = to_param_set(c->params());
    write_outputs(cfg, part, outs.reports, outs.ledger, outs.global_params);
    return outs;
}

std::string self_exe() {
    if (const char* env = std::getenv("FEDCI_EXE")) return env;
    char buf[4096];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) throw IoError("cannot resolve own executable path");
    buf[n] = '\0';
    return buf;
}

pid_t spawn(const std::vector<std::string>& args, const std::string& log_path) {
    const pid_t pid = ::fork();
    if (pid < 0) throw IoError("fork failed");
    if (pid == 0) {
        const int log = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (log >= 0) {
            ::dup2(log, STDOUT_FILENO);
            ::dup2(log, STDERR_FILENO);
            ::close(log);
        }
        std::vector<char*> argv;
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        ::execv(argv[0], argv.data());
        ::_exit(127);
    }
    return pid;
}

void wait_ok(pid_t pid, const std::string& what, const std::string& log_path) {
    int status = 0;
    if (::waitpid(pid, &status, 0) < 0) throw IoError("waitpid failed for " + what);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        std::string detail;
        std::ifstream log(log_path);
        if (log) {
            std::ostringstream ss;
            ss << log.rdbuf();
            detail = ss.str();
            if (detail.size() > 500) detail = "..." + detail.substr(detail.size() - 500);
        }
        throw ProtocolError(what + " failed (status " + std::to_string(status) + "): " + detail);
    }
}

RunOutputs run_process_mode(const ExperimentConfig& cfg, const SeriesFrame& frame,
                            const Partition& part) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);

    ExperimentConfig child_cfg = cfg;
    child_cfg.partition = (out / "partition.json").string();
    save_partition(part, child_cfg.partition);
    const std::string config_path = (out / "config.txt").string();
    write_text(config_path, config_to_text(child_cfg));

    const std::string exe = self_exe();
    const std::string port_file = (out / "port.txt").string();
    std::error_code ec;
    fs::remove(port_file, ec);

    const pid_t server_pid = spawn({exe, "server", "--config", config_path, "--port_file", port_file},
                                   (out / "server.log").string());

    // wait for the bound port
    uint16_t port = 0;
    for (int i = 0; i < 300; ++i) {
        std::ifstream in(port_file);
        if (in && (in >> port) && port != 0) break;
        port = 0;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    if (port == 0) {
        ::kill(server_pid, SIGKILL);
        wait_ok(server_pid, "server (port wait)", (out / "server.log").string());
        throw IoError("server did not report a port");
    }

    std::vector<std::pair<pid_t, std::string>> client_pids;
    for (const auto& [id, nodes] : part.clients) {
        const std::string log = (out / ("client_" + std::to_string(id) + ".log")).string();
        const std::string save = (out / ("client_" + std::to_string(id) + "_params.bin")).string();
        client_pids.emplace_back(
            spawn({exe, "client", "--config", config_path, "--connect",
                   "127.0.0.1:" + std::to_string(port), "--client_id", std::to_string(id),
                   "--save_params", save},
                  log),
            log);
    }
    for (auto& [pid, log] : client_pids) wait_ok(pid, "client", log);
    wait_ok(server_pid, "server", (out / "server.log").string());

    RunOutputs outs;
    {
        std::ifstream in((out / "reports.json").string());
        std::ostringstream ss;
        ss << in.rdbuf();
        auto all = reports_from_json(ss.str());
        for (auto& r : all)
            if (r.scope != "global") outs.reports.push_back(r);
    }
    {
        std::ifstream in((out / "ledger.csv").string());
        std::ostringstream ss;
        ss << in.rdbuf();
        outs.ledger = CostLedger::from_csv(ss.str());
    }
    outs.global_params = load_param_file((out / "global_params.bin").string());
    for (const auto& [id, nodes] : part.clients) {
        const std::string save = (out / ("client_" + std::to_string(id) + "_params.bin")).string();
        outs.client_params[id] = load_param_file(save);
    }
    return outs;
}

}  // namespace

RunOutputs run_experiment(const ExperimentConfig& raw) {
    SeriesFrame frame = load_or_generate_frame(raw);
    ExperimentConfig cfg = resolve(raw, frame);
    Partition part = load_or_generate_partition(cfg, frame);
    if (cfg.mode == "process") return run_process_mode(cfg, frame, part);
    return run_local_mode(cfg, frame, part);
}

int cli_server_run(const ExperimentConfig& raw, const std::string& port_file) {
    ExperimentConfig cfg = raw;
    cfg.model.steps_per_day = 86400 / cfg.interval_s;
    cfg.validate();

    TcpListener listener(cfg.listen);
    if (!port_file.empty()) write_text(port_file, std::to_string(listener.port()) + "\n");
    std::printf("server: listening on port %u, waiting for %u clients\n", listener.port(),
                cfg.clients);

    ServerCore core(cfg.model, cfg.seed, cfg.global_epochs, weighting_from_string(cfg.weighting),
                    cfg.clients);
    ServerRunResult result = serve_tcp(core, listener);

    Partition part;
    for (uint32_t id : core.client_ids()) part.clients[id] = core.client_nodes(id);
    write_outputs(cfg, part, result.reports, result.ledger, result.global_params);

    std::printf("server: completed %lld rounds, model payload %llu bytes, data payload %llu bytes\n",
                static_cast<long long>(cfg.global_epochs),
                static_cast<unsigned long long>(result.ledger.payload_total(Channel::model)),
                static_cast<unsigned long long>(result.ledger.payload_total(Channel::data)));
    return 0;
}

int cli_client_run(const ExperimentConfig& raw, uint32_t client_id, const std::string& connect_addr,
                   const std::string& save_params) {
    SeriesFrame frame = load_or_generate_frame(raw);
    ExperimentConfig cfg = resolve(raw, frame);
    Partition part = load_or_generate_partition(cfg, frame);
    auto it = part.clients.find(client_id);
    if (it == part.clients.end())
        throw ConfigError("partition has no row for client " + std::to_string(client_id));

    ClientCore core = make_client_core(cfg, client_id, frame, it->second);
    auto [host, port] = parse_addr(connect_addr);
    TcpConn conn = TcpConn::connect_to(host, port);
    ClientRunResult result = run_client_tcp(core, conn);
    if (!save_params.empty()) save_param_file(result.params, save_params);
    std::printf("client %u: finished, last epoch loss %.6f\n", client_id, result.last_loss);
    return 0;
}

ParamStore<float> train_centralized(const ExperimentConfig& raw, int64_t total_epochs) {
    SeriesFrame frame = load_or_generate_frame(raw);
    ExperimentConfig cfg = resolve(raw, frame);

    SplitFrames parts = split(frame, cfg.split_spec());
    Normalizer norm = Normalizer::fit(parts.train);
    Windows train(parts.train, norm, cfg.model.t_in, cfg.model.t_out);

    Rng init_rng(mix_seed(cfg.seed, "init"));
    auto params = init_params<float>(cfg.model, frame.nodes(), init_rng);

    TrainConfig tc;
    tc.batch = cfg.batch;
    tc.lr = cfg.lr;
    tc.seed = cfg.seed;
    tc.client_id = 0;
    LocalTrainer trainer(cfg.model, tc, std::move(train), std::move(params));
    for (int64_t e = 0; e < total_epochs; ++e) trainer.run_epoch();
    return std::move(trainer.params());
}

}  // namespace fedci
