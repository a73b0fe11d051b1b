#include "fedci/federation.hpp"

#include <algorithm>

namespace fedci {

ServerCore::ServerCore(ModelConfig cfg, uint64_t seed, int64_t rounds, Weighting weighting,
                       size_t expected_clients)
    : cfg_(std::move(cfg)), seed_(seed), rounds_(rounds), weighting_(weighting),
      expected_(expected_clients) {
    if (rounds_ < 0) throw ConfigError("rounds must be >= 0");
    if (expected_ == 0) throw ConfigError("expected_clients must be >= 1");
    cfg_.validate();
}

void ServerCore::handle_hello(const Message& msg) {
    if (started_) throw ProtocolError("HELLO after registration closed");
    HelloMsg hello = parse_hello(msg);
    if (hello.node_ids.empty())
        throw ProtocolError("client " + std::to_string(hello.client_id) + " registered no nodes");
    if (registrations_.count(hello.client_id))
        throw ProtocolError("duplicate registration for client " + std::to_string(hello.client_id));
    for (const auto& [other, nodes] : registrations_)
        for (int64_t n : nodes)
            for (int64_t m : hello.node_ids)
                if (n == m)
                    throw ProtocolError("node " + std::to_string(m) + " claimed by clients " +
                                        std::to_string(other) + " and " + std::to_string(hello.client_id));
    ledger_.add({0, Direction::up, hello.client_id, 0,
                 kFrameHeaderBytes + msg.payload.size(), Channel::model});
    registrations_[hello.client_id] = std::move(hello.node_ids);
}

void ServerCore::start() {
    if (started_) throw ProtocolError("server already started");
    if (!registration_complete())
        throw ProtocolError("cannot start: " + std::to_string(registrations_.size()) + " of " +
                            std::to_string(expected_) + " clients registered");

    std::vector<int64_t> all_nodes;
    for (const auto& [id, nodes] : registrations_)
        all_nodes.insert(all_nodes.end(), nodes.begin(), nodes.end());
    std::sort(all_nodes.begin(), all_nodes.end());
    for (int64_t i = 0; i < static_cast<int64_t>(all_nodes.size()); ++i)
        node_row_[all_nodes[static_cast<size_t>(i)]] = i;

    Rng rng(mix_seed(seed_, "init"));
    auto store = init_params<float>(cfg_, static_cast<int64_t>(all_nodes.size()), rng);
    shared_ = to_param_set(store, {names::personal_bias, names::node_emb});
    if (cfg_.use_node_emb) node_table_ = store.get(names::node_emb).value();
    started_ = true;
}

std::vector<uint32_t> ServerCore::client_ids() const {
    std::vector<uint32_t> ids;
    for (const auto& [id, nodes] : registrations_) ids.push_back(id);
    return ids;  // std::map keeps them ascending
}

const std::vector<int64_t>& ServerCore::client_nodes(uint32_t client_id) const {
    auto it = registrations_.find(client_id);
    if (it == registrations_.end())
        throw ProtocolError("unknown client " + std::to_string(client_id));
    return it->second;
}

Message ServerCore::make_global(uint32_t client_id) {
    if (!started_) throw ProtocolError("server not started");
    if (finished()) throw ProtocolError("run already finished");
    const auto& nodes = client_nodes(client_id);

    ParamSet<float> download = shared_;
    if (cfg_.use_node_emb) {
        const int64_t d = node_table_.dims[1];
        NamedTensor<float> ne;
        ne.name = names::node_emb;
        ne.dims = Shape{static_cast<int64_t>(nodes.size()), d};
        ne.data.resize(nodes.size() * static_cast<size_t>(d));
        for (size_t j = 0; j < nodes.size(); ++j) {
            const int64_t row = node_row_.at(nodes[j]);
            std::copy(node_table_.data.begin() + row * d, node_table_.data.begin() + (row + 1) * d,
                      ne.data.begin() + static_cast<int64_t>(j) * d);
        }
        download.push_back(std::move(ne));
    }

    WireStats stats;
    Message msg = encode_global(static_cast<uint32_t>(round_), download, &stats);
    ledger_.add({round_, Direction::down, client_id, stats.data_bytes,
                 kFrameHeaderBytes + msg.payload.size() - stats.data_bytes, Channel::model});
    return msg;
}

void ServerCore::handle_local(const Message& msg) {
    if (!started_) throw ProtocolError("server not started");
    LocalMsg local = parse_local(msg);
    if (static_cast<int64_t>(local.round) != round_)
        throw ProtocolError("LOCAL for round " + std::to_string(local.round) + " during round " +
                            std::to_string(round_));
    auto reg = registrations_.find(local.client_id);
    if (reg == registrations_.end())
        throw ProtocolError("LOCAL from unregistered client " + std::to_string(local.client_id));
    if (pending_.count(local.client_id))
        throw ProtocolError("duplicate LOCAL from client " + std::to_string(local.client_id));

    ledger_.add({round_, Direction::up, local.client_id, local.stats.data_bytes,
                 kFrameHeaderBytes + msg.payload.size() - local.stats.data_bytes, Channel::model});

    ClientUpload<float> upload;
    upload.client_id = local.client_id;
    upload.node_ids = reg->second;
    upload.params = std::move(local.params);
    pending_.emplace(local.client_id, std::move(upload));
}

void ServerCore::aggregate() {
    if (!round_uploads_complete())
        throw ProtocolError("cannot aggregate: " + std::to_string(pending_.size()) + " of " +
                            std::to_string(registrations_.size()) + " uploads for round " +
                            std::to_string(round_));
    std::vector<ClientUpload<float>> uploads;
    uploads.reserve(pending_.size());
    for (auto& [id, up] : pending_) uploads.push_back(std::move(up));
    pending_.clear();
    fed_embed_avg(uploads, node_row_, cfg_.use_node_emb ? &node_table_ : nullptr, shared_,
                  weighting_);
    ++round_;
}

void ServerCore::handle_metrics(const Message& msg) {
    const std::string text = parse_metrics(msg);
    auto reports = reports_from_json(text);
    uint32_t client_id = 0;
    if (!reports.empty()) {
        try {
            client_id = static_cast<uint32_t>(std::stoul(reports.front().scope));
        } catch (const std::exception&) {
            // non-numeric scope: keep 0
        }
    }
    ledger_.add({rounds_, Direction::up, client_id, 0,
                 kFrameHeaderBytes + msg.payload.size(), Channel::model});
    for (auto& r : reports) reports_.push_back(std::move(r));
    // arrival order varies across transports; keep reports in client-id order
    auto key = [](const MetricReport& r) -> std::pair<uint64_t, std::string> {
        try {
            return {std::stoull(r.scope), r.scope};
        } catch (const std::exception&) {
            return {~0ULL, r.scope};
        }
    };
    std::stable_sort(reports_.begin(), reports_.end(),
                     [&](const MetricReport& a, const MetricReport& b) { return key(a) < key(b); });
}

Message ServerCore::make_shutdown(uint32_t client_id) {
    Message msg = encode_shutdown();
    ledger_.add({rounds_, Direction::down, client_id, 0,
                 kFrameHeaderBytes + msg.payload.size(), Channel::model});
    return msg;
}

ParamSet<float> ServerCore::global_params() const {
    if (!started_) throw ProtocolError("server not started");
    ParamSet<float> out = shared_;
    if (cfg_.use_node_emb) {
        NamedTensor<float> ne;
        ne.name = names::node_emb;
        ne.dims = node_table_.dims;
        ne.data = node_table_.data;
        out.push_back(std::move(ne));
    }
    return out;
}

int64_t ServerCore::download_elements(uint32_t client_id) const {
    int64_t n = param_set_elements(shared_);
    if (cfg_.use_node_emb)
        n += static_cast<int64_t>(client_nodes(client_id).size()) * node_table_.dims[1];
    return n;
}

// ---- client ----

ClientCore::ClientCore(ModelConfig cfg, TrainConfig tc, int64_t local_epochs, int64_t rounds,
                       std::vector<int64_t> node_ids, Windows train_windows, Windows test_windows,
                       Normalizer norm, std::string task)
    : cfg_(cfg),
      tc_(tc),
      local_epochs_(local_epochs),
      rounds_(rounds),
      node_ids_(std::move(node_ids)),
      trainer_(cfg, tc, std::move(train_windows),
               [&] {
                   // node_ids_ is initialized before trainer_ (declaration order)
                   Rng init_rng(mix_seed(tc.seed, "client-init", tc.client_id));
                   return init_params<float>(cfg, static_cast<int64_t>(node_ids_.size()), init_rng);
               }()),
      test_windows_(std::move(test_windows)),
      norm_(std::move(norm)),
      task_(std::move(task)) {
    if (local_epochs_ < 1) throw ConfigError("local_epochs must be >= 1");
}

Message ClientCore::make_hello() const {
    return encode_hello(HelloMsg{tc_.client_id, node_ids_});
}

void ClientCore::handle_global(const Message& msg) {
    GlobalMsg global = parse_global(msg);
    if (static_cast<int64_t>(global.round) != round_)
        throw ProtocolError("client " + std::to_string(tc_.client_id) + " expected round " +
                            std::to_string(round_) + ", got " + std::to_string(global.round));
    // overwrites shared parameters and this client's node rows; the
    // personalized bias is absent from the set and stays local
    load_param_set(trainer_.params(), global.params);
}

Message ClientCore::make_local() {
    if (finished()) throw ProtocolError("client already finished");
    for (int64_t e = 0; e < local_epochs_; ++e) last_loss_ = trainer_.run_epoch();
    auto ps = to_param_set(trainer_.params(), {names::personal_bias});
    Message msg = encode_local(static_cast<uint32_t>(round_), tc_.client_id, ps);
    ++round_;
    return msg;
}

Message ClientCore::make_metrics() {
    MetricReport report = evaluate_model(trainer_.params(), cfg_, test_windows_, norm_,
                                         std::to_string(tc_.client_id), task_);
    return encode_metrics(reports_to_json({report}));
}

}  // namespace fedci
