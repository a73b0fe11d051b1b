#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedci/eval.hpp"
#include "fedci/ledger.hpp"
#include "fedci/trainer.hpp"
#include "fedci/wire.hpp"

namespace fedci {

// Alg. 2 weighting: uniform mean as written, with an optional node-count
// weighted variant matching the objective's N_Ci/N factors.
enum class Weighting { uniform, node_count };

inline Weighting weighting_from_string(const std::string& s) {
    if (s == "uniform") return Weighting::uniform;
    if (s == "node_count") return Weighting::node_count;
    throw ConfigError("unknown aggregation weighting '" + s + "'");
}

template <class R>
struct ClientUpload {
    uint32_t client_id = 0;
    std::vector<int64_t> node_ids;  // registration order == upload row order
    ParamSet<R> params;             // shared tensors, plus node_emb when present
};

// FedEmbedAvg. Node-embedding rows are routed: each client's rows overwrite
// the matching rows of the global table byte for byte. Every other parameter
// is averaged over clients, summing in ascending client id order with double
// accumulation.
template <class R>
void fed_embed_avg(const std::vector<ClientUpload<R>>& uploads,
                   const std::map<int64_t, int64_t>& node_row, Tensor<R>* global_node_table,
                   ParamSet<R>& global_shared, Weighting weighting) {
    if (uploads.empty()) throw ProtocolError("fed_embed_avg: no uploads");

    std::vector<const ClientUpload<R>*> ordered;
    for (const auto& u : uploads) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->client_id < b->client_id; });
    for (size_t i = 1; i < ordered.size(); ++i)
        if (ordered[i]->client_id == ordered[i - 1]->client_id)
            throw ProtocolError("duplicate upload from client " + std::to_string(ordered[i]->client_id));

    int64_t total_nodes = 0;
    for (const auto* u : ordered) total_nodes += static_cast<int64_t>(u->node_ids.size());

    // shared parameters: weighted sum in canonical order
    std::vector<std::vector<double>> acc(global_shared.size());
    for (size_t t = 0; t < global_shared.size(); ++t)
        acc[t].assign(global_shared[t].data.size(), 0.0);

    for (const auto* u : ordered) {
        const double w = weighting == Weighting::uniform
                             ? 1.0
                             : static_cast<double>(u->node_ids.size()) / static_cast<double>(total_nodes);
        size_t ti = 0;
        for (const auto& tensor : u->params) {
            if (tensor.name == names::node_emb) continue;
            if (ti >= global_shared.size() || tensor.name != global_shared[ti].name)
                throw ProtocolError("client " + std::to_string(u->client_id) +
                                    " uploaded unexpected parameter '" + tensor.name + "'");
            if (tensor.dims != global_shared[ti].dims)
                throw ProtocolError("client " + std::to_string(u->client_id) + " parameter '" +
                                    tensor.name + "' has shape " + tensor.dims.str() + ", expected " +
                                    global_shared[ti].dims.str());
            for (size_t j = 0; j < tensor.data.size(); ++j)
                acc[ti][j] += w * static_cast<double>(tensor.data[j]);
            ++ti;
        }
        if (ti != global_shared.size())
            throw ProtocolError("client " + std::to_string(u->client_id) +
                                " uploaded an incomplete shared parameter set");
    }
    const double divisor = weighting == Weighting::uniform ? static_cast<double>(ordered.size()) : 1.0;
    for (size_t t = 0; t < global_shared.size(); ++t)
        for (size_t j = 0; j < acc[t].size(); ++j)
            global_shared[t].data[j] = static_cast<R>(acc[t][j] / divisor);

    // node embeddings: route rows, never average
    if (global_node_table != nullptr) {
        const int64_t d = global_node_table->dims[1];
        for (const auto* u : ordered) {
            const NamedTensor<R>* ne = nullptr;
            for (const auto& tensor : u->params)
                if (tensor.name == names::node_emb) ne = &tensor;
            if (ne == nullptr)
                throw ProtocolError("client " + std::to_string(u->client_id) +
                                    " upload is missing node embeddings");
            if (ne->dims.ndim != 2 || ne->dims[0] != static_cast<int64_t>(u->node_ids.size()) ||
                ne->dims[1] != d)
                throw ProtocolError("client " + std::to_string(u->client_id) +
                                    " node embedding has shape " + ne->dims.str());
            for (size_t j = 0; j < u->node_ids.size(); ++j) {
                auto it = node_row.find(u->node_ids[j]);
                if (it == node_row.end())
                    throw ProtocolError("client " + std::to_string(u->client_id) +
                                        " uploaded rows for unregistered node " +
                                        std::to_string(u->node_ids[j]));
                std::copy(ne->data.begin() + static_cast<int64_t>(j) * d,
                          ne->data.begin() + static_cast<int64_t>(j + 1) * d,
                          global_node_table->data.begin() + it->second * d);
            }
        }
    }
}

// ---- server state machine (Alg. 1, server side) ----

class ServerCore {
public:
    ServerCore(ModelConfig cfg, uint64_t seed, int64_t rounds, Weighting weighting,
               size_t expected_clients);

    void handle_hello(const Message& msg);
    bool registration_complete() const { return registrations_.size() == expected_; }
    // Builds the initial global model; call once after registration.
    void start();

    std::vector<uint32_t> client_ids() const;
    const std::vector<int64_t>& client_nodes(uint32_t client_id) const;
    int64_t current_round() const { return round_; }
    int64_t total_rounds() const { return rounds_; }
    bool finished() const { return round_ > rounds_; }

    Message make_global(uint32_t client_id);
    void handle_local(const Message& msg);
    bool round_uploads_complete() const { return pending_.size() == registrations_.size(); }
    void aggregate();

    void handle_metrics(const Message& msg);
    Message make_shutdown(uint32_t client_id);

    const CostLedger& ledger() const { return ledger_; }
    const std::vector<MetricReport>& client_reports() const { return reports_; }
    // Shared parameters plus the full global node table, for export.
    ParamSet<float> global_params() const;
    int64_t download_elements(uint32_t client_id) const;

private:
    ModelConfig cfg_;
    uint64_t seed_;
    int64_t rounds_;
    Weighting weighting_;
    size_t expected_;

    std::map<uint32_t, std::vector<int64_t>> registrations_;
    std::map<int64_t, int64_t> node_row_;
    ParamSet<float> shared_;
    Tensor<float> node_table_;
    bool started_ = false;
    int64_t round_ = 1;
    std::map<uint32_t, ClientUpload<float>> pending_;
    CostLedger ledger_;
    std::vector<MetricReport> reports_;
};

// ---- client state machine (Alg. 1, client side) ----

class ClientCore {
public:
    ClientCore(ModelConfig cfg, TrainConfig tc, int64_t local_epochs, int64_t rounds,
               std::vector<int64_t> node_ids, Windows train_windows, Windows test_windows,
               Normalizer norm, std::string task);

    uint32_t id() const { return tc_.client_id; }
    Message make_hello() const;
    void handle_global(const Message& msg);
    // Runs the local epochs for the current round and returns the upload.
    Message make_local();
    bool is_final_round() const { return round_ == rounds_; }
    bool finished() const { return round_ > rounds_; }
    Message make_metrics();

    ParamStore<float>& params() { return trainer_.params(); }
    double last_epoch_loss() const { return last_loss_; }

private:
    ModelConfig cfg_;
    TrainConfig tc_;
    int64_t local_epochs_;
    int64_t rounds_;
    std::vector<int64_t> node_ids_;
    LocalTrainer trainer_;
    Windows test_windows_;
    Normalizer norm_;
    std::string task_;
    int64_t round_ = 1;
    double last_loss_ = 0.0;
};

}  // namespace fedci
