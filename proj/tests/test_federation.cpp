#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedci/federation.hpp"

using namespace fedci;

namespace {

template <class R>
ParamSet<R> random_shared(uint64_t seed, const std::vector<std::pair<std::string, Shape>>& spec) {
    Rng rng(seed);
    ParamSet<R> ps;
    for (const auto& [name, shape] : spec) {
        NamedTensor<R> t;
        t.name = name;
        t.dims = shape;
        t.data.resize(static_cast<size_t>(shape.numel()));
        for (auto& v : t.data) v = static_cast<R>(rng.uniform(-2, 2));
        ps.push_back(std::move(t));
    }
    return ps;
}

template <class R>
ClientUpload<R> make_upload(uint32_t id, std::vector<int64_t> nodes, uint64_t seed, int64_t d_n) {
    ClientUpload<R> up;
    up.client_id = id;
    up.node_ids = std::move(nodes);
    up.params = random_shared<R>(seed, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    NamedTensor<R> ne;
    ne.name = names::node_emb;
    ne.dims = Shape{static_cast<int64_t>(up.node_ids.size()), d_n};
    ne.data.resize(static_cast<size_t>(ne.dims.numel()));
    Rng rng(seed + 1000);
    for (auto& v : ne.data) v = static_cast<R>(rng.uniform(-2, 2));
    up.params.push_back(std::move(ne));
    return up;
}

std::map<int64_t, int64_t> row_map(const std::vector<int64_t>& nodes) {
    std::map<int64_t, int64_t> m;
    for (size_t i = 0; i < nodes.size(); ++i) m[nodes[i]] = static_cast<int64_t>(i);
    return m;
}

}  // namespace

TEST_CASE("fed_embed_avg with one client is the identity") {
    auto up = make_upload<double>(0, {0, 1, 2}, 7, 4);
    auto shared = random_shared<double>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    Tensor<double> table(Shape{3, 4});
    auto rows = row_map({0, 1, 2});

    fed_embed_avg<double>({up}, rows, &table, shared, Weighting::uniform);
    CHECK(shared[0].data == up.params[0].data);
    CHECK(shared[1].data == up.params[1].data);
    CHECK(table.data == up.params[2].data);  // routed rows, bitwise
}

TEST_CASE("fed_embed_avg averages shared parameters: zeros and twos give ones") {
    auto a = make_upload<double>(0, {0}, 1, 4);
    auto b = make_upload<double>(1, {1}, 2, 4);
    for (auto& t : a.params)
        if (t.name != names::node_emb) std::fill(t.data.begin(), t.data.end(), 0.0);
    for (auto& t : b.params)
        if (t.name != names::node_emb) std::fill(t.data.begin(), t.data.end(), 2.0);

    auto shared = random_shared<double>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    Tensor<double> table(Shape{2, 4});
    auto rows = row_map({0, 1});
    fed_embed_avg<double>({a, b}, rows, &table, shared, Weighting::uniform);
    for (const auto& t : shared)
        for (double v : t.data) CHECK(v == 1.0);
}

TEST_CASE("fed_embed_avg matches an independent element-wise oracle within 1e-12") {
    const int64_t d_n = 5;
    std::vector<ClientUpload<double>> ups;
    ups.push_back(make_upload<double>(0, {10, 11}, 100, d_n));
    ups.push_back(make_upload<double>(1, {12}, 200, d_n));
    ups.push_back(make_upload<double>(2, {13, 14, 15}, 300, d_n));

    auto shared = random_shared<double>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    std::vector<int64_t> all_nodes{10, 11, 12, 13, 14, 15};
    Tensor<double> table(Shape{6, d_n});
    fed_embed_avg<double>(ups, row_map(all_nodes), &table, shared, Weighting::uniform);

    // oracle: explicit loop over names and elements
    for (size_t t = 0; t < shared.size(); ++t) {
        for (size_t j = 0; j < shared[t].data.size(); ++j) {
            double want = 0;
            for (const auto& u : ups) want += u.params[t].data[j];
            want /= 3.0;
            CHECK(std::abs(shared[t].data[j] - want) <= 1e-12);
        }
    }
    // oracle for node rows: client rows land in the right global rows, bitwise
    int64_t row = 0;
    for (const auto& u : ups)
        for (size_t j = 0; j < u.node_ids.size(); ++j, ++row)
            for (int64_t c = 0; c < d_n; ++c)
                CHECK(table.at({row, c}) ==
                      u.params.back().data[j * static_cast<size_t>(d_n) + static_cast<size_t>(c)]);
}

TEST_CASE("fed_embed_avg is independent of upload arrival order") {
    const int64_t d_n = 3;
    std::vector<ClientUpload<float>> ups;
    ups.push_back(make_upload<float>(2, {5}, 21, d_n));
    ups.push_back(make_upload<float>(0, {3}, 22, d_n));
    ups.push_back(make_upload<float>(1, {4}, 23, d_n));

    auto run = [&](std::vector<ClientUpload<float>> v) {
        auto shared = random_shared<float>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
        Tensor<float> table(Shape{3, d_n});
        fed_embed_avg<float>(v, row_map({3, 4, 5}), &table, shared, Weighting::uniform);
        return std::make_pair(shared, table);
    };
    auto [s1, t1] = run(ups);
    std::swap(ups[0], ups[2]);
    auto [s2, t2] = run(ups);
    for (size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].data == s2[i].data);
    CHECK(t1.data == t2.data);
}

TEST_CASE("node-count weighting applies N_i/N factors") {
    auto a = make_upload<double>(0, {0, 1, 2}, 1, 2);  // weight 3/4
    auto b = make_upload<double>(1, {3}, 2, 2);        // weight 1/4
    for (auto& t : a.params)
        if (t.name != names::node_emb) std::fill(t.data.begin(), t.data.end(), 4.0);
    for (auto& t : b.params)
        if (t.name != names::node_emb) std::fill(t.data.begin(), t.data.end(), 8.0);

    auto shared = random_shared<double>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    Tensor<double> table(Shape{4, 2});
    fed_embed_avg<double>({a, b}, row_map({0, 1, 2, 3}), &table, shared, Weighting::node_count);
    for (const auto& t : shared)
        for (double v : t.data) CHECK(v == doctest::Approx(4.0 * 0.75 + 8.0 * 0.25));
}

TEST_CASE("fed_embed_avg rejects bad upload sets") {
    auto a = make_upload<double>(0, {0}, 1, 2);
    auto shared = random_shared<double>(999, {{"a.w", Shape{3, 4}}, {"a.b", Shape{4}}});
    Tensor<double> table(Shape{2, 2});

    auto dup = a;
    CHECK_THROWS_AS(fed_embed_avg<double>({a, dup}, row_map({0, 1}), &table, shared, Weighting::uniform),
                    ProtocolError);

    auto wrong_nodes = make_upload<double>(1, {9}, 2, 2);  // node 9 unregistered
    CHECK_THROWS_AS(
        fed_embed_avg<double>({a, wrong_nodes}, row_map({0, 1}), &table, shared, Weighting::uniform),
        ProtocolError);

    auto missing = make_upload<double>(1, {1}, 3, 2);
    missing.params.erase(missing.params.begin());  // drop a shared tensor
    CHECK_THROWS_AS(
        fed_embed_avg<double>({a, missing}, row_map({0, 1}), &table, shared, Weighting::uniform),
        ProtocolError);
}

TEST_CASE("shared parameter layout is independent of node ownership") {
    // FedEmbedAvg precondition: only the node-codebook row count may vary
    // with the client's node set, under every ablation combination
    for (int mask = 0; mask < 8; ++mask) {
        ModelConfig cfg;
        cfg.t_in = 6;
        cfg.t_out = 3;
        cfg.hidden = 8;
        cfg.d_td = 4;
        cfg.d_tw = 4;
        cfg.d_n = 4;
        cfg.k_layers = 2;
        cfg.steps_per_day = 48;
        cfg.use_time_emb = mask & 1;
        cfg.use_node_emb = mask & 2;
        cfg.use_bias = mask & 4;

        Rng r1(1), r2(2);
        auto small = init_params<float>(cfg, 1, r1);
        auto large = init_params<float>(cfg, 17, r2);
        auto ps_small = to_param_set(small, {names::personal_bias});
        auto ps_large = to_param_set(large, {names::personal_bias});
        REQUIRE(ps_small.size() == ps_large.size());
        for (size_t i = 0; i < ps_small.size(); ++i) {
            CHECK(ps_small[i].name == ps_large[i].name);
            if (ps_small[i].name == names::node_emb) {
                CHECK(ps_small[i].dims[0] == 1);
                CHECK(ps_large[i].dims[0] == 17);
                CHECK(ps_small[i].dims[1] == ps_large[i].dims[1]);
            } else {
                CHECK(ps_small[i].dims == ps_large[i].dims);
            }
        }
    }
}

TEST_CASE("cost_formula arithmetic") {
    CHECK(cost_formula(100, 8, 1000) == 6400000ULL);
    CHECK(cost_formula(0, 8, 1000) == 0ULL);
    CHECK(cost_formula(1, 1, 1) == 8ULL);
    CHECK_THROWS_AS(cost_formula(-1, 1, 1), ConfigError);
}

// ---- protocol-level checks over the in-process byte path ----

namespace {

struct MiniFed {
    ModelConfig cfg;
    std::unique_ptr<ServerCore> server;
    std::vector<std::unique_ptr<ClientCore>> clients;

    // encode -> frame -> parse: every exchanged message crosses the real wire
    // format even in-process
    static Message bounce(const Message& m) {
        auto bytes = frame_message(m);
        FrameParser p;
        p.feed(bytes.data(), bytes.size());
        Message out;
        REQUIRE(p.next(out));
        return out;
    }

    MiniFed(int64_t rounds, uint32_t n_clients, int64_t nodes_per_client, int64_t local_epochs) {
        cfg.t_in = 4;
        cfg.t_out = 2;
        cfg.hidden = 8;
        cfg.d_td = 4;
        cfg.d_tw = 4;
        cfg.d_n = 4;
        cfg.k_layers = 1;
        cfg.dropout = 0.0;
        cfg.steps_per_day = 48;

        auto frame = gen_synthetic(n_clients * nodes_per_client, 2, 1800, 33, 0.05);
        auto part = partition_nodes(frame.node_ids, n_clients, "contiguous", 0);

        server = std::make_unique<ServerCore>(cfg, 99, rounds, Weighting::uniform, n_clients);
        for (const auto& [id, nodes] : part.clients) {
            auto local = select_nodes(frame, nodes);
            auto splits = split(local, SplitSpec{});
            auto norm = Normalizer::fit(splits.train);
            Windows train(splits.train, norm, cfg.t_in, cfg.t_out);
            Windows test(splits.test, norm, cfg.t_in, cfg.t_out);
            TrainConfig tc;
            tc.batch = 16;
            tc.lr = 1e-3;
            tc.seed = 99;
            tc.client_id = id;
            clients.push_back(std::make_unique<ClientCore>(cfg, tc, local_epochs, rounds, nodes,
                                                           std::move(train), std::move(test), norm,
                                                           "flow"));
        }
        for (auto& c : clients) server->handle_hello(bounce(c->make_hello()));
        server->start();
    }

    void run() {
        while (!server->finished()) {
            for (auto& c : clients) c->handle_global(bounce(server->make_global(c->id())));
            for (auto& c : clients) {
                const bool final_round = c->is_final_round();
                server->handle_local(bounce(c->make_local()));
                if (final_round) server->handle_metrics(bounce(c->make_metrics()));
            }
            server->aggregate();
        }
        for (auto& c : clients) server->make_shutdown(c->id());
    }
};

}  // namespace

TEST_CASE("zero rounds: registration then shutdown, no param traffic") {
    MiniFed fed(0, 3, 2, 1);
    fed.run();
    CHECK(fed.server->ledger().param_record_count() == 0);
    CHECK(fed.server->ledger().payload_total(Channel::model) == 0);
    CHECK(fed.server->ledger().payload_total(Channel::data) == 0);
    // 3 HELLO + 3 SHUTDOWN control records
    CHECK(fed.server->ledger().records().size() == 6);
}

TEST_CASE("two rounds, three clients: exactly 12 param records with exact byte counts") {
    MiniFed fed(2, 3, 2, 1);
    fed.run();
    const auto& ledger = fed.server->ledger();
    CHECK(ledger.param_record_count() == 12);  // 2 rounds x 2 directions x 3 clients

    // every param record's payload is 4 bytes per element of that client's set
    for (const auto& rec : ledger.records()) {
        if (rec.payload_bytes == 0) continue;
        CHECK(rec.payload_bytes ==
              4ULL * static_cast<uint64_t>(fed.server->download_elements(rec.client_id)));
        CHECK(rec.framing_bytes > 0);
        CHECK(rec.channel == Channel::model);
    }
    CHECK(ledger.payload_total(Channel::data) == 0);

    // ledger total equals the closed-form cost with per-client |W_i|
    uint64_t want = 0;
    for (uint32_t id : fed.server->client_ids())
        want += cost_formula(2, 1, fed.server->download_elements(id));
    CHECK(ledger.payload_total(Channel::model) == want);

    // metrics arrived from every client
    CHECK(fed.server->client_reports().size() == 3);
}

TEST_CASE("the wire never carries the personalized bias") {
    MiniFed fed(1, 2, 2, 1);
    // sniff every byte of a full round
    std::vector<uint8_t> all_bytes;
    auto sniff = [&](const Message& m) {
        auto bytes = frame_message(m);
        all_bytes.insert(all_bytes.end(), bytes.begin(), bytes.end());
        return MiniFed::bounce(m);
    };
    for (auto& c : fed.clients) c->handle_global(sniff(fed.server->make_global(c->id())));
    for (auto& c : fed.clients) {
        fed.server->handle_local(sniff(c->make_local()));
    }
    fed.server->aggregate();

    const std::string needle = names::personal_bias;
    auto it = std::search(all_bytes.begin(), all_bytes.end(), needle.begin(), needle.end());
    CHECK(it == all_bytes.end());
    // sanity: other parameter names do appear
    const std::string present = "head.w";
    CHECK(std::search(all_bytes.begin(), all_bytes.end(), present.begin(), present.end()) !=
          all_bytes.end());
}

TEST_CASE("protocol errors: wrong round, node-row mismatch, duplicate upload") {
    MiniFed fed(2, 2, 2, 1);
    auto g0 = MiniFed::bounce(fed.server->make_global(0));
    fed.clients[0]->handle_global(g0);

    // tamper: resend the same round-1 GLOBAL after the client advanced
    auto up0 = MiniFed::bounce(fed.clients[0]->make_local());
    CHECK_THROWS_AS(fed.clients[0]->handle_global(g0), ProtocolError);

    fed.server->handle_local(up0);
    CHECK_THROWS_AS(fed.server->handle_local(up0), ProtocolError);  // duplicate

    // wrong node-row count: craft a GLOBAL whose node_emb has 3 rows
    auto params = fed.server->global_params();
    auto bad = params;
    for (auto& t : bad)
        if (t.name == names::node_emb) {
            t.dims = Shape{3, 4};
            t.data.resize(12, 0.0f);
        }
    auto bad_msg = encode_global(1, bad);
    CHECK_THROWS_AS(fed.clients[1]->handle_global(bad_msg), ProtocolError);
}
