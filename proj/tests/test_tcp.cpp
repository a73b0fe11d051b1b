#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "fedci/tcp.hpp"

using namespace fedci;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.t_in = 4;
    cfg.t_out = 2;
    cfg.hidden = 8;
    cfg.d_td = 4;
    cfg.d_tw = 4;
    cfg.d_n = 4;
    cfg.k_layers = 1;
    cfg.dropout = 0.0;
    cfg.steps_per_day = 48;
    return cfg;
}

}  // namespace

TEST_CASE("address parsing") {
    auto [host, port] = parse_addr("127.0.0.1:9000");
    CHECK(host == "127.0.0.1");
    CHECK(port == 9000);
    auto [h2, p2] = parse_addr(":0");
    CHECK(h2 == "127.0.0.1");
    CHECK(p2 == 0);
    CHECK_THROWS_AS(parse_addr("no-port"), ConfigError);
    CHECK_THROWS_AS(parse_addr("x:99999"), ConfigError);
}

TEST_CASE("messages survive a real socket round-trip") {
    TcpListener listener("127.0.0.1:0");
    REQUIRE(listener.port() != 0);

    std::string peer_got;
    std::thread peer([port = listener.port(), &peer_got] {
        TcpConn conn = TcpConn::connect_to("127.0.0.1", port);
        conn.send_msg(encode_hello(HelloMsg{3, {7, 8, 9}}));
        Message reply = conn.recv_msg();
        if (reply.type == MsgType::metrics) peer_got = parse_metrics(reply);
    });

    TcpConn server_side = listener.accept_conn();
    Message hello = server_side.recv_msg();
    auto h = parse_hello(hello);
    CHECK(h.client_id == 3);
    CHECK(h.node_ids == std::vector<int64_t>{7, 8, 9});
    server_side.send_msg(encode_metrics("ok"));
    peer.join();
    CHECK(peer_got == "ok");
}

TEST_CASE("a client disconnect aborts the run without partial aggregation") {
    ModelConfig cfg = tiny_model();
    ServerCore core(cfg, 5, /*rounds=*/3, Weighting::uniform, /*expected=*/1);
    TcpListener listener("127.0.0.1:0");

    bool got_global = false;
    std::thread client([port = listener.port(), &got_global] {
        TcpConn conn = TcpConn::connect_to("127.0.0.1", port);
        conn.send_msg(encode_hello(HelloMsg{0, {1, 2}}));
        Message global = conn.recv_msg();
        got_global = global.type == MsgType::global;
        // vanish mid-round instead of uploading
    });

    CHECK_THROWS_AS(serve_tcp(core, listener), ProtocolError);
    client.join();
    CHECK(got_global);
    CHECK(core.current_round() == 1);  // never aggregated
}
