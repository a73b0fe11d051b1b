#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "fedci/federation.hpp"

namespace fedci {

std::pair<std::string, uint16_t> parse_addr(const std::string& addr);

// Blocking framed-message connection.
class TcpConn {
public:
    explicit TcpConn(int fd) : fd_(fd) {}
    ~TcpConn();
    TcpConn(TcpConn&& other) noexcept;
    TcpConn& operator=(TcpConn&&) = delete;
    TcpConn(const TcpConn&) = delete;

    static TcpConn connect_to(const std::string& host, uint16_t port, int timeout_ms = 15000);

    void send_msg(const Message& msg);
    // Blocks for a full frame; throws ProtocolError on EOF, DecodeError on a
    // corrupt stream.
    Message recv_msg();

    void shutdown_write();

private:
    int fd_ = -1;
    FrameParser parser_;
};

class TcpListener {
public:
    explicit TcpListener(const std::string& addr);  // port 0 picks an ephemeral port
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;

    uint16_t port() const { return port_; }
    TcpConn accept_conn();

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

struct ServerRunResult {
    ParamSet<float> global_params;
    CostLedger ledger;
    std::vector<MetricReport> reports;  // per client, ascending client id
};

// Synchronous rounds over real sockets: one reader thread per client feeding a
// queue, aggregation at the all-uploads barrier on the coordinator thread.
// A client disconnect aborts the run.
ServerRunResult serve_tcp(ServerCore& core, TcpListener& listener);

struct ClientRunResult {
    ParamSet<float> params;  // shared + own node rows (the personal bias stays in memory)
    double last_loss = 0.0;
};

ClientRunResult run_client_tcp(ClientCore& core, TcpConn& conn);

}  // namespace fedci
