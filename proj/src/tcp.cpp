#include "fedci/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

namespace fedci {

namespace {

void close_fd(int& fd) {
    if (fd >= 0) {
        ::close(fd);
        fd = -1;
    }
}

sockaddr_in make_sockaddr(const std::string& host, uint16_t port) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
        throw IoError("bad IPv4 address '" + host + "'");
    return sa;
}

}  // namespace

std::pair<std::string, uint16_t> parse_addr(const std::string& addr) {
    const size_t colon = addr.rfind(':');
    if (colon == std::string::npos) throw ConfigError("address must be host:port, got '" + addr + "'");
    const std::string host = addr.substr(0, colon);
    unsigned long port;
    try {
        port = std::stoul(addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad port in address '" + addr + "'");
    }
    if (port > 0xffff) throw ConfigError("port out of range in '" + addr + "'");
    return {host.empty() ? "127.0.0.1" : host, static_cast<uint16_t>(port)};
}

TcpConn::~TcpConn() { close_fd(fd_); }

TcpConn::TcpConn(TcpConn&& other) noexcept : fd_(other.fd_), parser_(std::move(other.parser_)) {
    other.fd_ = -1;
}

TcpConn TcpConn::connect_to(const std::string& host, uint16_t port, int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    sockaddr_in sa = make_sockaddr(host, port);
    for (;;) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw IoError("socket() failed");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return TcpConn(fd);
        }
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline)
            throw IoError("cannot connect to " + host + ":" + std::to_string(port));
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

void TcpConn::send_msg(const Message& msg) {
    auto bytes = frame_message(msg);
    size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) throw IoError("send failed (peer closed?)");
        sent += static_cast<size_t>(n);
    }
}

Message TcpConn::recv_msg() {
    Message out;
    if (parser_.next(out)) return out;
    uint8_t buf[4096];
    for (;;) {
        const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
        if (n == 0) throw ProtocolError("connection closed by peer");
        if (n < 0) throw IoError("recv failed");
        parser_.feed(buf, static_cast<size_t>(n));
        if (parser_.next(out)) return out;
    }
}

void TcpConn::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

TcpListener::TcpListener(const std::string& addr) {
    auto [host, port] = parse_addr(addr);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa = make_sockaddr(host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
        close_fd(fd_);
        throw IoError("cannot bind " + addr + " (port in use?)");
    }
    if (::listen(fd_, 64) != 0) {
        close_fd(fd_);
        throw IoError("listen failed on " + addr);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() { close_fd(fd_); }

TcpConn TcpListener::accept_conn() {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw IoError("accept failed");
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpConn(fd);
}

namespace {

struct Event {
    uint32_t client_id;
    bool ok;             // false: disconnect/error, text in `error`
    Message msg;
    std::string error;
};

struct EventQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Event> events;

    void push(Event e) {
        {
            std::lock_guard<std::mutex> lock(mu);
            events.push_back(std::move(e));
        }
        cv.notify_one();
    }
    Event pop() {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return !events.empty(); });
        Event e = std::move(events.front());
        events.pop_front();
        return e;
    }
};

}  // namespace

ServerRunResult serve_tcp(ServerCore& core, TcpListener& listener) {
    // registration: accept connections and read the HELLO synchronously
    std::map<uint32_t, TcpConn> conns;
    while (!core.registration_complete()) {
        TcpConn conn = listener.accept_conn();
        Message hello = conn.recv_msg();
        HelloMsg h = parse_hello(hello);
        core.handle_hello(hello);  // validates duplicates/overlaps, ledgers bytes
        conns.emplace(h.client_id, std::move(conn));
    }
    core.start();

    // one reader thread per client from here on
    EventQueue queue;
    std::atomic<bool> shutting_down{false};
    std::vector<std::thread> readers;
    readers.reserve(conns.size());
    for (auto& [id, conn] : conns) {
        uint32_t client_id = id;
        TcpConn* c = &conn;
        readers.emplace_back([c, client_id, &queue, &shutting_down] {
            try {
                for (;;) queue.push(Event{client_id, true, c->recv_msg(), {}});
            } catch (const std::exception& e) {
                if (!shutting_down.load()) queue.push(Event{client_id, false, {}, e.what()});
            }
        });
    }

    auto fail = [&](const std::string& why) {
        shutting_down.store(true);
        for (auto& [id, conn] : conns) conn.shutdown_write();
        throw ProtocolError(why);
    };

    try {
        while (!core.finished()) {
            for (uint32_t id : core.client_ids()) conns.at(id).send_msg(core.make_global(id));

            const bool final_round = core.current_round() == core.total_rounds();
            size_t locals = 0;
            size_t metrics = 0;
            const size_t want_metrics = final_round ? conns.size() : 0;
            while (locals < conns.size() || metrics < want_metrics) {
                Event e = queue.pop();
                if (!e.ok)
                    fail("client " + std::to_string(e.client_id) + " failed mid-round: " + e.error);
                switch (e.msg.type) {
                    case MsgType::local:
                        core.handle_local(e.msg);
                        ++locals;
                        break;
                    case MsgType::metrics:
                        core.handle_metrics(e.msg);
                        ++metrics;
                        break;
                    default:
                        fail("unexpected message type " +
                             std::to_string(static_cast<int>(e.msg.type)) + " from client " +
                             std::to_string(e.client_id));
                }
            }
            core.aggregate();
        }
    } catch (...) {
        shutting_down.store(true);
        for (auto& [id, conn] : conns) conn.shutdown_write();
        for (auto& t : readers) t.join();
        throw;
    }

    shutting_down.store(true);
    for (uint32_t id : core.client_ids()) conns.at(id).send_msg(core.make_shutdown(id));
    for (auto& t : readers) t.join();

    ServerRunResult result;
    result.global_params = core.global_params();
    result.ledger = core.ledger();
    result.reports = core.client_reports();
    return result;
}

ClientRunResult run_client_tcp(ClientCore& core, TcpConn& conn) {
    conn.send_msg(core.make_hello());
    for (;;) {
        Message msg = conn.recv_msg();
        if (msg.type == MsgType::shutdown) break;
        if (msg.type != MsgType::global)
            throw ProtocolError("client expected GLOBAL or SHUTDOWN, got type " +
                                std::to_string(static_cast<int>(msg.type)));
        core.handle_global(msg);
        const bool final_round = core.is_final_round();
        conn.send_msg(core.make_local());
        if (final_round) conn.send_msg(core.make_metrics());
    }
    ClientRunResult result;
    result.params = to_param_set(core.params(), {names::personal_bias});
    result.last_loss = core.last_epoch_loss();
    return result;
}

}  // namespace fedci
