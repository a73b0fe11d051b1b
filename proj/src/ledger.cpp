#include "fedci/ledger.hpp"

#include <sstream>

#include "fedci/errors.hpp"

namespace fedci {

uint64_t CostLedger::payload_total(Channel ch) const {
    uint64_t sum = 0;
    for (const auto& r : records_)
        if (r.channel == ch) sum += r.payload_bytes;
    return sum;
}

uint64_t CostLedger::framing_total() const {
    uint64_t sum = 0;
    for (const auto& r : records_) sum += r.framing_bytes;
    return sum;
}

uint64_t CostLedger::payload_total_for(uint32_t client_id, Channel ch) const {
    uint64_t sum = 0;
    for (const auto& r : records_)
        if (r.client_id == client_id && r.channel == ch) sum += r.payload_bytes;
    return sum;
}

int64_t CostLedger::param_record_count() const {
    int64_t n = 0;
    for (const auto& r : records_)
        if (r.payload_bytes > 0) ++n;
    return n;
}

std::string CostLedger::to_csv() const {
    std::ostringstream out;
    out << "round,direction,client_id,payload_bytes,framing_bytes,channel\n";
    for (const auto& r : records_) {
        out << r.round << ',' << (r.direction == Direction::up ? "up" : "down") << ','
            << r.client_id << ',' << r.payload_bytes << ',' << r.framing_bytes << ','
            << (r.channel == Channel::model ? "model" : "data") << '\n';
    }
    return out.str();
}

CostLedger CostLedger::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty ledger csv");
    CostLedger ledger;
    int64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string round, dir, client, payload, framing, channel;
        if (!std::getline(ls, round, ',') || !std::getline(ls, dir, ',') ||
            !std::getline(ls, client, ',') || !std::getline(ls, payload, ',') ||
            !std::getline(ls, framing, ',') || !std::getline(ls, channel))
            throw IoError("malformed ledger row at line " + std::to_string(lineno));
        LedgerRecord rec;
        try {
            rec.round = std::stoll(round);
            rec.client_id = static_cast<uint32_t>(std::stoul(client));
            rec.payload_bytes = std::stoull(payload);
            rec.framing_bytes = std::stoull(framing);
        } catch (const std::exception&) {
            throw IoError("malformed ledger number at line " + std::to_string(lineno));
        }
        if (dir == "up")
            rec.direction = Direction::up;
        else if (dir == "down")
            rec.direction = Direction::down;
        else
            throw IoError("bad direction '" + dir + "' at line " + std::to_string(lineno));
        if (channel == "model")
            rec.channel = Channel::model;
        else if (channel == "data")
            rec.channel = Channel::data;
        else
            throw IoError("bad channel '" + channel + "' at line " + std::to_string(lineno));
        ledger.add(rec);
    }
    return ledger;
}

uint64_t cost_formula(int64_t rounds, int64_t clients, int64_t param_count) {
    if (rounds < 0 || clients < 0 || param_count < 0)
        throw ConfigError("cost_formula arguments must be >= 0");
    return static_cast<uint64_t>(rounds) * 2ULL * static_cast<uint64_t>(clients) *
           static_cast<uint64_t>(param_count) * 4ULL;
}

}  // namespace fedci
