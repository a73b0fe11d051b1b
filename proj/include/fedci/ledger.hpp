#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedci {

enum class Direction { up, down };

// "model": parameter-exchange traffic (the only kind Fed-CI produces).
// "data": raw observation exchange; no message type maps to it, so its totals
// stay at zero by construction.
enum class Channel { model, data };

struct LedgerRecord {
    int64_t round = 0;  // 0 for registration traffic
    Direction direction = Direction::up;
    uint32_t client_id = 0;
    uint64_t payload_bytes = 0;  // f32 tensor data only
    uint64_t framing_bytes = 0;  // frame header + message fields + wire metadata
    Channel channel = Channel::model;
};

class CostLedger {
public:
    void add(const LedgerRecord& rec) { records_.push_back(rec); }

    const std::vector<LedgerRecord>& records() const { return records_; }

    uint64_t payload_total(Channel ch) const;
    uint64_t framing_total() const;
    uint64_t payload_total_for(uint32_t client_id, Channel ch) const;
    // GLOBAL/LOCAL rows, i.e. records that actually carried parameters
    int64_t param_record_count() const;

    std::string to_csv() const;
    static CostLedger from_csv(const std::string& text);

private:
    std::vector<LedgerRecord> records_;
};

// Payload bytes of the Fed-CI model channel over a full run:
// rounds x 2 directions x clients x parameters x 4 bytes. The data channel
// contributes nothing.
uint64_t cost_formula(int64_t rounds, int64_t clients, int64_t param_count);

}  // namespace fedci
