#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "fedci/params.hpp"

// Wire protocol. Frame layout (little-endian throughout):
//   magic 'FCI1' | type u8 | payload length u32 | payload
// ParamSetWire payload layout:
//   tensor count u32, then per tensor:
//   name length u16 | name bytes | ndim u8 | ndim x extent u32 | row-major f32 data

namespace fedci {

enum class MsgType : uint8_t {
    hello = 0,
    global = 1,
    local = 2,
    metrics = 3,
    shutdown = 4,
};

struct Message {
    MsgType type;
    std::vector<uint8_t> payload;
};

inline constexpr uint8_t kMagic[4] = {0x46, 0x43, 0x49, 0x31};  // "FCI1"
inline constexpr size_t kFrameHeaderBytes = 9;
inline constexpr size_t kMaxPayload = 1u << 31;

std::vector<uint8_t> frame_message(const Message& msg);

// Incremental parser; tolerates arbitrary fragmentation of the byte stream.
// Throws DecodeError on a corrupted magic, after which the stream is dead.
class FrameParser {
public:
    void feed(const uint8_t* data, size_t n);
    bool next(Message& out);

private:
    std::vector<uint8_t> buf_;
    size_t consumed_total_ = 0;
};

// Byte split of a serialized ParamSet: `data` counts only the f32 tensor
// payloads (4 bytes per element); everything else is metadata and lands in the
// ledger's framing column.
struct WireStats {
    uint64_t data_bytes = 0;
    uint64_t meta_bytes = 0;
};

// Refuses `personal_bias` (never leaves the client).
void serialize_params(const ParamSet<float>& params, std::vector<uint8_t>& out,
                      WireStats* stats = nullptr);
ParamSet<float> deserialize_params(const std::vector<uint8_t>& buf, size_t& offset,
                                   WireStats* stats = nullptr);

// Typed payloads.
struct HelloMsg {
    uint32_t client_id = 0;
    std::vector<int64_t> node_ids;
};
struct GlobalMsg {
    uint32_t round = 0;
    ParamSet<float> params;
    WireStats stats;
};
struct LocalMsg {
    uint32_t round = 0;
    uint32_t client_id = 0;
    ParamSet<float> params;
    WireStats stats;
};

Message encode_hello(const HelloMsg& m);
HelloMsg parse_hello(const Message& msg);

Message encode_global(uint32_t round, const ParamSet<float>& params, WireStats* stats = nullptr);
GlobalMsg parse_global(const Message& msg);

Message encode_local(uint32_t round, uint32_t client_id, const ParamSet<float>& params,
                     WireStats* stats = nullptr);
LocalMsg parse_local(const Message& msg);

Message encode_metrics(const std::string& json_text);
std::string parse_metrics(const Message& msg);

Message encode_shutdown();

}  // namespace fedci
