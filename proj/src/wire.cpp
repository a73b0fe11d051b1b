#include "fedci/wire.hpp"

#include <cstring>

#include "fedci/model.hpp"

namespace fedci {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t off;

    void need(size_t n, const char* what) const {
        if (off + n > buf.size()) throw DecodeError(std::string("truncated ") + what, off);
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[off++];
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(buf[off] | (buf[off + 1] << 8));
        off += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
        off += 4;
        return v;
    }
    float f32(const char* what) {
        uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

std::vector<uint8_t> frame_message(const Message& msg) {
    if (msg.payload.size() > kMaxPayload) throw ProtocolError("payload exceeds 2^31 bytes");
    std::vector<uint8_t> out;
    out.reserve(kFrameHeaderBytes + msg.payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<uint8_t>(msg.type));
    put_u32(out, static_cast<uint32_t>(msg.payload.size()));
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
}

void FrameParser::feed(const uint8_t* data, size_t n) { buf_.insert(buf_.end(), data, data + n); }

bool FrameParser::next(Message& out) {
    if (buf_.size() < kFrameHeaderBytes) return false;
    for (int i = 0; i < 4; ++i)
        if (buf_[static_cast<size_t>(i)] != kMagic[i])
            throw DecodeError("bad frame magic", consumed_total_ + static_cast<size_t>(i));
    const uint8_t type = buf_[4];
    if (type > static_cast<uint8_t>(MsgType::shutdown))
        throw DecodeError("unknown message type " + std::to_string(type), consumed_total_ + 4);
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(buf_[5 + static_cast<size_t>(i)]) << (8 * i);
    if (buf_.size() < kFrameHeaderBytes + len) return false;

    out.type = static_cast<MsgType>(type);
    out.payload.assign(buf_.begin() + kFrameHeaderBytes, buf_.begin() + kFrameHeaderBytes + len);
    buf_.erase(buf_.begin(), buf_.begin() + kFrameHeaderBytes + len);
    consumed_total_ += kFrameHeaderBytes + len;
    return true;
}

void serialize_params(const ParamSet<float>& params, std::vector<uint8_t>& out, WireStats* stats) {
    WireStats ws;
    const size_t start = out.size();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& t : params) {
        if (t.name == names::personal_bias)
            throw ProtocolError("refusing to serialize 'personal_bias': it never leaves the client");
        if (t.name.size() > 0xffff) throw ProtocolError("parameter name too long: " + t.name);
        if (static_cast<int64_t>(t.data.size()) != t.dims.numel())
            throw ProtocolError("parameter '" + t.name + "' has inconsistent payload");
        put_u16(out, static_cast<uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<uint8_t>(t.dims.ndim));
        for (int i = 0; i < t.dims.ndim; ++i) put_u32(out, static_cast<uint32_t>(t.dims[i]));
        for (float v : t.data) put_f32(out, v);
        ws.data_bytes += 4 * t.data.size();
    }
    ws.meta_bytes = out.size() - start - ws.data_bytes;
    if (stats) *stats = ws;
}

ParamSet<float> deserialize_params(const std::vector<uint8_t>& buf, size_t& offset, WireStats* stats) {
    Reader r{buf, offset};
    WireStats ws;
    const size_t start = r.off;
    const uint32_t count = r.u32("tensor count");
    ParamSet<float> out;
    out.reserve(count);
    std::vector<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor<float> t;
        const uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        t.name.assign(reinterpret_cast<const char*>(buf.data()) + r.off, name_len);
        r.off += name_len;
        for (const auto& s : seen)
            if (s == t.name) throw DecodeError("duplicate parameter '" + t.name + "'", r.off);
        seen.push_back(t.name);
        if (t.name == names::personal_bias)
            throw DecodeError("'personal_bias' must never appear on the wire", r.off);
        const uint8_t ndim = r.u8("ndim");
        if (ndim == 0 || ndim > 4) throw DecodeError("ndim must be 1..4", r.off - 1);
        int64_t numel = 1;
        Shape s;
        s.ndim = ndim;
        for (int d = 0; d < ndim; ++d) {
            const uint32_t e = r.u32("extent");
            if (e == 0) throw DecodeError("zero extent", r.off - 4);
            s.ext[static_cast<size_t>(d)] = e;
            numel *= e;
        }
        t.dims = s;
        r.need(static_cast<size_t>(numel) * 4, "tensor data");
        t.data.resize(static_cast<size_t>(numel));
        for (int64_t j = 0; j < numel; ++j) t.data[static_cast<size_t>(j)] = r.f32("tensor data");
        ws.data_bytes += 4 * static_cast<uint64_t>(numel);
        out.push_back(std::move(t));
    }
    ws.meta_bytes = (r.off - start) - ws.data_bytes;
    offset = r.off;
    if (stats) *stats = ws;
    return out;
}

Message encode_hello(const HelloMsg& m) {
    Message msg{MsgType::hello, {}};
    put_u32(msg.payload, m.client_id);
    put_u32(msg.payload, static_cast<uint32_t>(m.node_ids.size()));
    for (int64_t id : m.node_ids) {
        if (id < 0 || id > 0xffffffffLL)
            throw ProtocolError("node id " + std::to_string(id) + " does not fit the u32 wire format");
        put_u32(msg.payload, static_cast<uint32_t>(id));
    }
    return msg;
}

HelloMsg parse_hello(const Message& msg) {
    if (msg.type != MsgType::hello) throw ProtocolError("expected HELLO");
    Reader r{msg.payload, 0};
    HelloMsg m;
    m.client_id = r.u32("client id");
    const uint32_t n = r.u32("node count");
    m.node_ids.reserve(n);
    for (uint32_t i = 0; i < n; ++i) m.node_ids.push_back(r.u32("node id"));
    if (r.off != msg.payload.size()) throw DecodeError("trailing bytes in HELLO", r.off);
    return m;
}

Message encode_global(uint32_t round, const ParamSet<float>& params, WireStats* stats) {
    Message msg{MsgType::global, {}};
    put_u32(msg.payload, round);
    serialize_params(params, msg.payload, stats);
    return msg;
}

GlobalMsg parse_global(const Message& msg) {
    if (msg.type != MsgType::global) throw ProtocolError("expected GLOBAL");
    GlobalMsg m;
    Reader r{msg.payload, 0};
    m.round = r.u32("round");
    size_t off = r.off;
    m.params = deserialize_params(msg.payload, off, &m.stats);
    if (off != msg.payload.size()) throw DecodeError("trailing bytes in GLOBAL", off);
    return m;
}

Message encode_local(uint32_t round, uint32_t client_id, const ParamSet<float>& params,
                     WireStats* stats) {
    Message msg{MsgType::local, {}};
    put_u32(msg.payload, round);
    put_u32(msg.payload, client_id);
    serialize_params(params, msg.payload, stats);
    return msg;
}

LocalMsg parse_local(const Message& msg) {
    if (msg.type != MsgType::local) throw ProtocolError("expected LOCAL");
    LocalMsg m;
    Reader r{msg.payload, 0};
    m.round = r.u32("round");
    m.client_id = r.u32("client id");
    size_t off = r.off;
    m.params = deserialize_params(msg.payload, off, &m.stats);
    if (off != msg.payload.size()) throw DecodeError("trailing bytes in LOCAL", off);
    return m;
}

Message encode_metrics(const std::string& json_text) {
    Message msg{MsgType::metrics, {}};
    msg.payload.assign(json_text.begin(), json_text.end());
    return msg;
}

std::string parse_metrics(const Message& msg) {
    if (msg.type != MsgType::metrics) throw ProtocolError("expected METRICS");
    return std::string(msg.payload.begin(), msg.payload.end());
}

Message encode_shutdown() { return Message{MsgType::shutdown, {}}; }

}  // namespace fedci
