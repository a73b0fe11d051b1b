#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedci/model.hpp"
#include "fedci/wire.hpp"

using namespace fedci;

namespace {

ParamSet<float> sample_params(uint64_t seed) {
    Rng rng(seed);
    ParamSet<float> ps;
    NamedTensor<float> a;
    a.name = "layer.w";
    a.dims = Shape{2, 2};
    for (int i = 0; i < 4; ++i) a.data.push_back(static_cast<float>(rng.uniform(-1, 1)));
    ps.push_back(a);
    NamedTensor<float> b;
    b.name = "node_emb";
    b.dims = Shape{3, 2};
    for (int i = 0; i < 6; ++i) b.data.push_back(static_cast<float>(rng.uniform(-1, 1)));
    ps.push_back(b);
    return ps;
}

}  // namespace

TEST_CASE("empty frame is exactly 9 bytes") {
    auto bytes = frame_message(encode_shutdown());
    CHECK(bytes.size() == 9);
    CHECK(bytes[0] == 0x46);
    CHECK(bytes[1] == 0x43);
    CHECK(bytes[2] == 0x49);
    CHECK(bytes[3] == 0x31);
    CHECK(bytes[4] == 4);  // SHUTDOWN
    for (int i = 5; i < 9; ++i) CHECK(bytes[static_cast<size_t>(i)] == 0);
}

TEST_CASE("parser reassembles messages fed byte by byte") {
    Message m1{MsgType::metrics, {'h', 'i'}};
    Message m2{MsgType::hello, {}};
    HelloMsg hello{7, {1, 2, 3}};
    m2 = encode_hello(hello);

    auto b1 = frame_message(m1);
    auto b2 = frame_message(m2);
    std::vector<uint8_t> stream = b1;
    stream.insert(stream.end(), b2.begin(), b2.end());

    FrameParser parser;
    std::vector<Message> got;
    for (uint8_t byte : stream) {
        parser.feed(&byte, 1);
        Message out;
        while (parser.next(out)) got.push_back(out);
    }
    REQUIRE(got.size() == 2);
    CHECK(got[0].type == MsgType::metrics);
    CHECK(parse_metrics(got[0]) == "hi");
    auto h = parse_hello(got[1]);
    CHECK(h.client_id == 7);
    CHECK(h.node_ids == std::vector<int64_t>{1, 2, 3});
}

TEST_CASE("corrupted magic kills the stream") {
    auto bytes = frame_message(encode_shutdown());
    bytes[1] = 0x58;
    FrameParser parser;
    parser.feed(bytes.data(), bytes.size());
    Message out;
    CHECK_THROWS_AS(parser.next(out), DecodeError);
}

TEST_CASE("empty param set serializes to the 4-byte count field") {
    std::vector<uint8_t> out;
    WireStats stats;
    serialize_params({}, out, &stats);
    CHECK(out.size() == 4);
    CHECK(stats.data_bytes == 0);
    CHECK(stats.meta_bytes == 4);
}

TEST_CASE("param set round-trips bitwise") {
    auto ps = sample_params(3);
    std::vector<uint8_t> out;
    WireStats stats;
    serialize_params(ps, out, &stats);
    CHECK(stats.data_bytes == 4 * 10);  // 4 + 6 elements

    size_t off = 0;
    WireStats back_stats;
    auto back = deserialize_params(out, off, &back_stats);
    CHECK(off == out.size());
    CHECK(back_stats.data_bytes == stats.data_bytes);
    CHECK(back_stats.meta_bytes == stats.meta_bytes);
    REQUIRE(back.size() == ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
        CHECK(back[i].name == ps[i].name);
        CHECK(back[i].dims == ps[i].dims);
        CHECK(back[i].data == ps[i].data);  // float equality: bitwise round-trip
    }
}

TEST_CASE("personal_bias never serializes") {
    ParamSet<float> ps;
    NamedTensor<float> t;
    t.name = names::personal_bias;
    t.dims = Shape{4};
    t.data = {1, 2, 3, 4};
    ps.push_back(t);
    std::vector<uint8_t> out;
    CHECK_THROWS_AS(serialize_params(ps, out), ProtocolError);

    // and a malicious peer cannot smuggle it in either
    std::vector<uint8_t> forged;
    forged.push_back(1);  // count = 1 (LE u32)
    forged.push_back(0);
    forged.push_back(0);
    forged.push_back(0);
    const std::string name = names::personal_bias;
    forged.push_back(static_cast<uint8_t>(name.size()));
    forged.push_back(0);
    forged.insert(forged.end(), name.begin(), name.end());
    forged.push_back(1);                          // ndim
    forged.insert(forged.end(), {1, 0, 0, 0});    // extent 1
    forged.insert(forged.end(), {0, 0, 0, 0});    // one f32
    size_t off = 0;
    CHECK_THROWS_AS(deserialize_params(forged, off), DecodeError);
}

TEST_CASE("truncated buffers report the failing offset") {
    auto ps = sample_params(4);
    std::vector<uint8_t> out;
    serialize_params(ps, out);
    for (size_t cut : {3UL, 7UL, 12UL, out.size() - 1}) {
        std::vector<uint8_t> partial(out.begin(), out.begin() + static_cast<int64_t>(cut));
        size_t off = 0;
        CHECK_THROWS_AS(deserialize_params(partial, off), DecodeError);
        try {
            size_t o2 = 0;
            deserialize_params(partial, o2);
        } catch (const DecodeError& e) {
            CHECK(e.offset <= cut);
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
}

TEST_CASE("global and local messages round-trip") {
    auto ps = sample_params(5);
    WireStats stats;
    auto gmsg = encode_global(12, ps, &stats);
    auto g = parse_global(gmsg);
    CHECK(g.round == 12);
    CHECK(g.params.size() == 2);
    CHECK(g.stats.data_bytes == stats.data_bytes);

    auto lmsg = encode_local(3, 9, ps);
    auto l = parse_local(lmsg);
    CHECK(l.round == 3);
    CHECK(l.client_id == 9);
    CHECK(l.params[1].data == ps[1].data);

    CHECK_THROWS_AS(parse_global(lmsg), ProtocolError);
}

TEST_CASE("hello rejects node ids that do not fit the wire") {
    CHECK_THROWS_AS(encode_hello(HelloMsg{0, {-1}}), ProtocolError);
    CHECK_THROWS_AS(encode_hello(HelloMsg{0, {1LL << 40}}), ProtocolError);
}
