#include "fedci/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedci/rng.hpp"

namespace fedci {

using nlohmann::json;

namespace {

constexpr int64_t kMonday2018 = 17532LL * 86400LL;  // 2018-01-01T00:00Z

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

SeriesFrame load_csv(const std::string& csv_path, const std::string& meta_path) {
    json meta;
    try {
        meta = json::parse(read_file(meta_path));
    } catch (const json::parse_error& e) {
        throw IoError("bad metadata " + meta_path + ": " + e.what());
    }
    if (!meta.contains("start_epoch_s") || !meta.contains("interval_s"))
        throw IoError(meta_path + " must define start_epoch_s and interval_s");

    SeriesFrame frame;
    frame.start_epoch_s = meta["start_epoch_s"].get<int64_t>();
    frame.interval_s = meta["interval_s"].get<int64_t>();
    if (frame.interval_s <= 0 || 86400 % frame.interval_s != 0)
        throw IoError("interval_s must divide 86400, got " + std::to_string(frame.interval_s));

    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path);

    std::string line;
    if (!std::getline(in, line)) throw IoError(csv_path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) {
        if (cell.rfind("node_", 0) != 0)
            throw IoError("header cell '" + cell + "' is not of the form node_<id>");
        frame.node_ids.push_back(std::stoll(cell.substr(5)));
    }
    const int64_t n = static_cast<int64_t>(frame.node_ids.size());
    if (n == 0) throw IoError(csv_path + " has no node columns");
    if (meta.contains("nodes") && meta["nodes"].get<int64_t>() != n)
        throw IoError("metadata claims " + meta["nodes"].dump() + " nodes, header has " +
                      std::to_string(n));

    std::vector<double> values;
    std::vector<bool> missing;
    int64_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        int64_t cols = 0;
        std::string field;
        while (std::getline(ss, field, ',')) {
            if (field.empty() || field == "nan" || field == "NaN") {
                values.push_back(0.0);
                missing.push_back(true);
            } else {
                size_t used = 0;
                double v;
                try {
                    v = std::stod(field, &used);
                } catch (const std::exception&) {
                    throw IoError("unparsable value '" + field + "' at row " + std::to_string(rows + 1));
                }
                if (used != field.size())
                    throw IoError("unparsable value '" + field + "' at row " + std::to_string(rows + 1));
                values.push_back(v);
                missing.push_back(std::isnan(v));
            }
            ++cols;
        }
        if (!line.empty() && line.back() == ',') {  // trailing empty cell
            values.push_back(0.0);
            missing.push_back(true);
            ++cols;
        }
        if (cols != n)
            throw IoError("row " + std::to_string(rows + 1) + " has " + std::to_string(cols) +
                          " cells, expected " + std::to_string(n));
        ++rows;
    }
    if (rows == 0) throw IoError(csv_path + " has no data rows");

    // forward fill per column, zero fill leading gaps
    for (int64_t c = 0; c < n; ++c) {
        double last = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
            const size_t i = static_cast<size_t>(r * n + c);
            if (missing[i])
                values[i] = last;
            else
                last = values[i];
        }
    }

    frame.values = Tensor<double>(Shape{rows, n}, std::move(values));
    return frame;
}

void save_csv(const SeriesFrame& frame, const std::string& csv_path, const std::string& meta_path) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path);
    for (int64_t c = 0; c < frame.nodes(); ++c) {
        if (c) out << ',';
        out << "node_" << frame.node_ids[static_cast<size_t>(c)];
    }
    out << '\n';
    char buf[32];
    for (int64_t r = 0; r < frame.rows(); ++r) {
        for (int64_t c = 0; c < frame.nodes(); ++c) {
            if (c) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", frame.values.at({r, c}));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + csv_path);

    json meta;
    meta["start_epoch_s"] = frame.start_epoch_s;
    meta["interval_s"] = frame.interval_s;
    meta["nodes"] = frame.nodes();
    std::ofstream mout(meta_path);
    if (!mout) throw IoError("cannot write " + meta_path);
    mout << meta.dump(2) << '\n';
}

SeriesFrame gen_synthetic(int64_t nodes, int64_t days, int64_t interval_s, uint64_t seed,
                          double noise_frac) {
    if (nodes < 1) throw ConfigError("gen_synthetic: nodes must be >= 1");
    if (days < 1) throw ConfigError("gen_synthetic: days must be >= 1");
    if (interval_s <= 0 || 86400 % interval_s != 0)
        throw ConfigError("gen_synthetic: interval_s must divide 86400");

    const int64_t steps_per_day = 86400 / interval_s;
    const int64_t rows = days * steps_per_day;

    // separate streams so the deterministic structure is identical whether or
    // not noise is enabled
    Rng node_rng(mix_seed(seed, "synth-nodes"));
    std::vector<double> amp(static_cast<size_t>(nodes)), phase(static_cast<size_t>(nodes)),
        level(static_cast<size_t>(nodes));
    for (int64_t c = 0; c < nodes; ++c) {
        amp[static_cast<size_t>(c)] = node_rng.uniform(20.0, 50.0);
        // sensors share the city's daily rhythm up to a mild lead/lag
        phase[static_cast<size_t>(c)] = node_rng.uniform(-0.4, 0.4);
        level[static_cast<size_t>(c)] = node_rng.uniform(40.0, 80.0);
    }

    Rng noise_rng(mix_seed(seed, "synth-noise"));
    SeriesFrame frame;
    frame.start_epoch_s = kMonday2018;
    frame.interval_s = interval_s;
    frame.node_ids.resize(static_cast<size_t>(nodes));
    for (int64_t c = 0; c < nodes; ++c) frame.node_ids[static_cast<size_t>(c)] = c;

    frame.values = Tensor<double>(Shape{rows, nodes});
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t t = frame.start_epoch_s + r * interval_s;
        const double tod_frac = static_cast<double>(floor_mod(t, 86400)) / 86400.0;
        const int64_t dow = floor_mod(floor_div(t, 86400) + 3, 7);
        const double weekday_factor = dow < 5 ? 1.0 : 0.6;
        for (int64_t c = 0; c < nodes; ++c) {
            double v = amp[static_cast<size_t>(c)] *
                           std::sin(6.283185307179586 * tod_frac + phase[static_cast<size_t>(c)]) +
                       level[static_cast<size_t>(c)] * weekday_factor;
            if (noise_frac > 0.0) v += noise_frac * amp[static_cast<size_t>(c)] * noise_rng.normal();
            frame.values.at({r, c}) = v;
        }
    }
    return frame;
}

void SplitSpec::validate() const {
    if (train <= 0.0 || val <= 0.0 || test <= 0.0)
        throw ConfigError("split fractions must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
}

SplitFrames split(const SeriesFrame& frame, const SplitSpec& spec) {
    spec.validate();
    const int64_t t = frame.rows();
    const int64_t b1 = static_cast<int64_t>(std::floor(spec.train * static_cast<double>(t)));
    const int64_t b2 = static_cast<int64_t>(std::floor((spec.train + spec.val) * static_cast<double>(t)));
    if (b1 < 1 || b2 <= b1 || t <= b2)
        throw ConfigError("frame with " + std::to_string(t) + " rows cannot be split " +
                          std::to_string(spec.train) + "/" + std::to_string(spec.val) + "/" +
                          std::to_string(spec.test));

    auto slice = [&](int64_t lo, int64_t hi) {
        SeriesFrame out;
        out.node_ids = frame.node_ids;
        out.interval_s = frame.interval_s;
        out.start_epoch_s = frame.start_epoch_s + lo * frame.interval_s;
        const int64_t n = frame.nodes();
        out.values = Tensor<double>(Shape{hi - lo, n});
        std::copy(frame.values.data.begin() + lo * n, frame.values.data.begin() + hi * n,
                  out.values.data.begin());
        return out;
    };
    return SplitFrames{slice(0, b1), slice(b1, b2), slice(b2, t)};
}

SeriesFrame select_nodes(const SeriesFrame& frame, const std::vector<int64_t>& node_ids) {
    std::map<int64_t, int64_t> col_of;
    for (int64_t c = 0; c < frame.nodes(); ++c) col_of[frame.node_ids[static_cast<size_t>(c)]] = c;

    SeriesFrame out;
    out.start_epoch_s = frame.start_epoch_s;
    out.interval_s = frame.interval_s;
    out.node_ids = node_ids;
    const int64_t t = frame.rows();
    const int64_t n = static_cast<int64_t>(node_ids.size());
    out.values = Tensor<double>(Shape{t, n});
    for (int64_t j = 0; j < n; ++j) {
        auto it = col_of.find(node_ids[static_cast<size_t>(j)]);
        if (it == col_of.end())
            throw ConfigError("node " + std::to_string(node_ids[static_cast<size_t>(j)]) +
                              " not present in frame");
        for (int64_t r = 0; r < t; ++r) out.values.at({r, j}) = frame.values.at({r, it->second});
    }
    return out;
}

Normalizer Normalizer::fit(const SeriesFrame& train) {
    const int64_t t = train.rows(), n = train.nodes();
    if (t < 1) throw ConfigError("cannot fit normalizer on an empty frame");
    Normalizer norm;
    norm.mean_.resize(static_cast<size_t>(n));
    norm.std_.resize(static_cast<size_t>(n));
    for (int64_t c = 0; c < n; ++c) {
        double sum = 0;
        for (int64_t r = 0; r < t; ++r) sum += train.values.at({r, c});
        const double mean = sum / static_cast<double>(t);
        double sq = 0;
        for (int64_t r = 0; r < t; ++r) {
            const double d = train.values.at({r, c}) - mean;
            sq += d * d;
        }
        norm.mean_[static_cast<size_t>(c)] = mean;
        norm.std_[static_cast<size_t>(c)] = std::max(std::sqrt(sq / static_cast<double>(t)), 1e-6);
    }
    return norm;
}

Windows::Windows(const SeriesFrame& frame, const Normalizer& norm, int64_t t_in, int64_t t_out)
    : t_in_(t_in), t_out_(t_out), n_(frame.nodes()) {
    if (t_in < 1 || t_out < 1) throw ConfigError("t_in and t_out must be >= 1");
    const int64_t t = frame.rows();
    count_ = t - t_in - t_out + 1;
    if (count_ < 1)
        throw ConfigError("frame with " + std::to_string(t) + " rows is too short for t_in=" +
                          std::to_string(t_in) + " t_out=" + std::to_string(t_out));
    if (static_cast<int64_t>(norm.mean().size()) != n_)
        throw ConfigError("normalizer was fitted for a different node count");

    raw_values_ = frame.values;
    norm_values_ = Tensor<float>(Shape{t, n_});
    for (int64_t r = 0; r < t; ++r)
        for (int64_t c = 0; c < n_; ++c)
            norm_values_.at({r, c}) = static_cast<float>(norm.normalize(frame.values.at({r, c}), c));

    std::vector<int64_t> offsets(static_cast<size_t>(t));
    for (int64_t r = 0; r < t; ++r) offsets[static_cast<size_t>(r)] = r;
    auto ti = time_indices(frame.start_epoch_s, frame.interval_s, offsets);
    tod_ = std::move(ti.tod);
    dow_ = std::move(ti.dow);
}

WindowBatch<float> Windows::batch(const std::vector<int64_t>& windows) const {
    const int64_t b = static_cast<int64_t>(windows.size());
    WindowBatch<float> out;
    out.x = Tensor<float>(Shape{b, t_in_, n_, 1});
    out.y = Tensor<float>(Shape{b, t_out_, n_});
    out.tod = ITensor(Shape{b, t_in_});
    out.dow = ITensor(Shape{b, t_in_});
    out.node_slots = ITensor(Shape{n_});
    for (int64_t j = 0; j < n_; ++j) out.node_slots.data[static_cast<size_t>(j)] = j;

    for (int64_t i = 0; i < b; ++i) {
        const int64_t w = windows[static_cast<size_t>(i)];
        if (w < 0 || w >= count_) throw IndexError("window " + std::to_string(w) + " out of range");
        for (int64_t t = 0; t < t_in_; ++t) {
            out.tod.data[static_cast<size_t>(i * t_in_ + t)] = tod_[static_cast<size_t>(w + t)];
            out.dow.data[static_cast<size_t>(i * t_in_ + t)] = dow_[static_cast<size_t>(w + t)];
            for (int64_t c = 0; c < n_; ++c)
                out.x.at({i, t, c, 0}) = norm_values_.at({w + t, c});
        }
        for (int64_t t = 0; t < t_out_; ++t)
            for (int64_t c = 0; c < n_; ++c)
                out.y.at({i, t, c}) = norm_values_.at({w + t_in_ + t, c});
    }
    return out;
}

Tensor<double> Windows::raw_inputs(const std::vector<int64_t>& windows) const {
    const int64_t b = static_cast<int64_t>(windows.size());
    Tensor<double> out(Shape{b, t_in_, n_});
    for (int64_t i = 0; i < b; ++i) {
        const int64_t w = windows[static_cast<size_t>(i)];
        for (int64_t t = 0; t < t_in_; ++t)
            for (int64_t c = 0; c < n_; ++c) out.at({i, t, c}) = raw_values_.at({w + t, c});
    }
    return out;
}

Tensor<double> Windows::raw_targets(const std::vector<int64_t>& windows) const {
    const int64_t b = static_cast<int64_t>(windows.size());
    Tensor<double> out(Shape{b, t_out_, n_});
    for (int64_t i = 0; i < b; ++i) {
        const int64_t w = windows[static_cast<size_t>(i)];
        for (int64_t t = 0; t < t_out_; ++t)
            for (int64_t c = 0; c < n_; ++c) out.at({i, t, c}) = raw_values_.at({w + t_in_ + t, c});
    }
    return out;
}

void Partition::validate_cover(const std::vector<int64_t>& all_nodes) const {
    std::set<int64_t> seen;
    int64_t total = 0;
    for (const auto& [id, nodes] : clients) {
        for (int64_t v : nodes) {
            if (!seen.insert(v).second)
                throw ConfigError("node " + std::to_string(v) + " assigned to multiple clients");
            ++total;
        }
    }
    std::set<int64_t> want(all_nodes.begin(), all_nodes.end());
    if (seen != want || total != static_cast<int64_t>(all_nodes.size()))
        throw ConfigError("partition does not cover the node set exactly");
}

Partition partition_nodes(const std::vector<int64_t>& node_ids, uint32_t n_clients,
                          const std::string& strategy, uint64_t seed) {
    const int64_t n = static_cast<int64_t>(node_ids.size());
    if (n_clients == 0) throw ConfigError("need at least one client");
    if (static_cast<int64_t>(n_clients) > n)
        throw ConfigError(std::to_string(n_clients) + " clients but only " + std::to_string(n) +
                          " nodes");

    std::vector<int64_t> order = node_ids;
    if (strategy == "shuffled") {
        Rng rng(mix_seed(seed, "partition"));
        rng.shuffle(order);
    } else if (strategy != "contiguous") {
        throw ConfigError("unknown partition strategy '" + strategy + "'");
    }

    Partition part;
    const int64_t base = n / n_clients;
    const int64_t extra = n % n_clients;
    int64_t pos = 0;
    for (uint32_t c = 0; c < n_clients; ++c) {
        const int64_t take = base + (static_cast<int64_t>(c) < extra ? 1 : 0);
        part.clients[c] = std::vector<int64_t>(order.begin() + pos, order.begin() + pos + take);
        pos += take;
    }
    part.validate_cover(node_ids);
    return part;
}

Partition load_partition(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw IoError("bad partition " + path + ": " + e.what());
    }
    Partition part;
    for (auto it = j.begin(); it != j.end(); ++it) {
        uint32_t id;
        try {
            id = static_cast<uint32_t>(std::stoul(it.key()));
        } catch (const std::exception&) {
            throw IoError("partition key '" + it.key() + "' is not a client id");
        }
        part.clients[id] = it.value().get<std::vector<int64_t>>();
    }
    if (part.clients.empty()) throw IoError("partition " + path + " is empty");
    return part;
}

void save_partition(const Partition& p, const std::string& path) {
    json j = json::object();
    for (const auto& [id, nodes] : p.clients) j[std::to_string(id)] = nodes;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace fedci
