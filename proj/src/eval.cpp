#include "fedci/eval.hpp"

#include <cmath>

#include <json.hpp>

namespace fedci {

using nlohmann::json;

namespace {

void check_same_size(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("metric inputs must be equal-length and non-empty");
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
    check_same_size(pred, target);
    double s = 0;
    for (size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
    check_same_size(pred, target);
    double s = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

double mape(const std::vector<double>& pred, const std::vector<double>& target, double floor) {
    check_same_size(pred, target);
    if (floor <= 0.0) throw ConfigError("mape floor must be > 0");
    double s = 0;
    int64_t n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (std::abs(target[i]) < floor) continue;
        s += std::abs(pred[i] - target[i]) / std::abs(target[i]);
        ++n;
    }
    if (n == 0) throw NumericError("MAPE undefined: every target is below the mask floor");
    return 100.0 * s / static_cast<double>(n);
}

MetricReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& target,
                             double floor, const std::string& scope, const std::string& task) {
    MetricReport r;
    r.mae = mae(pred, target);
    r.rmse = rmse(pred, target);
    r.count = static_cast<int64_t>(pred.size());
    r.scope = scope;
    r.task = task;
    int64_t masked_in = 0;
    for (double t : target)
        if (std::abs(t) >= floor) ++masked_in;
    r.mape_count = masked_in;
    r.mape_percent = mape(pred, target, floor);  // throws when fully masked
    return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ConfigError("no reports to aggregate");
    MetricReport out;
    out.scope = "global";
    out.task = reports.front().task;
    double mae_sum = 0, sq_sum = 0, mape_sum = 0;
    for (const auto& r : reports) {
        if (r.count <= 0) throw ConfigError("report with non-positive count");
        mae_sum += r.mae * static_cast<double>(r.count);
        sq_sum += r.rmse * r.rmse * static_cast<double>(r.count);
        mape_sum += r.mape_percent * static_cast<double>(r.mape_count);
        out.count += r.count;
        out.mape_count += r.mape_count;
    }
    out.mae = mae_sum / static_cast<double>(out.count);
    out.rmse = std::sqrt(sq_sum / static_cast<double>(out.count));
    out.mape_percent = out.mape_count > 0 ? mape_sum / static_cast<double>(out.mape_count) : 0.0;
    return out;
}

std::string reports_to_json(const std::vector<MetricReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) {
        json j;
        j["scope"] = r.scope;
        j["task"] = r.task;
        j["mae"] = r.mae;
        j["rmse"] = r.rmse;
        j["mape_percent"] = r.mape_percent;
        j["count"] = r.count;
        j["mape_count"] = r.mape_count;
        arr.push_back(j);
    }
    return arr.dump(2);
}

std::vector<MetricReport> reports_from_json(const std::string& text) {
    json arr;
    try {
        arr = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError(std::string("bad report json: ") + e.what());
    }
    std::vector<MetricReport> out;
    for (const auto& j : arr) {
        MetricReport r;
        r.scope = j.at("scope").get<std::string>();
        r.task = j.at("task").get<std::string>();
        r.mae = j.at("mae").get<double>();
        r.rmse = j.at("rmse").get<double>();
        r.mape_percent = j.at("mape_percent").get<double>();
        r.count = j.at("count").get<int64_t>();
        r.mape_count = j.at("mape_count").get<int64_t>();
        out.push_back(std::move(r));
    }
    return out;
}

MetricReport evaluate_model(ParamStore<float>& params, const ModelConfig& cfg, const Windows& wins,
                            const Normalizer& norm, const std::string& scope, const std::string& task,
                            int64_t batch_size) {
    if (wins.count() < 1) throw ConfigError("empty test split for scope " + scope);
    const int64_t n = wins.node_count();
    std::vector<double> pred, target;
    pred.reserve(static_cast<size_t>(wins.count() * cfg.t_out * n));
    target.reserve(pred.capacity());

    for (int64_t start = 0; start < wins.count(); start += batch_size) {
        const int64_t stop = std::min(start + batch_size, wins.count());
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
        auto batch = wins.batch(idx);
        auto yhat = forward<float>(nullptr, batch, params, cfg, nullptr, false);
        auto raw_y = wins.raw_targets(idx);
        const int64_t b = stop - start;
        for (int64_t i = 0; i < b; ++i)
            for (int64_t t = 0; t < cfg.t_out; ++t)
                for (int64_t c = 0; c < n; ++c) {
                    pred.push_back(norm.invert(static_cast<double>(yhat.value().at({i, t, c})), c));
                    target.push_back(raw_y.at({i, t, c}));
                }
    }
    return compute_metrics(pred, target, kMapeFloor, scope, task);
}

MetricReport evaluate_hi(const Windows& wins, int64_t t_out, const std::string& scope,
                         const std::string& task) {
    if (wins.count() < 1) throw ConfigError("empty test split for scope " + scope);
    std::vector<int64_t> idx(static_cast<size_t>(wins.count()));
    for (int64_t i = 0; i < wins.count(); ++i) idx[static_cast<size_t>(i)] = i;
    auto x = wins.raw_inputs(idx);
    auto pred = hi_predict(x, t_out);
    auto y = wins.raw_targets(idx);
    return compute_metrics(pred.data, y.data, kMapeFloor, scope, task);
}

}  // namespace fedci
