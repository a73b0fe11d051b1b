#pragma once

#include <string>
#include <vector>

#include "fedci/data.hpp"
#include "fedci/model.hpp"

namespace fedci {

struct MetricReport {
    double mae = 0.0;
    double rmse = 0.0;
    double mape_percent = 0.0;
    int64_t count = 0;       // prediction elements
    int64_t mape_count = 0;  // elements that survived the |y| >= floor mask
    std::string scope;       // client id or "global"
    std::string task;
};

inline constexpr double kMapeFloor = 1e-3;

double mae(const std::vector<double>& pred, const std::vector<double>& target);
double rmse(const std::vector<double>& pred, const std::vector<double>& target);
// Masked mean over elements with |target| >= floor; throws NumericError when
// everything is masked.
double mape(const std::vector<double>& pred, const std::vector<double>& target, double floor);

MetricReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& target,
                             double floor, const std::string& scope, const std::string& task);

// Micro-average: count-weighted MAE/MAPE, RMSE through the weighted mean of
// squared errors. Equals metrics over the pooled predictions.
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

std::string reports_to_json(const std::vector<MetricReport>& reports);
std::vector<MetricReport> reports_from_json(const std::string& text);

// Runs the model in eval mode over every test window, inverts predictions to
// original units, and scores them.
MetricReport evaluate_model(ParamStore<float>& params, const ModelConfig& cfg, const Windows& wins,
                            const Normalizer& norm, const std::string& scope, const std::string& task,
                            int64_t batch_size = 256);

// Same protocol for the Historical Inertia baseline (operates on raw units).
MetricReport evaluate_hi(const Windows& wins, int64_t t_out, const std::string& scope,
                         const std::string& task);

}  // namespace fedci
