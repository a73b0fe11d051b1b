#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedci/model.hpp"
#include "fedci/tensor.hpp"

namespace fedci {

// Raw multivariate series: one column per node, one row per sampling step.
struct SeriesFrame {
    Tensor<double> values;          // T x N
    std::vector<int64_t> node_ids;  // N global ids, column order
    int64_t start_epoch_s = 0;
    int64_t interval_s = 300;

    int64_t rows() const { return values.dims.ndim ? values.dims[0] : 0; }
    int64_t nodes() const { return values.dims.ndim ? values.dims[1] : 0; }
};

// series.csv + series.meta.json
SeriesFrame load_csv(const std::string& csv_path, const std::string& meta_path);
void save_csv(const SeriesFrame& frame, const std::string& csv_path, const std::string& meta_path);

// Daily sinusoid + weekday level shift + Gaussian noise, all node constants
// drawn from the seed. noise_frac scales sigma relative to each node's
// amplitude; 0 gives an exactly periodic series.
SeriesFrame gen_synthetic(int64_t nodes, int64_t days, int64_t interval_s, uint64_t seed,
                          double noise_frac = 0.1);

struct SplitSpec {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
    void validate() const;
};

struct SplitFrames {
    SeriesFrame train, val, test;
};

// Contiguous, ordered, non-overlapping time split; boundaries at
// floor(fraction * T).
SplitFrames split(const SeriesFrame& frame, const SplitSpec& spec);

// Columns for the given global node ids, in the given order.
SeriesFrame select_nodes(const SeriesFrame& frame, const std::vector<int64_t>& node_ids);

// Per-node z-score fitted on training rows only. std is floored at 1e-6.
class Normalizer {
public:
    static Normalizer fit(const SeriesFrame& train);
    double normalize(double v, int64_t col) const { return (v - mean_[static_cast<size_t>(col)]) / std_[static_cast<size_t>(col)]; }
    double invert(double v, int64_t col) const { return v * std_[static_cast<size_t>(col)] + mean_[static_cast<size_t>(col)]; }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return std_; }

private:
    std::vector<double> mean_, std_;
};

// Sliding stride-1 windows over a normalized frame. Window w covers input
// rows [w, w+t_in) and target rows [w+t_in, w+t_in+t_out).
class Windows {
public:
    Windows(const SeriesFrame& frame, const Normalizer& norm, int64_t t_in, int64_t t_out);

    int64_t count() const { return count_; }
    int64_t node_count() const { return n_; }
    int64_t t_in() const { return t_in_; }
    int64_t t_out() const { return t_out_; }

    WindowBatch<float> batch(const std::vector<int64_t>& windows) const;

    // Original-unit views for baselines and metric computation.
    Tensor<double> raw_inputs(const std::vector<int64_t>& windows) const;   // B x T_in x N
    Tensor<double> raw_targets(const std::vector<int64_t>& windows) const;  // B x T_out x N

private:
    Tensor<float> norm_values_;  // T x N
    Tensor<double> raw_values_;  // T x N
    std::vector<int64_t> tod_, dow_;
    int64_t t_in_ = 0, t_out_ = 0, n_ = 0, count_ = 0;
};

// client id -> ordered global node ids; disjoint, full coverage
struct Partition {
    std::map<uint32_t, std::vector<int64_t>> clients;
    void validate_cover(const std::vector<int64_t>& all_nodes) const;
};

Partition partition_nodes(const std::vector<int64_t>& node_ids, uint32_t n_clients,
                          const std::string& strategy, uint64_t seed);

Partition load_partition(const std::string& path);
void save_partition(const Partition& p, const std::string& path);

}  // namespace fedci
