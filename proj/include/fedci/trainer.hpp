#pragma once

#include <numeric>

#include "fedci/data.hpp"
#include "fedci/model.hpp"

namespace fedci {

struct TrainConfig {
    int64_t batch = 64;
    double lr = 1e-3;
    uint64_t seed = 1;
    uint32_t client_id = 0;
};

// Epoch-by-epoch Adam training over one client's windows. The same object
// drives both a federated client (R_l epochs between aggregations) and the
// centralized reference run; the shuffle/dropout stream is continuous across
// epochs so the two are comparable step for step.
class LocalTrainer {
public:
    LocalTrainer(ModelConfig cfg, TrainConfig tc, Windows train_windows, ParamStore<float> params)
        : cfg_(std::move(cfg)),
          tc_(tc),
          wins_(std::move(train_windows)),
          params_(std::move(params)),
          rng_(mix_seed(tc.seed, "client", tc.client_id)) {
        tune_allocator_for_tensors();
        adam_.lr = static_cast<float>(tc_.lr);
        adam_.init(params_);
    }

    ParamStore<float>& params() { return params_; }
    const ModelConfig& config() const { return cfg_; }
    int64_t epochs_run() const { return epochs_; }

    // One full pass over the training windows; returns the mean batch MAE.
    double run_epoch() {
        std::vector<int64_t> order(static_cast<size_t>(wins_.count()));
        std::iota(order.begin(), order.end(), 0);
        rng_.shuffle(order);

        double loss_sum = 0;
        int64_t sample_count = 0;
        for (int64_t start = 0; start < wins_.count(); start += tc_.batch) {
            const int64_t stop = std::min(start + tc_.batch, wins_.count());
            std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
            auto batch = wins_.batch(idx);

            params_.zero_grad();
            Tape<float> tape;
            auto yhat = forward(&tape, batch, params_, cfg_, &rng_, true);
            auto loss = ops::mae_loss(&tape, yhat, batch.y);
            tape.backward(loss);
            adam_step(params_, adam_);

            loss_sum += static_cast<double>(loss.value().data[0]) * static_cast<double>(stop - start);
            sample_count += stop - start;
        }
        ++epochs_;
        return loss_sum / static_cast<double>(sample_count);
    }

private:
    ModelConfig cfg_;
    TrainConfig tc_;
    Windows wins_;
    ParamStore<float> params_;
    AdamState<float> adam_;
    Rng rng_;
    int64_t epochs_ = 0;
};

}  // namespace fedci
