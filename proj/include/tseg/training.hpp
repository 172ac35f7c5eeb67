#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tseg/dataset.hpp"
#include "tseg/network.hpp"
#include "tseg/rng.hpp"

namespace tseg {

struct TrainConfig {
    int64_t batch_slices = 128;
    int64_t epochs = 75;
    double lr0 = 0.005;
    int64_t lr_halving_period = 15;
    double tversky_alpha = 0.3; // false-positive weight
    double tversky_beta = 0.7;  // false-negative weight
    double loss_eps = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 1;
    bool augment = true;

    void validate() const; // throws ConfigError
};

double lr_at(int64_t epoch, const TrainConfig& cfg);

// Adam moments per parameter name; step counter shared across parameters.
struct AdamState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> slots;
    int64_t t = 0;
};

// One optimizer step over all trainable parameters, consuming accumulated
// gradients. Non-trainable parameters (and their moments) are untouched.
void adam_step(ModelParams& params, AdamState& st, const TrainConfig& cfg,
               double lr);

// In-place per-sample augmentation: horizontal flip, vertical flip and 180
// degree rotation, each applied independently with probability 1/2; image
// channels and all three masks get the identical transform. Draw order is
// frozen (per sample: hflip, vflip, rot180).
void augment_batch(Tensor<float>& x, Tensor<float>& wt, Tensor<float>& et,
                   Tensor<float>& net, Rng& rng);

struct TrainResult {
    ModelParams params;
    std::vector<double> epoch_loss; // mean summed-branch loss per epoch
};

// Full training loop: per-epoch reshuffle, batches of cfg.batch_slices (the
// final partial batch is kept), loss = dice(WT) + tversky(ET) + tversky(NET)
// computed jointly over the batch, one Adam step per batch. Each branch runs
// on its own tape over a shared feature extractor; gradients accumulate so
// the step sees the summed loss. Throws TrainingError on non-finite loss.
TrainResult train(const SliceDataset& data, const TrainConfig& cfg,
                  const NetworkConfig& netcfg,
                  const std::function<void(int64_t, double)>& on_epoch = {});

} // namespace tseg
