#pragma once

// Binary checkpoint container: model config, named parameter tensors,
// batch-norm running statistics, CMVN, and (optionally) the trainer state
// needed to resume — Adam moments, scheduler bookkeeping, and the data-order
// rng.  Values are stored as doubles, so a float-model round trip is exact.

#include <string>
#include <vector>

#include "koel/features.hpp"
#include "koel/model.hpp"

namespace koel {

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// optimizer + scheduler bookkeeping carried across a resume
struct TrainerState {
    int64_t step = 0;        // global optimizer steps taken
    int epoch = 0;           // completed epochs
    double lr = 0.0;         // current learning rate
    double best_dev = 0.0;   // best validation loss so far
    int bad_epochs = 0;      // epochs since the last improvement
    int64_t adam_t = 0;      // Adam time step (bias correction)
    std::vector<std::vector<double>> adam_m;  // parallel to the param list
    std::vector<std::vector<double>> adam_v;
    std::string rng_state;   // training rng (batch order, dropout, augment)
};

struct Checkpoint {
    ModelConfig config;
    std::vector<NamedTensor> params;
    std::vector<BatchNormState> bn_states;
    Cmvn cmvn;                    // empty vectors when not computed
    bool has_trainer = false;
    TrainerState trainer;
};

// capture the model's current parameters and running statistics
template <class S>
Checkpoint snapshot(Model<S> &model, const Cmvn &cmvn, const TrainerState *trainer);

// copy a checkpoint's parameters/statistics into a model built from the same
// config; errors on any name/shape mismatch
template <class S>
void load_into(Model<S> &model, const Checkpoint &ck);

void save_checkpoint(const std::string &path, const Checkpoint &ck);
Checkpoint load_checkpoint(const std::string &path);

}  // namespace koel
