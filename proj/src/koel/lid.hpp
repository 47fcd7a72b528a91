#pragma once

// Language-identification head: mean pool the encoder states over valid
// frames, then a small MLP down to one logit per language.

#include <string>
#include <vector>

#include "koel/layers.hpp"

namespace koel {

struct LidConfig {
    int d_model = 64;
    int hidden1 = 128;
    int hidden2 = 64;
    int n_classes = 6;
};

template <class S>
class LidHead {
  public:
    LidHead() = default;
    LidHead(const LidConfig &cfg, Rng &rng);

    // enc_states (B, T', d), lens = valid frames; returns logits (B, n_classes)
    TensorT<S> forward(const TensorT<S> &enc_states, const std::vector<int> &lens) const;

    void collect(const std::string &prefix, ParamMap<S> &out) const;
    const LidConfig &config() const { return cfg_; }

  private:
    LidConfig cfg_;
    Linear<S> lin1_, lin2_, lin3_;
};

}  // namespace koel
