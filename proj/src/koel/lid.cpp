#include "koel/lid.hpp"

namespace koel {

template <class S>
LidHead<S>::LidHead(const LidConfig &cfg, Rng &rng)
    : cfg_(cfg), lin1_(cfg.d_model, cfg.hidden1, rng), lin2_(cfg.hidden1, cfg.hidden2, rng),
      lin3_(cfg.hidden2, cfg.n_classes, rng) {
    check(cfg.n_classes >= 2, "lid: need at least two classes");
}

template <class S>
TensorT<S> LidHead<S>::forward(const TensorT<S> &enc_states, const std::vector<int> &lens) const {
    check(enc_states.ndim() == 3 && enc_states.dim(2) == cfg_.d_model,
          "lid: expected (B, T, ", cfg_.d_model, ") encoder states");
    TensorT<S> h = masked_mean_time(enc_states, lens);  // (B, d)
    h = relu(lin1_.forward(h));
    h = relu(lin2_.forward(h));
    return lin3_.forward(h);
}

template <class S>
void LidHead<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    lin1_.collect(prefix + ".lin1", out);
    lin2_.collect(prefix + ".lin2", out);
    lin3_.collect(prefix + ".lin3", out);
}

template class LidHead<float>;
template class LidHead<double>;

}  // namespace koel
