#include "koel/losses.hpp"

#include <cmath>
#include <limits>

#include "koel/common.hpp"

namespace koel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// blank-extended target: blank, l1, blank, l2, ..., blank
std::vector<int> extend_target(const std::vector<int> &target, int v) {
    std::vector<int> ext(2 * target.size() + 1, 0);
    for (size_t i = 0; i < target.size(); ++i) {
        check(target[i] > 0 && target[i] < v, "ctc: target label ", target[i],
              " outside [1, ", v, ")");
        ext[2 * i + 1] = target[i];
    }
    return ext;
}

// alpha[t][s], both emissions included; returns log P(target)
double ctc_alpha(const double *lp, int t, int v, const std::vector<int> &ext,
                 std::vector<double> *alpha_out) {
    const int s = static_cast<int>(ext.size());
    std::vector<double> &alpha = *alpha_out;
    alpha.assign(static_cast<size_t>(t) * s, kNegInf);
    alpha[0] = lp[0 * v + ext[0]];
    if (s > 1) alpha[1] = lp[0 * v + ext[1]];
    for (int ti = 1; ti < t; ++ti)
        for (int si = 0; si < s; ++si) {
            double acc = alpha[static_cast<size_t>(ti - 1) * s + si];
            if (si >= 1) acc = lse2(acc, alpha[static_cast<size_t>(ti - 1) * s + si - 1]);
            if (si >= 2 && ext[static_cast<size_t>(si)] != 0 &&
                ext[static_cast<size_t>(si)] != ext[static_cast<size_t>(si - 2)])
                acc = lse2(acc, alpha[static_cast<size_t>(ti - 1) * s + si - 2]);
            alpha[static_cast<size_t>(ti) * s + si] =
                acc + lp[static_cast<size_t>(ti) * v + ext[static_cast<size_t>(si)]];
        }
    const double last = alpha[static_cast<size_t>(t - 1) * s + s - 1];
    const double prev = s > 1 ? alpha[static_cast<size_t>(t - 1) * s + s - 2] : kNegInf;
    return lse2(last, prev);
}

} // namespace

int ctc_min_frames(const std::vector<int> &target) {
    int frames = static_cast<int>(target.size());
    for (size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++frames;
    return frames;
}

double ctc_forward_logloss(const double *logprobs, int t, int v, const std::vector<int> &target) {
    check(t >= 1 && v >= 2, "ctc: need t >= 1 and v >= 2, got t=", t, " v=", v);
    check(t >= ctc_min_frames(target), "ctc: target of ", target.size(),
          " labels needs at least ", ctc_min_frames(target), " frames, got ", t);
    const auto ext = extend_target(target, v);
    std::vector<double> alpha;
    const double logp = ctc_alpha(logprobs, t, v, ext, &alpha);
    check(logp != kNegInf, "ctc: zero-probability target");
    return -logp;
}

void ctc_backward(const double *lp, int t, int v, const std::vector<int> &target,
                  double grad_scale, double *grad_out) {
    const auto ext = extend_target(target, v);
    const int s = static_cast<int>(ext.size());
    std::vector<double> alpha;
    const double logz = ctc_alpha(lp, t, v, ext, &alpha);

    std::vector<double> beta(static_cast<size_t>(t) * s, kNegInf);
    beta[static_cast<size_t>(t - 1) * s + s - 1] = lp[static_cast<size_t>(t - 1) * v + ext[static_cast<size_t>(s - 1)]];
    if (s > 1)
        beta[static_cast<size_t>(t - 1) * s + s - 2] =
            lp[static_cast<size_t>(t - 1) * v + ext[static_cast<size_t>(s - 2)]];
    for (int ti = t - 2; ti >= 0; --ti)
        for (int si = s - 1; si >= 0; --si) {
            double acc = beta[static_cast<size_t>(ti + 1) * s + si];
            if (si + 1 < s) acc = lse2(acc, beta[static_cast<size_t>(ti + 1) * s + si + 1]);
            if (si + 2 < s && ext[static_cast<size_t>(si)] != 0 &&
                ext[static_cast<size_t>(si)] != ext[static_cast<size_t>(si + 2)])
                acc = lse2(acc, beta[static_cast<size_t>(ti + 1) * s + si + 2]);
            beta[static_cast<size_t>(ti) * s + si] =
                acc + lp[static_cast<size_t>(ti) * v + ext[static_cast<size_t>(si)]];
        }

    // d(-log P)/d lp[t][k] = -sum_{s: ext[s]=k} exp(alpha + beta - lp - log P);
    // both lattices include the frame emission, so subtract it once
    for (int ti = 0; ti < t; ++ti)
        for (int si = 0; si < s; ++si) {
            const double a = alpha[static_cast<size_t>(ti) * s + si];
            const double b = beta[static_cast<size_t>(ti) * s + si];
            if (a == kNegInf || b == kNegInf) continue;
            const int k = ext[static_cast<size_t>(si)];
            const double mass = std::exp(a + b - lp[static_cast<size_t>(ti) * v + k] - logz);
            grad_out[static_cast<size_t>(ti) * v + k] -= grad_scale * mass;
        }
}

template <class S>
TensorT<S> ctc_loss(const TensorT<S> &logprobs, const std::vector<std::vector<int>> &targets,
                    const std::vector<int> &input_lens) {
    check(logprobs.ndim() == 3, "ctc_loss: expected (B, T, V) logprobs, got ",
          shape_str(logprobs.shape()));
    const int b = logprobs.dim(0), t = logprobs.dim(1), v = logprobs.dim(2);
    check(static_cast<int>(targets.size()) == b && static_cast<int>(input_lens.size()) == b,
          "ctc_loss: batch size mismatch");
    std::vector<std::vector<double>> lps(static_cast<size_t>(b));
    double loss = 0.0;
    for (int bi = 0; bi < b; ++bi) {
        const int len = input_lens[static_cast<size_t>(bi)];
        check(len >= 1 && len <= t, "ctc_loss: input length ", len, " outside [1, ", t, "]");
        auto &lp = lps[static_cast<size_t>(bi)];
        lp.resize(static_cast<size_t>(len) * v);
        for (int ti = 0; ti < len; ++ti)
            for (int k = 0; k < v; ++k)
                lp[static_cast<size_t>(ti) * v + k] = static_cast<double>(
                    logprobs.data()[(static_cast<size_t>(bi) * t + ti) * v + k]);
        loss += ctc_forward_logloss(lp.data(), len, v, targets[static_cast<size_t>(bi)]);
    }
    loss /= b;

    auto parent = logprobs.node();
    auto lps_c = std::make_shared<std::vector<std::vector<double>>>(std::move(lps));
    const std::vector<std::vector<int>> targets_c = targets;
    const std::vector<int> lens_c = input_lens;
    return make_node<S>(
        "ctc_loss", {1}, {static_cast<S>(loss)}, {logprobs},
        [parent, lps_c, targets_c, lens_c, b, t, v](TensorNodeT<S> &self) {
            parent->ensure_grad();
            const double g = static_cast<double>(self.grad[0]) / b;
            std::vector<double> grad(static_cast<size_t>(t) * v);
            for (int bi = 0; bi < b; ++bi) {
                const int len = lens_c[static_cast<size_t>(bi)];
                std::fill(grad.begin(), grad.end(), 0.0);
                ctc_backward((*lps_c)[static_cast<size_t>(bi)].data(), len, v,
                             targets_c[static_cast<size_t>(bi)], g, grad.data());
                for (int ti = 0; ti < len; ++ti)
                    for (int k = 0; k < v; ++k)
                        parent->grad[(static_cast<size_t>(bi) * t + ti) * v + k] +=
                            static_cast<S>(grad[static_cast<size_t>(ti) * v + k]);
            }
        },
        loss);
}

template <class S>
TensorT<S> ce_label_loss(const TensorT<S> &logits, const std::vector<std::vector<int>> &targets) {
    check(logits.ndim() == 3, "ce_label_loss: expected (B, U, V) logits, got ",
          shape_str(logits.shape()));
    const int b = logits.dim(0), u = logits.dim(1), v = logits.dim(2);
    check(static_cast<int>(targets.size()) == b, "ce_label_loss: batch size mismatch");
    std::vector<int> flat(static_cast<size_t>(b) * u, -1);
    for (int bi = 0; bi < b; ++bi) {
        check(static_cast<int>(targets[static_cast<size_t>(bi)].size()) <= u,
              "ce_label_loss: target longer than logit rows");
        for (size_t i = 0; i < targets[static_cast<size_t>(bi)].size(); ++i)
            flat[static_cast<size_t>(bi) * u + i] = targets[static_cast<size_t>(bi)][i];
    }
    return cross_entropy(reshape(logits, {b * u, v}), flat);
}

void LossWeights::validate() const {
    check(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 && pi >= 0.0,
          "loss weights must be non-negative, got alpha=", alpha, " beta=", beta,
          " gamma=", gamma, " pi=", pi);
}

double combine_weighted_loss(double l_ctc, double l_pr, double l_gr, double l_lid,
                             const LossWeights &w) {
    return (w.alpha * l_ctc + w.beta * l_pr) + (w.gamma * l_gr + w.pi * l_lid);
}

template <class S>
TensorT<S> multitask_total(const TensorT<S> &l_ctc, const TensorT<S> &l_pr, const TensorT<S> &l_gr,
                           const TensorT<S> &l_lid, const LossWeights &w, LossBreakdown *out) {
    w.validate();
    check(l_ctc.numel() == 1 && l_pr.numel() == 1 && l_gr.numel() == 1 && l_lid.numel() == 1,
          "multitask_total: component losses must be scalars");
    auto total = add(add(scale(l_ctc, w.alpha), scale(l_pr, w.beta)),
                     add(scale(l_gr, w.gamma), scale(l_lid, w.pi)));
    LossBreakdown bd;
    bd.l_ctc = l_ctc.scalar();
    bd.l_pr = l_pr.scalar();
    bd.l_gr = l_gr.scalar();
    bd.l_lid = l_lid.scalar();
    bd.total = combine_weighted_loss(bd.l_ctc, bd.l_pr, bd.l_gr, bd.l_lid, w);
    total.node()->scalar_cache = bd.total;
    if (out) *out = bd;
    return total;
}

#define KOEL_INSTANTIATE_LOSSES(S)                                                                \
    template TensorT<S> ctc_loss<S>(const TensorT<S> &, const std::vector<std::vector<int>> &,    \
                                    const std::vector<int> &);                                    \
    template TensorT<S> ce_label_loss<S>(const TensorT<S> &,                                      \
                                         const std::vector<std::vector<int>> &);                  \
    template TensorT<S> multitask_total<S>(const TensorT<S> &, const TensorT<S> &,                \
                                           const TensorT<S> &, const TensorT<S> &,                \
                                           const LossWeights &, LossBreakdown *);

KOEL_INSTANTIATE_LOSSES(float)
KOEL_INSTANTIATE_LOSSES(double)
#undef KOEL_INSTANTIATE_LOSSES

} // namespace koel
