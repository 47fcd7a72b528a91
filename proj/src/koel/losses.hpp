#pragma once

// CTC loss (log-space forward-backward), attention CE, LID CE, and the
// weighted multi-task combination.

#include <vector>

#include "koel/tensor.hpp"

namespace koel {

// -log P(target | logprobs) by the forward algorithm over the blank-extended
// target, all in double. logprobs: (t, v) row-major, log-softmax-normalized,
// blank id 0; target has no blanks. Infeasible target (t too short) -> error.
double ctc_forward_logloss(const double *logprobs, int t, int v, const std::vector<int> &target);

// gradient of the above w.r.t. logprobs, accumulated into grad_out (t, v)
void ctc_backward(const double *logprobs, int t, int v, const std::vector<int> &target,
                  double grad_scale, double *grad_out);

// smallest number of frames that can emit `target` (repeats need a blank gap)
int ctc_min_frames(const std::vector<int> &target);

// batch CTC loss: mean over utterances of the per-utterance lattice loss.
// logprobs (B, T, V) padded over time, input_lens gives valid frames per row.
template <class S>
TensorT<S> ctc_loss(const TensorT<S> &logprobs, const std::vector<std::vector<int>> &targets,
                    const std::vector<int> &input_lens);

// token-mean CE over non-pad positions; logits (B, U, V), pad target = -1
template <class S>
TensorT<S> ce_label_loss(const TensorT<S> &logits, const std::vector<std::vector<int>> &targets);

struct LossWeights {
    double alpha = 0.3;  // CTC
    double beta = 0.5;   // phoneme decoder CE
    double gamma = 0.5;  // grapheme decoder CE
    double pi = 10.0;    // LID CE
    void validate() const;
};

struct LossBreakdown {
    double l_ctc = 0.0;
    double l_pr = 0.0;
    double l_gr = 0.0;
    double l_lid = 0.0;
    double total = 0.0;
};

// the single definition of the weighted total; trainer logging and the
// acceptance check both call this exact function so the identity is bitwise
double combine_weighted_loss(double l_ctc, double l_pr, double l_gr, double l_lid,
                             const LossWeights &w);

// builds the differentiable total and fills `out` from the scalar caches,
// with out->total computed by combine_weighted_loss
template <class S>
TensorT<S> multitask_total(const TensorT<S> &l_ctc, const TensorT<S> &l_pr, const TensorT<S> &l_gr,
                           const TensorT<S> &l_lid, const LossWeights &w, LossBreakdown *out);

} // namespace koel
