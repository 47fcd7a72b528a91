#include "koel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace koel {

template <class S>
GradCheckResult grad_check(const std::function<TensorT<S>()> &loss_fn,
                           const std::vector<std::pair<std::string, TensorT<S>>> &params,
                           double eps, int max_coords, uint64_t seed) {
    check(!params.empty(), "grad_check: no parameters");
    for (auto &[name, p] : params)
        check(p.requires_grad(), "grad_check: parameter '", name, "' does not require grad");

    for (auto &[name, p] : params) const_cast<TensorT<S> &>(p).zero_grad();
    auto loss = loss_fn();
    loss.backward();

    // snapshot analytic grads before the probing passes disturb anything
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto &[name, p] : params) analytic.push_back(p.grad());

    GradCheckResult res;
    Rng rng(seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto &name = params[pi].first;
        auto param = params[pi].second;
        auto &data = param.leaf_data();
        const int64_t n = static_cast<int64_t>(data.size());

        std::vector<int64_t> coords;
        if (n <= max_coords) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            std::unordered_set<int64_t> seen;
            while (static_cast<int>(coords.size()) < max_coords) {
                const int64_t c = rng.uniform_int(n);
                if (seen.insert(c).second) coords.push_back(c);
            }
            std::sort(coords.begin(), coords.end());
        }

        for (const int64_t c : coords) {
            const S saved = data[static_cast<size_t>(c)];
            data[static_cast<size_t>(c)] = static_cast<S>(static_cast<double>(saved) + eps);
            const double up = loss_fn().scalar();
            data[static_cast<size_t>(c)] = static_cast<S>(static_cast<double>(saved) - eps);
            const double down = loss_fn().scalar();
            data[static_cast<size_t>(c)] = saved;

            const double numeric = (up - down) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][static_cast<size_t>(c)]);
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = name + "[" + std::to_string(c) + "]";
                res.analytic = a;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

template GradCheckResult grad_check<float>(const std::function<TensorT<float>()> &,
                                           const std::vector<std::pair<std::string, TensorT<float>>> &,
                                           double, int, uint64_t);
template GradCheckResult grad_check<double>(const std::function<TensorT<double>()> &,
                                            const std::vector<std::pair<std::string, TensorT<double>>> &,
                                            double, int, uint64_t);

} // namespace koel
