#pragma once

#include <functional>
#include <string>

#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/nn/tape.hpp"

namespace testsupport {

inline double rel_err(double a, double b) {
    const double scale = std::max({1e-6, std::abs(a), std::abs(b)});
    return std::abs(a - b) / scale;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;
};

// Analytic gradients (reverse pass) vs central finite differences with step h,
// over every element of every trainable entry in the store. The builder must
// construct the same scalar graph each call; it is invoked 1 + 2*n times.
inline GradCheckResult check_gradients(
    dmldroid::nn::ParamStore& store,
    const std::function<dmldroid::nn::Tape::Value(dmldroid::nn::Tape&)>& build,
    double h = 1e-5) {
    using dmldroid::nn::Tape;

    store.zero_grads();
    {
        Tape t(&store);
        Tape::Value loss = build(t);
        t.backward(loss);
    }

    GradCheckResult res;
    for (const std::string& name : store.names()) {
        auto& e = store.entry(name);
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double orig = e.value.data()[i];

            e.value.data()[i] = orig + h;
            double fp;
            {
                Tape t(&store);
                fp = t.scalar(build(t));
            }
            e.value.data()[i] = orig - h;
            double fm;
            {
                Tape t(&store);
                fm = t.scalar(build(t));
            }
            e.value.data()[i] = orig;

            const double fd = (fp - fm) / (2.0 * h);
            const double an = e.grad.data()[i];
            const double r = rel_err(an, fd);
            if (r > res.max_rel_err) {
                res.max_rel_err = r;
                res.worst = name + "[" + std::to_string(i) + "] analytic=" +
                            std::to_string(an) + " fd=" + std::to_string(fd);
            }
        }
    }
    return res;
}

}  // namespace testsupport
