#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "skiplab/autograd.hpp"

namespace skiplab {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double warmup_ratio = 0.0;     // linear warmup over this fraction of total steps
    bool cosine_decay = false;
    int total_steps = 0;           // needed when warmup or cosine is on
};

// Decoupled-weight-decay Adam over an explicit parameter list.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    double current_lr() const {
        double lr = cfg_.lr;
        if (cfg_.total_steps > 0) {
            int warm = static_cast<int>(cfg_.warmup_ratio * cfg_.total_steps);
            if (warm > 0 && t_ < warm) {
                lr *= static_cast<double>(t_ + 1) / warm;
            } else if (cfg_.cosine_decay) {
                double prog = cfg_.total_steps > warm
                                  ? static_cast<double>(t_ - warm) / (cfg_.total_steps - warm)
                                  : 0.0;
                lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(prog, 1.0)));
            }
        }
        return lr;
    }

    void step(const std::vector<Param*>& params) {
        double lr = current_lr();
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (Param* p : params) {
            auto& st = state_[p];
            if (st.m.numel() == 0) {
                st.m = Tensor::zeros(p->value.shape);
                st.v = Tensor::zeros(p->value.shape);
            }
            for (size_t i = 0; i < p->value.numel(); ++i) {
                double g = p->grad.data[i];
                st.m.data[i] = cfg_.beta1 * st.m.data[i] + (1.0 - cfg_.beta1) * g;
                st.v.data[i] = cfg_.beta2 * st.v.data[i] + (1.0 - cfg_.beta2) * g * g;
                double mhat = st.m.data[i] / bc1;
                double vhat = st.v.data[i] / bc2;
                p->value.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->value.data[i]);
            }
        }
    }

private:
    struct Slot {
        Tensor m, v;
    };
    AdamWConfig cfg_;
    int t_ = 0;
    std::map<Param*, Slot> state_;
};

} // namespace skiplab
