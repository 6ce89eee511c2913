#pragma once

#include "atlas/nn/params.hpp"

#include <map>
#include <unordered_map>

namespace atlas::nn {

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 5.0;
};

/// Adam over a ParameterSet. Lookup tables use lazy per-column moments: only
/// columns with a gradient in the current step are updated.
class Adam {
public:
    explicit Adam(ParameterSet& params, AdamConfig config = {});

    /// Applies one update from the accumulated gradients, then clears them.
    /// Returns the pre-clip global gradient norm.
    double step();

    AdamConfig& config() { return config_; }
    long steps() const { return t_; }

private:
    struct Moments {
        Matrix m;
        Matrix v;
    };
    struct ColumnMoments {
        Vector m;
        Vector v;
        long t = 0;
    };

    ParameterSet& params_;
    AdamConfig config_;
    long t_ = 0;
    std::unordered_map<const Parameter*, Moments> dense_;
    std::unordered_map<const LookupTable*, std::map<int, ColumnMoments>> sparse_;
};

} // namespace atlas::nn
