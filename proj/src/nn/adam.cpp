#include "atlas/nn/adam.hpp"

#include <cmath>

namespace atlas::nn {

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(params), config_(config) {}

double Adam::step() {
    double sq = 0.0;
    for (const auto& p : params_.parameters()) {
        if (!p.frozen) {
            sq += p.grad().squaredNorm();
        }
    }
    for (const auto& t : params_.tables()) {
        if (!t.frozen) {
            for (const auto& [_, g] : t.grad()) {
                sq += g.squaredNorm();
            }
        }
    }
    const double norm = std::sqrt(sq);
    double factor = 1.0;
    if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
        factor = config_.clip_norm / norm;
    }

    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    for (auto& p : params_.parameters()) {
        if (p.frozen) {
            continue;
        }
        auto& mom = dense_[&p];
        if (mom.m.size() == 0) {
            mom.m = Matrix::Zero(p.value().rows(), p.value().cols());
            mom.v = Matrix::Zero(p.value().rows(), p.value().cols());
        }
        Matrix g = p.grad() * factor;
        mom.m = b1 * mom.m + (1.0 - b1) * g;
        mom.v = b2 * mom.v + (1.0 - b2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        p.value().array() -= config_.lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + config_.eps);
    }
    for (auto& table : params_.tables()) {
        if (table.frozen) {
            continue;
        }
        auto& cols = sparse_[&table];
        for (const auto& [idx, raw] : table.grad()) {
            auto& mom = cols[idx];
            if (mom.m.size() == 0) {
                mom.m = Vector::Zero(table.dim());
                mom.v = Vector::Zero(table.dim());
            }
            ++mom.t;
            Vector g = raw * factor;
            mom.m = b1 * mom.m + (1.0 - b1) * g;
            mom.v = b2 * mom.v + (1.0 - b2) * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(mom.t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(mom.t));
            table.value().col(idx).array() -=
                config_.lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + config_.eps);
        }
    }
    params_.zero_grad();
    return norm;
}

} // namespace atlas::nn
