#include "atlas/nn/layers.hpp"

#include <cmath>

namespace atlas::nn {

Eigen::Index argmax_lowest(const Matrix& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.rows(); ++i) {
        if (v(i, 0) > v(best, 0)) {
            best = i;
        }
    }
    return best;
}

namespace {
double glorot(Eigen::Index in, Eigen::Index out) { return std::sqrt(6.0 / static_cast<double>(in + out)); }
} // namespace

Linear::Linear(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, bool bias,
               std::mt19937_64& rng) {
    weight_ = &ps.add(name + ".W", out, in, glorot(in, out), rng);
    if (bias) {
        bias_ = &ps.add(name + ".b", out, 1, 0.0, rng);
    }
}

Var Linear::operator()(Tape& tape, const Var& x) const {
    Var y = matmul(tape.parameter(*weight_), x);
    if (bias_ != nullptr) {
        y = add(y, tape.parameter(*bias_));
    }
    return y;
}

GruCell::GruCell(ParameterSet& ps, const std::string& name, Eigen::Index input, Eigen::Index hidden,
                 std::mt19937_64& rng)
    : input_(input), hidden_(hidden) {
    double s = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_ = &ps.add(name + ".W", 3 * hidden, input, s, rng);
    u_ = &ps.add(name + ".U", 3 * hidden, hidden, s, rng);
    bw_ = &ps.add(name + ".bw", 3 * hidden, 1, 0.0, rng);
    bu_ = &ps.add(name + ".bu", 3 * hidden, 1, 0.0, rng);
}

Var GruCell::step(Tape& tape, const Var& x, const Var& h) const {
    const Eigen::Index H = hidden_;
    Var wx = add(matmul(tape.parameter(*w_), x), tape.parameter(*bw_));
    Var uh = add(matmul(tape.parameter(*u_), h), tape.parameter(*bu_));
    Var z = sigmoid(add(slice_rows(wx, 0, H), slice_rows(uh, 0, H)));
    Var r = sigmoid(add(slice_rows(wx, H, H), slice_rows(uh, H, H)));
    Var n = tanh(add(slice_rows(wx, 2 * H, H), cmul(r, slice_rows(uh, 2 * H, H))));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    return add(n, cmul(z, sub(h, n)));
}

BiGruEncoder::BiGruEncoder(ParameterSet& ps, const std::string& name, Eigen::Index input, Eigen::Index hidden,
                           std::mt19937_64& rng)
    : fwd_(ps, name + ".fwd", input, hidden, rng), bwd_(ps, name + ".bwd", input, hidden, rng) {}

Encoding BiGruEncoder::encode(Tape& tape, std::span<const Var> inputs) const {
    Encoding enc;
    const size_t n = inputs.size();
    if (n == 0) {
        enc.final = tape.constant(Matrix::Zero(output_dim(), 1));
        enc.mean = enc.final;
        return enc;
    }
    std::vector<Var> fwd(n);
    std::vector<Var> bwd(n);
    Var h = fwd_.zero_state(tape);
    for (size_t i = 0; i < n; ++i) {
        h = fwd_.step(tape, inputs[i], h);
        fwd[i] = h;
    }
    h = bwd_.zero_state(tape);
    for (size_t i = n; i-- > 0;) {
        h = bwd_.step(tape, inputs[i], h);
        bwd[i] = h;
    }
    enc.states.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        enc.states.push_back(concat(fwd[i], bwd[i]));
    }
    enc.final = concat(fwd[n - 1], bwd[0]);
    enc.mean = mean(enc.states);
    return enc;
}

} // namespace atlas::nn
