#include "atlas/nn/params.hpp"

#include "atlas/util/hash.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace atlas::nn {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'L', 'S', 'P', 'R', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

Matrix uniform(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
    Matrix m(rows, cols);
    if (scale == 0.0) {
        m.setZero();
        return m;
    }
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw std::runtime_error("truncated parameter file");
    }
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::int64_t>(out, m.rows());
    write_pod<std::int64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void read_tensor(std::istream& in, const std::string& expected, Matrix& m) {
    auto len = read_pod<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (name != expected) {
        throw std::runtime_error("parameter file mismatch: expected '" + expected + "', found '" + name + "'");
    }
    auto rows = read_pod<std::int64_t>(in);
    auto cols = read_pod<std::int64_t>(in);
    if (rows != m.rows() || cols != m.cols()) {
        throw std::runtime_error("shape mismatch for parameter '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) {
        throw std::runtime_error("truncated parameter file");
    }
}

} // namespace

Parameter& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, double scale,
                             std::mt19937_64& rng) {
    if (find(name) != nullptr) {
        throw std::invalid_argument("duplicate parameter " + name);
    }
    return params_.emplace_back(name, uniform(rows, cols, scale, rng));
}

LookupTable& ParameterSet::add_table(const std::string& name, Eigen::Index dim, Eigen::Index count, double scale,
                                     std::mt19937_64& rng) {
    if (find_table(name) != nullptr) {
        throw std::invalid_argument("duplicate table " + name);
    }
    return tables_.emplace_back(name, uniform(dim, count, scale, rng));
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name() == name) {
            return &p;
        }
    }
    return nullptr;
}

LookupTable* ParameterSet::find_table(const std::string& name) {
    for (auto& t : tables_) {
        if (t.name() == name) {
            return &t;
        }
    }
    return nullptr;
}

bool ParameterSet::grads_finite() const {
    for (const auto& p : params_) {
        if (!p.grad().allFinite()) {
            return false;
        }
    }
    for (const auto& t : tables_) {
        for (const auto& [col, g] : t.grad()) {
            if (!g.allFinite()) {
                return false;
            }
        }
    }
    return true;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
    for (auto& t : tables_) {
        t.zero_grad();
    }
}

size_t ParameterSet::count() const {
    size_t n = 0;
    for (const auto& p : params_) {
        n += static_cast<size_t>(p.value().size());
    }
    for (const auto& t : tables_) {
        n += static_cast<size_t>(t.value().size());
    }
    return n;
}

void ParameterSet::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod<std::uint64_t>(out, params_.size());
    write_pod<std::uint64_t>(out, tables_.size());
    for (const auto& p : params_) {
        write_tensor(out, p.name(), p.value());
    }
    for (const auto& t : tables_) {
        write_tensor(out, t.name(), t.value());
    }
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

void ParameterSet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::string_view(magic, sizeof(magic)) != std::string_view(kMagic, sizeof(kMagic))) {
        throw std::runtime_error(path.string() + " is not an atlas parameter file");
    }
    if (read_pod<std::uint32_t>(in) != kVersion) {
        throw std::runtime_error("unsupported parameter file version in " + path.string());
    }
    auto np = read_pod<std::uint64_t>(in);
    auto nt = read_pod<std::uint64_t>(in);
    if (np != params_.size() || nt != tables_.size()) {
        throw std::runtime_error("parameter count mismatch in " + path.string());
    }
    for (auto& p : params_) {
        read_tensor(in, p.name(), p.value());
    }
    for (auto& t : tables_) {
        read_tensor(in, t.name(), t.value());
    }
}

std::string ParameterSet::digest() const {
    util::Sha256 h;
    auto feed = [&h](const std::string& name, const Matrix& m) {
        h.update(name);
        std::int64_t shape[2] = {m.rows(), m.cols()};
        h.update(shape, sizeof(shape));
        h.update(m.data(), static_cast<size_t>(m.size()) * sizeof(double));
    };
    for (const auto& p : params_) {
        feed(p.name(), p.value());
    }
    for (const auto& t : tables_) {
        feed(t.name(), t.value());
    }
    return h.hex_digest();
}

} // namespace atlas::nn
