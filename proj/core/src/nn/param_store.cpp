#include "dmldroid/nn/param_store.hpp"

#include <cmath>

namespace dmldroid::nn {

void OptimHyper::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("beta1 must be in [0,1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must be in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

Matrix& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                           bool trainable) {
    if (entries_.count(name)) throw ConfigError("parameter already exists: " + name);
    Entry e;
    e.value = Matrix(rows, cols);
    e.grad = Matrix(rows, cols);
    e.m = Matrix(rows, cols);
    e.v = Matrix(rows, cols);
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second.value;
}

Matrix& ParamStore::create_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                                  Rng& rng) {
    Matrix& m = create(name, rows, cols, true);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& x : m.raw()) x = rng.uniform(-limit, limit);
    return m;
}

Matrix& ParamStore::create_fill(const std::string& name, std::size_t rows, std::size_t cols,
                                double fill, bool trainable) {
    Matrix& m = create(name, rows, cols, trainable);
    for (double& x : m.raw()) x = fill;
    return m;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::size_t ParamStore::total_parameters() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [k, e] : entries_)
        std::fill(e.grad.raw().begin(), e.grad.raw().end(), 0.0);
}

void ParamStore::adamw_step(const OptimHyper& hyper) {
    hyper.validate();
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (auto& [k, e] : entries_) {
        if (!e.trainable) continue;
        double* p = e.value.data();
        double* g = e.grad.data();
        double* m = e.m.data();
        double* v = e.v.data();
        const std::size_t n = e.value.size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.epsilon);
            p[i] -= hyper.learning_rate * hyper.weight_decay * p[i];
        }
    }
}

namespace {

void append_array(Bytes& out, const std::string& name, const Matrix& m, bool trainable) {
    put_u32_le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32_le(out, 2);
    put_u64_le(out, m.rows());
    put_u64_le(out, m.cols());
    put_u32_le(out, trainable ? 1 : 0);
    for (double x : m.raw()) put_f64_le(out, x);
}

}  // namespace

Bytes ParamStore::serialize(bool include_optim_state) const {
    Bytes out;
    out.push_back('D');
    out.push_back('M');
    out.push_back('L');
    out.push_back('W');
    put_u32_le(out, 2);
    for (const auto& [name, e] : entries_) append_array(out, name, e.value, e.trainable);
    if (include_optim_state) {
        for (const auto& [name, e] : entries_) {
            append_array(out, name + "#m", e.m, true);
            append_array(out, name + "#v", e.v, true);
        }
        Matrix step(1, 1);
        step(0, 0) = static_cast<double>(step_);
        append_array(out, "optim.step", step, true);
    }
    return out;
}

ParamStore ParamStore::deserialize(const Bytes& raw) {
    ByteReader r(raw);
    if (r.remaining() < 8) throw FormatError("weight container truncated before header");
    if (r.str(4) != "DMLW") throw FormatError("bad weight container magic");
    const std::uint32_t version = r.u32();
    if (version != 2) throw FormatError("unsupported weight container version " + std::to_string(version));

    ParamStore store;
    std::map<std::string, Matrix> moments_m, moments_v;
    while (!r.eof()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 2)
            throw FormatError("unsupported array rank " + std::to_string(rank) + " for " + name);
        std::size_t rows = 1, cols = 1;
        if (rank == 1) {
            cols = static_cast<std::size_t>(r.u64());
        } else {
            rows = static_cast<std::size_t>(r.u64());
            cols = static_cast<std::size_t>(r.u64());
        }
        const bool trainable = r.u32() != 0;
        Matrix m(rows, cols);
        for (double& x : m.raw()) x = r.f64();

        if (name == "optim.step") {
            store.step_ = static_cast<std::uint64_t>(m(0, 0));
        } else if (name.size() > 2 && name.compare(name.size() - 2, 2, "#m") == 0) {
            moments_m.emplace(name.substr(0, name.size() - 2), std::move(m));
        } else if (name.size() > 2 && name.compare(name.size() - 2, 2, "#v") == 0) {
            moments_v.emplace(name.substr(0, name.size() - 2), std::move(m));
        } else {
            Entry e;
            e.grad = Matrix(rows, cols);
            e.m = Matrix(rows, cols);
            e.v = Matrix(rows, cols);
            e.value = std::move(m);
            e.trainable = trainable;
            store.entries_.emplace(name, std::move(e));
        }
    }
    for (auto& [name, m] : moments_m) {
        auto it = store.entries_.find(name);
        if (it != store.entries_.end()) it->second.m = std::move(m);
    }
    for (auto& [name, m] : moments_v) {
        auto it = store.entries_.find(name);
        if (it != store.entries_.end()) it->second.v = std::move(m);
    }
    return store;
}

void ParamStore::save(const std::string& path, bool include_optim_state) const {
    write_file(path, serialize(include_optim_state));
}

ParamStore ParamStore::load(const std::string& path) {
    return deserialize(read_file(path));
}

}  // namespace dmldroid::nn
