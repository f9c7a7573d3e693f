#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmldroid/nn/matrix.hpp"

namespace dmldroid::nn {

// Optimizer hyperparameters. Defaults follow the training recipe used for the
// full-size models; the experiment harness overrides them for desk-scale runs.
struct OptimHyper {
    double learning_rate = 2e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;

    void validate() const;
};

// Named parameter arrays plus per-parameter Adam moment state and a global
// step counter. Non-trainable entries (running batch-norm statistics, frozen
// embeddings) live here too so a model is one self-contained store.
class ParamStore {
public:
    struct Entry {
        Matrix value;
        Matrix grad;
        Matrix m;
        Matrix v;
        bool trainable = true;
    };

    Matrix& create(const std::string& name, std::size_t rows, std::size_t cols,
                   bool trainable = true);
    // Uniform init in +-sqrt(6/(fan_in+fan_out)) with fan_in=rows, fan_out=cols.
    Matrix& create_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
    Matrix& create_fill(const std::string& name, std::size_t rows, std::size_t cols,
                        double fill, bool trainable = true);

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    Matrix& value(const std::string& name) { return entry(name).value; }
    const Matrix& value(const std::string& name) const { return entry(name).value; }

    std::vector<std::string> names() const;
    std::size_t count() const { return entries_.size(); }
    std::size_t total_parameters() const;

    void zero_grads();
    std::uint64_t step() const { return step_; }

    // One AdamW update over all trainable entries: bias-corrected Adam step,
    // then decoupled decay p <- p - lr*wd*p. Increments the step counter.
    void adamw_step(const OptimHyper& hyper);

    // Flat binary container: magic "DMLW", version u32, then per entry
    // name-length u32, name bytes, rank u32, dims u64 each, trainable u32,
    // f64 payload, all little-endian. Entries are written in sorted name
    // order. With include_optim_state, Adam moments are appended as
    // "<name>#m" / "<name>#v" entries plus a scalar "optim.step".
    Bytes serialize(bool include_optim_state = false) const;
    static ParamStore deserialize(const Bytes& raw);
    void save(const std::string& path, bool include_optim_state = false) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, Entry> entries_;
    std::uint64_t step_ = 0;
};

}  // namespace dmldroid::nn
