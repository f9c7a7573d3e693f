#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmldroid/common.hpp"
#include "dmldroid/deximg.hpp"
#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/nn/tape.hpp"
#include "dmldroid/seqenc.hpp"
#include "dmldroid/tabular.hpp"

namespace dmldroid::fusion {

enum class Strategy { kConcat, kSelfAttn, kCrossAttn, kGated, kDwf };

Strategy parse_strategy(const std::string& name);  // concat|self_attn|cross_attn|gated|dwf
const char* strategy_name(Strategy s);

// The three 128-d embedding streams for a batch; a modality is absent when
// its matrix is empty. Present matrices must agree on batch size and width.
struct ModalityBundle {
    nn::Matrix v_tf;
    nn::Matrix v_if;
    nn::Matrix v_gsf;

    bool has_tf() const { return !v_tf.empty(); }
    bool has_if() const { return !v_if.empty(); }
    bool has_gsf() const { return !v_gsf.empty(); }
    std::size_t batch() const;  // validates agreement, DimensionError otherwise
};

// Tape-resident counterpart used inside training graphs.
struct BundleValues {
    nn::Tape::Value v_tf;
    nn::Tape::Value v_if;
    nn::Tape::Value v_gsf;
};

// Scaled dot-product attention with per-head projection matrices (d x d_k
// each) and a d x d output projection; no bias terms.
struct MhaParams {
    std::vector<nn::Tape::Value> wq, wk, wv;
    nn::Tape::Value wo;
};

// One sample: q is L_q x d, k and v are L_k x d; returns L_q x d. A batch is
// a loop over samples. Head count comes from the param lists; d must divide
// evenly into them.
nn::Tape::Value multi_head_attention(nn::Tape& t, nn::Tape::Value q, nn::Tape::Value k,
                                     nn::Tape::Value v, const MhaParams& p);

struct FusionConfig {
    Strategy strategy = Strategy::kDwf;
    std::size_t dim = 128;   // per-modality embedding width
    std::size_t heads = 4;   // self/cross attention only
    std::size_t dwf_out = 0; // 0 keeps the concatenated width
    bool use_tf = true;
    bool use_if = true;
    bool use_gsf = true;

    void validate() const;
    std::size_t present() const;
    // concat/self/cross: sum of present widths; gated: dim; dwf: dwf_out or sum.
    std::size_t fused_dim() const;
};

// One fusion strategy over the modality embeddings plus the scalar
// classification head. Parameters are created zero-head/Glorot on first bind
// and validated on rebind; rebinding a store built for a different strategy
// or shape is an error.
class FusionModel {
public:
    FusionModel(FusionConfig cfg, nn::ParamStore& store, Rng& rng, std::string prefix = "fusion");

    struct Out {
        nn::Tape::Value fused;  // B x fused_dim
        nn::Tape::Value logit;  // B x 1
    };
    Out forward(nn::Tape& t, const BundleValues& in) const;

    // Eval conveniences over a fresh tape.
    nn::Matrix fuse(const ModalityBundle& b) const;
    std::vector<double> logits(const ModalityBundle& b) const;

    // Score-weighted view of the dwf strategy: per-sample softmax weights
    // over the present modalities (columns in TF, IF, GSF order) and the
    // unprojected weighted sum of the modality vectors.
    struct DwfView {
        nn::Matrix alpha;         // B x present
        nn::Matrix weighted_sum;  // B x dim
    };
    DwfView dwf_view(const ModalityBundle& b) const;

    const FusionConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    BundleValues lift(nn::Tape& t, const ModalityBundle& b) const;

    FusionConfig cfg_;
    nn::ParamStore* store_ = nullptr;
    std::string prefix_;
};

// Model-ready tensors for a set of samples: PCA-projected tabular rows,
// flattened section images, encoded API sequences. A modality a model does
// not use may stay empty.
struct DetectorData {
    nn::Matrix tf;
    nn::Matrix img;
    std::vector<seqenc::EncodedSequence> seq;
    std::vector<double> labels;

    // Label count when labeled, else the first present modality's row count.
    std::size_t size() const;
    DetectorData subset(const std::vector<std::size_t>& idx) const;
};

struct DetectorConfig {
    bool use_tf = true;
    bool use_if = true;
    bool use_gsf = true;
    Strategy strategy = Strategy::kDwf;  // applies when two or more modalities run
    std::size_t fusion_heads = 4;
    std::size_t dwf_out = 0;
    tabular::TfEncoderConfig tf{};
    deximg::IfEncoderConfig img{};
    seqenc::EncoderConfig gsf{};
    std::size_t vocab_size = 0;  // required with use_gsf

    void validate() const;
    std::size_t modalities() const;

    bool operator==(const DetectorConfig&) const = default;
};

// The composed malware detector: the selected encoders plus, when at least
// two run, a fusion strategy and its head; a single-modality detector uses
// that encoder's own logit head. The constructor writes a manifest of
// non-trainable meta entries into the store so a serialized store alone can
// rebuild the model (from_store).
class Detector {
public:
    Detector(DetectorConfig cfg, nn::ParamStore& store, Rng& rng);

    static DetectorConfig read_config(const nn::ParamStore& store);  // from meta entries
    static Detector from_store(nn::ParamStore& store);

    struct Out {
        nn::Tape::Value logit;  // B x 1
        BundleValues embeddings;
    };
    Out forward(nn::Tape& t, const DetectorData& batch, bool training) const;

    // Eval logits over fresh tapes, chunked to bound graph size.
    std::vector<double> logits(const DetectorData& data) const;

    const DetectorConfig& config() const { return cfg_; }
    const FusionModel* fusion() const { return fusion_ ? &*fusion_ : nullptr; }
    nn::ParamStore& store() const { return *store_; }

private:
    DetectorConfig cfg_;
    nn::ParamStore* store_ = nullptr;
    std::optional<tabular::TfEncoder> tf_;
    std::optional<deximg::IfEncoder> if_;
    std::optional<seqenc::GsfEncoder> gsf_;
    std::optional<FusionModel> fusion_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;  // NaN when no validation set was given
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

// Fraction of logit-sign predictions matching the 0/1 labels.
double accuracy(const std::vector<double>& logits, const std::vector<double>& labels);

// End-to-end optimization of encoders + fusion + head under mean BCE with
// AdamW, one update per minibatch, seeded shuffle per epoch. Records the
// seed in the store manifest. The training set needs both classes.
TrainLog train_detector(const Detector& model, const DetectorData& train, const DetectorData* val,
                        const nn::OptimHyper& hyper, std::uint64_t seed);

}  // namespace dmldroid::fusion
