#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmldroid/common.hpp"
#include "dmldroid/nn/matrix.hpp"
#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/sample.hpp"
#include "dmldroid/tabular.hpp"

namespace dmldroid::robustness {

// Feature-space stand-ins for the smali-level obfuscators: Rn imitates
// identifier renaming, Co imitates junk-code and call-indirection transforms,
// Enc imitates string/asset encryption. Mixed applies Rn, then Co, then Enc.
enum class ObfuscationMode { kRn, kCo, kEnc, kMixed };

ObfuscationMode parse_obfuscation_mode(const std::string& name);  // rn|co|enc|mixed
const char* obfuscation_mode_name(ObfuscationMode mode);

struct ObfuscationSpec {
    ObfuscationMode mode = ObfuscationMode::kMixed;
    std::uint64_t seed = 0;
    double junk_ratio = 0.10;         // Co: data-section growth fraction
    double indirection_ratio = 0.20;  // Co: fraction of graph edges wrapped
    double enc_ratio = 0.50;          // Enc: trailing data fraction overwritten

    void validate() const;  // ratios must sit in [0,1]
};

// Pure given the seed. Rn rewrites the ids payload with random printable
// bytes (header and data untouched, all section lengths preserved); Co
// inserts junk bytes into the data section and reroutes a fraction of graph
// edges u->v through a fresh non-API node w; Enc overwrites the trailing
// enc_ratio of the data section with uniform random bytes. Manifest bits,
// id and label pass through unchanged in every mode.
//
// Rn and Enc require DEX bytes; Co works on whichever of DEX/graph is
// present but needs at least one; missing requirements are a DataError.
ApkSample obfuscate(const ApkSample& sample, const ObfuscationSpec& spec);

// Shannon entropy in bits per byte; 0 for empty input.
double shannon_entropy(const Bytes& bytes);

// Which manifest bits an attacker may flip. Protected bits are the hard
// no-touch set; allowed and protected never overlap.
struct AttackBudget {
    std::vector<std::size_t> allowed;         // sorted flippable bit indices
    std::vector<std::size_t> protected_bits;  // sorted, never modified
    std::size_t max_flips = 16;               // per-sample cap, 0 disables flips
    std::size_t noise_dim = 16;

    void validate() const;
};

// allowed = bits with benign document frequency >= allowed_df; protected =
// bits with malware document frequency >= protected_mal_df and benign
// document frequency <= protected_benign_df. Bits qualifying for both sets
// stay protected only.
AttackBudget derive_budget(const tabular::BinaryFeatureMatrix& bits,
                           const std::vector<int>& labels, double allowed_df = 0.3,
                           double protected_mal_df = 0.5, double protected_benign_df = 0.05);

// Query-only detector interface: one 0/1 verdict per input row.
using BlackBox = std::function<std::vector<int>(const nn::Matrix& tf_rows)>;

struct AttackHyper {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double generator_lr = 1e-3;
    double substitute_lr = 1e-3;
    std::size_t hidden = 64;  // width of both hidden layers in both nets

    void validate() const;
};

struct AttackLog {
    struct Epoch {
        std::size_t epoch = 0;
        double generator_loss = 0.0;       // substitute BCE toward benign on AEs
        double substitute_accuracy = 0.0;  // vs black-box labels on the pool
        double evasion_rate = 0.0;         // malware AEs the black box calls benign
    };
    std::vector<Epoch> epochs;
    std::size_t best_epoch = 0;  // 1-based epoch whose generator weights are kept
};

// Generator MLP (bits + noise -> per-allowed-bit flip probabilities) plus the
// substitute detector that stands in for the black box. Both are plain
// two-hidden-layer networks.
class AdversarialGenerator {
public:
    AdversarialGenerator(std::size_t tf_dim, AttackBudget budget, std::uint64_t seed,
                         std::size_t hidden = 64);

    std::size_t tf_dim() const { return tf_dim_; }
    const AttackBudget& budget() const { return budget_; }
    const AttackLog& log() const { return log_; }

    // Flip probabilities for a batch; one column per allowed bit, in
    // budget().allowed order.
    nn::Matrix flip_probabilities(const nn::Matrix& tf_rows, const nn::Matrix& noise) const;

    // The substitute's malware logits.
    std::vector<double> substitute_logits(const nn::Matrix& tf_rows) const;

    // Raw perturbation: samples noise from the seed, thresholds the flip
    // probabilities at 0.5, keeps at most max_flips flips (highest
    // probability first), and flips those allowed bits.
    std::vector<double> perturb(const std::vector<double>& tf_bits, std::uint64_t seed) const;

private:
    friend AdversarialGenerator train_adversarial_generator(const BlackBox&, const nn::Matrix&,
                                                            const nn::Matrix&,
                                                            const AttackBudget&,
                                                            const AttackHyper&, std::uint64_t);

    std::size_t tf_dim_ = 0;
    AttackBudget budget_;
    // unique_ptr keeps eval methods const: the tape wants a mutable store
    // even for forward-only passes.
    std::unique_ptr<nn::ParamStore> gen_store_;
    std::unique_ptr<nn::ParamStore> sub_store_;
    AttackLog log_;
};

// Alternating black-box training: each epoch builds discrete AEs for the
// malware rows, queries the black box on them, refits the substitute on the
// pooled rows under black-box labels only (the benign rows are also labeled
// by querying, never by assumption), then steps the generator against the
// substitute's malware score of the continuously relaxed AEs. The generator
// weights from the best-evasion epoch are kept. benign_tf may be empty.
AdversarialGenerator train_adversarial_generator(const BlackBox& blackbox,
                                                 const nn::Matrix& malware_tf,
                                                 const nn::Matrix& benign_tf,
                                                 const AttackBudget& budget,
                                                 const AttackHyper& hyper, std::uint64_t seed);

// Guarded entry point: rejects benign samples (UsageError) and dimension
// mismatches, then defers to AdversarialGenerator::perturb.
std::vector<double> perturb_sample(const AdversarialGenerator& gen, const ApkSample& sample,
                                   std::uint64_t seed);

// An AE corpus row-for-row: perturbed bits in the tabular CSV schema plus
// the id of the sample each row was generated from.
struct AeCorpus {
    tabular::BinaryFeatureMatrix bits;
    std::vector<int> labels;
    std::vector<std::string> origin_ids;
};

void save_ae_csv(const std::string& path, const AeCorpus& corpus);
AeCorpus load_ae_csv(const std::string& path);

}  // namespace dmldroid::robustness
