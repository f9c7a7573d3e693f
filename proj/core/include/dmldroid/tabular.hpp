#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/nn/tape.hpp"

namespace dmldroid::tabular {

// Presence/absence matrix over manifest-style features (permissions, intent
// actions, services, categories). Rows sorted by sample id, columns by
// feature name, so the layout is a pure function of the record set.
struct BinaryFeatureMatrix {
    std::vector<std::string> sample_ids;
    std::vector<std::string> feature_names;
    nn::Matrix bits;

    std::size_t samples() const { return sample_ids.size(); }
    std::size_t features() const { return feature_names.size(); }
};

using FeatureRecord = std::pair<std::string, std::vector<std::string>>;

BinaryFeatureMatrix build_feature_matrix(const std::vector<FeatureRecord>& records);

struct PcaModel {
    std::vector<double> mean;
    nn::Matrix components;                 // d x n, orthonormal rows
    std::vector<double> explained_variance;  // top-d covariance eigenvalues
    double total_variance = 0.0;
    double target_ratio = 0.0;

    std::size_t dims() const { return components.rows(); }
    std::size_t input_dims() const { return mean.size(); }
    double cumulative_ratio() const;

    // Writes the reserved entries pca.mean, pca.components, pca.var.
    void save_into(nn::ParamStore& store) const;
    static PcaModel from_store(const nn::ParamStore& store);
};

// Thin SVD of the centered matrix; keeps the smallest component count whose
// cumulative variance ratio reaches target_ratio. Component signs are fixed
// so each row's largest-magnitude entry is positive.
PcaModel fit_pca(const nn::Matrix& data, double target_ratio = 0.90);
PcaModel fit_pca(const BinaryFeatureMatrix& matrix, double target_ratio = 0.90);

nn::Matrix pca_transform(const PcaModel& model, const nn::Matrix& data);
nn::Matrix pca_inverse_transform(const PcaModel& model, const nn::Matrix& reduced);

// The tabular-branch MLP: d -> 256 -> 256 -> dropout -> 128 -> 1 with a
// batch-norm block on every hidden layer. The 128-d hidden activation is the
// modality embedding; the final layer gives the standalone logit.
struct TfEncoderConfig {
    std::size_t input_dim = 0;
    std::size_t hidden1 = 256;
    std::size_t hidden2 = 256;
    std::size_t embed_dim = 128;
    double dropout = 0.3;

    bool operator==(const TfEncoderConfig&) const = default;
};

class TfEncoder {
public:
    TfEncoder(TfEncoderConfig cfg, nn::ParamStore& store, Rng& rng,
              std::string prefix = "tf");

    struct Out {
        nn::Tape::Value embedding;  // B x embed_dim
        nn::Tape::Value logit;      // B x 1
    };
    Out forward(nn::Tape& t, nn::Tape::Value x, bool training) const;

    // Eval-mode convenience over a fresh tape.
    nn::Matrix encode(const nn::Matrix& rows) const;

    const TfEncoderConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    TfEncoderConfig cfg_;
    nn::ParamStore* store_;
    std::string prefix_;
};

// sha256,<feature names...>,label rows with 0/1 cells. Loading sorts rows by
// id and columns by feature name; saving writes them back in that order.
struct LabeledFeatures {
    BinaryFeatureMatrix matrix;
    std::vector<int> labels;  // 0 = benign, 1 = malware, aligned with rows
};

LabeledFeatures load_feature_csv(const std::string& path);
void save_feature_csv(const std::string& path, const LabeledFeatures& data);

}  // namespace dmldroid::tabular
