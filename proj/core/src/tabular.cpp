#include "dmldroid/tabular.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace dmldroid::tabular {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

BinaryFeatureMatrix build_feature_matrix(const std::vector<FeatureRecord>& records) {
    std::set<std::string> universe;
    std::map<std::string, const std::vector<std::string>*> by_id;
    for (const auto& [id, feats] : records) {
        if (!by_id.emplace(id, &feats).second)
            throw DataError("duplicate sample id: " + id);
        for (const auto& f : feats) universe.insert(f);
    }
    BinaryFeatureMatrix out;
    out.feature_names.assign(universe.begin(), universe.end());
    out.sample_ids.reserve(by_id.size());
    for (const auto& [id, feats] : by_id) out.sample_ids.push_back(id);

    std::map<std::string, std::size_t> col;
    for (std::size_t j = 0; j < out.feature_names.size(); ++j) col[out.feature_names[j]] = j;

    out.bits = nn::Matrix(out.sample_ids.size(), out.feature_names.size());
    std::size_t r = 0;
    for (const auto& [id, feats] : by_id) {
        for (const auto& f : *feats) out.bits(r, col.at(f)) = 1.0;
        ++r;
    }
    return out;
}

double PcaModel::cumulative_ratio() const {
    if (total_variance <= 0.0) return 0.0;
    double s = 0.0;
    for (double v : explained_variance) s += v;
    return s / total_variance;
}

void PcaModel::save_into(nn::ParamStore& store) const {
    nn::Matrix& m = store.create("pca.mean", 1, mean.size(), false);
    std::copy(mean.begin(), mean.end(), m.data());
    store.create("pca.components", components.rows(), components.cols(), false) = components;
    nn::Matrix& v = store.create("pca.var", 1, explained_variance.size(), false);
    std::copy(explained_variance.begin(), explained_variance.end(), v.data());
    store.create("pca.total_var", 1, 1, false)(0, 0) = total_variance;
    store.create("pca.target_ratio", 1, 1, false)(0, 0) = target_ratio;
}

PcaModel PcaModel::from_store(const nn::ParamStore& store) {
    PcaModel model;
    const nn::Matrix& m = store.value("pca.mean");
    model.mean.assign(m.data(), m.data() + m.size());
    model.components = store.value("pca.components");
    const nn::Matrix& v = store.value("pca.var");
    model.explained_variance.assign(v.data(), v.data() + v.size());
    if (store.has("pca.total_var")) model.total_variance = store.value("pca.total_var")(0, 0);
    if (store.has("pca.target_ratio")) model.target_ratio = store.value("pca.target_ratio")(0, 0);
    if (model.components.rows() != model.explained_variance.size() ||
        model.components.cols() != model.mean.size())
        throw FormatError("inconsistent pca entry shapes in weight container");
    return model;
}

PcaModel fit_pca(const nn::Matrix& data, double target_ratio) {
    const std::size_t m = data.rows(), n = data.cols();
    if (m < 2) throw DataError("PCA needs at least 2 rows, got " + std::to_string(m));
    if (n == 0) throw DataError("PCA on zero-column matrix");
    if (target_ratio <= 0.0 || target_ratio > 1.0)
        throw ConfigError("PCA target_ratio must be in (0,1]");

    PcaModel model;
    model.target_ratio = target_ratio;
    model.mean.resize(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += data(i, j);
        model.mean[j] = s / static_cast<double>(m);
    }

    EMat centered(m, n);
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = data(i, j) - model.mean[j];
            centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            sq += v * v;
        }
    model.total_variance = sq / static_cast<double>(m - 1);
    if (model.total_variance <= 1e-30)
        throw DataError("degenerate input: matrix has zero variance");

    Eigen::BDCSVD<EMat> svd(centered, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const auto& V = svd.matrixV();  // n x r, columns are components

    const std::size_t r = static_cast<std::size_t>(sv.size());
    std::vector<double> lambda(r);
    for (std::size_t k = 0; k < r; ++k)
        lambda[k] = sv(static_cast<Eigen::Index>(k)) * sv(static_cast<Eigen::Index>(k)) /
                    static_cast<double>(m - 1);

    std::size_t d = 0;
    double cum = 0.0;
    for (std::size_t k = 0; k < r; ++k) {
        cum += lambda[k];
        d = k + 1;
        if (cum / model.total_variance >= target_ratio - 1e-12) break;
    }

    model.components = nn::Matrix(d, n);
    model.explained_variance.assign(lambda.begin(), lambda.begin() + static_cast<std::ptrdiff_t>(d));
    for (std::size_t k = 0; k < d; ++k) {
        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = std::abs(V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
            if (v > best) {
                best = v;
                arg = j;
            }
        }
        const double sign = V(static_cast<Eigen::Index>(arg), static_cast<Eigen::Index>(k)) < 0.0
                                ? -1.0
                                : 1.0;
        for (std::size_t j = 0; j < n; ++j)
            model.components(k, j) =
                sign * V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    }
    return model;
}

PcaModel fit_pca(const BinaryFeatureMatrix& matrix, double target_ratio) {
    return fit_pca(matrix.bits, target_ratio);
}

nn::Matrix pca_transform(const PcaModel& model, const nn::Matrix& data) {
    if (data.cols() != model.mean.size())
        throw DimensionError("pca_transform input has " + std::to_string(data.cols()) +
                             " cols, model expects " + std::to_string(model.mean.size()));
    nn::Matrix centered = data;
    for (std::size_t i = 0; i < centered.rows(); ++i)
        for (std::size_t j = 0; j < centered.cols(); ++j) centered(i, j) -= model.mean[j];
    return nn::matmul_nt(centered, model.components);
}

nn::Matrix pca_inverse_transform(const PcaModel& model, const nn::Matrix& reduced) {
    if (reduced.cols() != model.dims())
        throw DimensionError("pca_inverse_transform input has " + std::to_string(reduced.cols()) +
                             " cols, model has " + std::to_string(model.dims()) + " components");
    nn::Matrix out = nn::matmul(reduced, model.components);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += model.mean[j];
    return out;
}

TfEncoder::TfEncoder(TfEncoderConfig cfg, nn::ParamStore& store, Rng& rng, std::string prefix)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {
    if (cfg_.input_dim == 0) throw ConfigError("TfEncoder input_dim must be > 0");
    if (!store_->has(prefix_ + ".fc1.w")) {
        store_->create_glorot(prefix_ + ".fc1.w", cfg_.input_dim, cfg_.hidden1, rng);
        store_->create(prefix_ + ".fc1.b", 1, cfg_.hidden1);
        store_->create_glorot(prefix_ + ".fc2.w", cfg_.hidden1, cfg_.hidden2, rng);
        store_->create(prefix_ + ".fc2.b", 1, cfg_.hidden2);
        store_->create_glorot(prefix_ + ".fc3.w", cfg_.hidden2, cfg_.embed_dim, rng);
        store_->create(prefix_ + ".fc3.b", 1, cfg_.embed_dim);
        store_->create(prefix_ + ".fc4.w", cfg_.embed_dim, 1);
        store_->create(prefix_ + ".fc4.b", 1, 1);
    } else if (store_->value(prefix_ + ".fc1.w").rows() != cfg_.input_dim) {
        throw DimensionError("stored " + prefix_ + ".fc1.w expects input dim " +
                             std::to_string(store_->value(prefix_ + ".fc1.w").rows()) +
                             ", config says " + std::to_string(cfg_.input_dim));
    }
}

TfEncoder::Out TfEncoder::forward(nn::Tape& t, nn::Tape::Value x, bool training) const {
    auto affine = [&](nn::Tape::Value in, const std::string& layer) {
        return t.add_rowvec(t.matmul(in, t.param(prefix_ + "." + layer + ".w")),
                            t.param(prefix_ + "." + layer + ".b"));
    };
    auto h1 = t.relu(t.batchnorm(affine(x, "fc1"), prefix_ + ".bn1", training));
    auto h2 = t.relu(t.batchnorm(affine(h1, "fc2"), prefix_ + ".bn2", training));
    auto h2d = t.dropout(h2, cfg_.dropout, training);
    auto h3 = t.relu(t.batchnorm(affine(h2d, "fc3"), prefix_ + ".bn3", training));
    return Out{h3, affine(h3, "fc4")};
}

nn::Matrix TfEncoder::encode(const nn::Matrix& rows) const {
    nn::Tape t(store_);
    return t.value(forward(t, t.input(rows), false).embedding);
}

LabeledFeatures load_feature_csv(const std::string& path) {
    const auto lines = split_lines(read_text_file(path));
    if (lines.empty()) throw DataError("empty feature csv: " + path);
    const auto header = split(lines[0], ',');
    if (header.size() < 2 || header.front() != "sha256" || header.back() != "label")
        throw DataError("feature csv header must be sha256,<features...>,label: " + path);
    const std::size_t n = header.size() - 2;

    struct Row {
        std::string id;
        std::vector<double> bits;
        int label;
    };
    std::vector<Row> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const auto cells = split(lines[li], ',');
        if (cells.size() != header.size())
            throw DataError("feature csv row " + std::to_string(li + 1) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        Row row;
        row.id = cells[0];
        row.bits.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            if (cells[j + 1] == "0")
                row.bits[j] = 0.0;
            else if (cells[j + 1] == "1")
                row.bits[j] = 1.0;
            else
                throw DataError("feature csv cell at row " + std::to_string(li + 1) +
                                " col " + header[j + 1] + " is not 0/1");
        }
        if (cells.back() == "0")
            row.label = 0;
        else if (cells.back() == "1")
            row.label = 1;
        else
            throw DataError("feature csv label at row " + std::to_string(li + 1) + " is not 0/1");
        rows.push_back(std::move(row));
    }

    // Column permutation to lexicographic feature order.
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return header[a + 1] < header[b + 1];
    });
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });

    LabeledFeatures out;
    out.matrix.feature_names.resize(n);
    for (std::size_t j = 0; j < n; ++j) out.matrix.feature_names[j] = header[order[j] + 1];
    out.matrix.bits = nn::Matrix(rows.size(), n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].id == rows[i - 1].id)
            throw DataError("duplicate sample id: " + rows[i].id);
        out.matrix.sample_ids.push_back(rows[i].id);
        out.labels.push_back(rows[i].label);
        for (std::size_t j = 0; j < n; ++j) out.matrix.bits(i, j) = rows[i].bits[order[j]];
    }
    return out;
}

void save_feature_csv(const std::string& path, const LabeledFeatures& data) {
    if (data.labels.size() != data.matrix.samples())
        throw DimensionError("label count " + std::to_string(data.labels.size()) +
                             " != sample count " + std::to_string(data.matrix.samples()));
    std::string text = "sha256";
    for (const auto& f : data.matrix.feature_names) text += "," + f;
    text += ",label\n";
    for (std::size_t i = 0; i < data.matrix.samples(); ++i) {
        text += data.matrix.sample_ids[i];
        for (std::size_t j = 0; j < data.matrix.features(); ++j)
            text += data.matrix.bits(i, j) != 0.0 ? ",1" : ",0";
        text += ",";
        text += std::to_string(data.labels[i]);
        text += "\n";
    }
    write_text_file(path, text);
}

}  // namespace dmldroid::tabular
