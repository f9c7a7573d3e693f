#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dmldroid/tabular.hpp"
#include "support/linalg_oracle.hpp"

using namespace dmldroid;
using namespace dmldroid::tabular;
using nn::Matrix;

namespace {

std::vector<std::vector<double>> to_dense(const Matrix& m) {
    std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

Matrix random_rank_k(std::size_t m, std::size_t n, std::size_t k, Rng& rng) {
    Matrix a(m, k), b(k, n);
    for (double& v : a.raw()) v = rng.uniform(-1.0, 1.0);
    for (double& v : b.raw()) v = rng.uniform(-1.0, 1.0);
    return nn::matmul(a, b);
}

std::string temp_path(const char* name) {
    return std::string("/tmp/dmldroid_test_") + name;
}

}  // namespace

TEST_CASE("two records over one feature give the expected 2x1 matrix") {
    auto m = build_feature_matrix({{"A", {"android.permission.INTERNET"}}, {"B", {}}});
    CHECK(m.samples() == 2);
    CHECK(m.features() == 1);
    CHECK(m.feature_names[0] == "android.permission.INTERNET");
    CHECK(m.bits(0, 0) == 1.0);
    CHECK(m.bits(1, 0) == 0.0);
}

TEST_CASE("manifest feature kinds all become sorted columns") {
    auto m = build_feature_matrix({
        {"a1", {"android.permission.ACCESS_COARSE_LOCATION", "android.intent.action.BOOT_COMPLETED"}},
        {"a2", {"com.example.BackgroundService", "android.intent.category.LAUNCHER"}},
    });
    CHECK(m.features() == 4);
    CHECK(std::is_sorted(m.feature_names.begin(), m.feature_names.end()));
    CHECK(m.bits(0, 0) == 1.0);  // intent action sorts first
    CHECK(m.bits(1, 2) == 0.0);
}

TEST_CASE("record order does not change the built matrix") {
    std::vector<FeatureRecord> recs = {
        {"c", {"P2", "P3"}}, {"a", {"P1"}}, {"b", {"P3"}}};
    auto m1 = build_feature_matrix(recs);
    std::swap(recs[0], recs[2]);
    std::swap(recs[1], recs[2]);
    auto m2 = build_feature_matrix(recs);
    CHECK(m1.sample_ids == m2.sample_ids);
    CHECK(m1.feature_names == m2.feature_names);
    CHECK(nn::max_abs_diff(m1.bits, m2.bits) == 0.0);
}

TEST_CASE("duplicate sample ids are rejected") {
    CHECK_THROWS_AS(build_feature_matrix({{"x", {"P"}}, {"x", {}}}), DataError);
}

TEST_CASE("single-axis variance collapses to one component with full ratio") {
    Matrix data(6, 4);
    for (std::size_t i = 0; i < 6; ++i) data(i, 2) = static_cast<double>(i);
    auto model = fit_pca(data, 0.90);
    CHECK(model.dims() == 1);
    CHECK(model.cumulative_ratio() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(model.components(0, 2)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-variance matrix is rejected as degenerate") {
    Matrix data(5, 3, 1.0);
    CHECK_THROWS_AS(fit_pca(data, 0.9), DataError);
}

TEST_CASE("rank-2 data needs two components and matches a Jacobi eigen oracle") {
    Rng rng(404);
    Matrix data = random_rank_k(50, 10, 2, rng);
    auto model = fit_pca(data, 0.999);
    CHECK(model.dims() == 2);
    CHECK(model.cumulative_ratio() >= 0.999);

    auto cov = testsupport::sample_covariance(to_dense(data));
    auto [vals, vecs] = testsupport::jacobi_eigen_symmetric(cov);

    for (std::size_t k = 0; k < model.dims(); ++k) {
        CHECK(model.explained_variance[k] == doctest::Approx(vals[k]).epsilon(1e-8));
        // Component must be the oracle eigenvector up to sign.
        double dot = 0.0;
        for (std::size_t j = 0; j < 10; ++j) dot += model.components(k, j) * vecs[k][j];
        CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-6));
    }

    double trace = 0.0;
    for (std::size_t j = 0; j < 10; ++j) trace += cov[j][j];
    CHECK(model.total_variance == doctest::Approx(trace).epsilon(1e-10));
}

TEST_CASE("explained-variance ratios are non-increasing and the spectrum sums to one") {
    Rng rng(405);
    Matrix data(40, 8);
    for (double& v : data.raw()) v = rng.uniform(0.0, 1.0) < 0.4 ? 1.0 : 0.0;
    auto model = fit_pca(data, 1.0);
    for (std::size_t k = 1; k < model.dims(); ++k)
        CHECK(model.explained_variance[k] <= model.explained_variance[k - 1] + 1e-12);
    double s = 0.0;
    for (double v : model.explained_variance) s += v;
    CHECK(s / model.total_variance == doctest::Approx(1.0).epsilon(1e-9));

    auto cov = testsupport::sample_covariance(to_dense(data));
    auto [vals, vecs] = testsupport::jacobi_eigen_symmetric(cov);
    double oracle_sum = 0.0, oracle_trace = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
        oracle_sum += vals[j];
        oracle_trace += cov[j][j];
    }
    CHECK(oracle_sum == doctest::Approx(oracle_trace).epsilon(1e-9));
}

TEST_CASE("components are orthonormal rows") {
    Rng rng(406);
    Matrix data(60, 12);
    for (double& v : data.raw()) v = rng.uniform(0.0, 1.0) < 0.3 ? 1.0 : 0.0;
    auto model = fit_pca(data, 0.95);
    Matrix gram = nn::matmul_nt(model.components, model.components);
    CHECK(nn::max_abs_diff(gram, Matrix::identity(model.dims())) <= 1e-6);
}

TEST_CASE("component sign convention puts the largest entry positive") {
    Rng rng(407);
    Matrix data = random_rank_k(30, 6, 3, rng);
    auto model = fit_pca(data, 0.999);
    for (std::size_t k = 0; k < model.dims(); ++k) {
        double best = 0.0, at = 0.0;
        for (std::size_t j = 0; j < 6; ++j)
            if (std::abs(model.components(k, j)) > best) {
                best = std::abs(model.components(k, j));
                at = model.components(k, j);
            }
        CHECK(at > 0.0);
    }
}

TEST_CASE("transform of the mean row is the zero vector") {
    Rng rng(408);
    Matrix data = random_rank_k(20, 5, 3, rng);
    auto model = fit_pca(data, 0.9);
    Matrix mean_row(1, 5);
    for (std::size_t j = 0; j < 5; ++j) mean_row(0, j) = model.mean[j];
    Matrix z = pca_transform(model, mean_row);
    CHECK(nn::frobenius_norm(z) < 1e-12);
}

TEST_CASE("rank-d data reconstructs through transform and inverse within 1e-8") {
    Rng rng(409);
    Matrix data = random_rank_k(40, 9, 3, rng);
    auto model = fit_pca(data, 0.9999999);
    CHECK(model.dims() == 3);
    Matrix recon = pca_inverse_transform(model, pca_transform(model, data));
    CHECK(nn::max_abs_diff(recon, data) <= 1e-8);
}

TEST_CASE("reconstruction error is bounded by the discarded eigenvalue mass") {
    Rng rng(410);
    Matrix data(50, 10);
    for (double& v : data.raw()) v = rng.uniform(0.0, 1.0) < 0.5 ? 1.0 : 0.0;
    auto model = fit_pca(data, 0.70);
    CHECK(model.dims() < 10);

    double kept = 0.0;
    for (double v : model.explained_variance) kept += v;
    const double discarded = model.total_variance - kept;

    Matrix recon = pca_inverse_transform(model, pca_transform(model, data));
    double err = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double d = data.data()[i] - recon.data()[i];
        err += d * d;
    }
    CHECK(err <= discarded * static_cast<double>(data.rows()) + 1e-9);
}

TEST_CASE("column mismatch at transform names the dimension problem") {
    Rng rng(411);
    auto model = fit_pca(random_rank_k(12, 6, 2, rng), 0.9);
    CHECK_THROWS_AS(pca_transform(model, Matrix(3, 5)), DimensionError);
}

TEST_CASE("pca model round-trips through the reserved container names") {
    Rng rng(412);
    auto model = fit_pca(random_rank_k(25, 7, 4, rng), 0.99);
    nn::ParamStore store;
    model.save_into(store);
    CHECK(store.has("pca.mean"));
    CHECK(store.has("pca.components"));
    CHECK(store.has("pca.var"));

    auto back = PcaModel::from_store(nn::ParamStore::deserialize(store.serialize()));
    CHECK(back.dims() == model.dims());
    CHECK(nn::max_abs_diff(back.components, model.components) == 0.0);
    for (std::size_t j = 0; j < model.mean.size(); ++j)
        CHECK(back.mean[j] == model.mean[j]);
    CHECK(back.total_variance == model.total_variance);
    CHECK(back.target_ratio == model.target_ratio);
}

TEST_CASE("tabular encoder produces 128-d embeddings and one logit per row") {
    nn::ParamStore store;
    Rng rng(21);
    TfEncoder enc({.input_dim = 24}, store, rng);
    nn::Tape t(&store);
    Matrix x(5, 24);
    for (double& v : x.raw()) v = rng.uniform(-1.0, 1.0);
    auto out = enc.forward(t, t.input(x), false);
    CHECK(t.value(out.embedding).rows() == 5);
    CHECK(t.value(out.embedding).cols() == 128);
    CHECK(t.value(out.logit).rows() == 5);
    CHECK(t.value(out.logit).cols() == 1);
}

TEST_CASE("zero-weight encoder maps everything to zero") {
    nn::ParamStore store;
    Rng rng(22);
    TfEncoder enc({.input_dim = 8}, store, rng);
    for (const auto& name : store.names()) {
        if (name.find(".bn") != std::string::npos) continue;
        for (double& v : store.value(name).raw()) v = 0.0;
    }
    nn::Tape t(&store);
    Matrix x(3, 8);
    for (double& v : x.raw()) v = rng.uniform(-1.0, 1.0);
    auto out = enc.forward(t, t.input(x), false);
    CHECK(nn::frobenius_norm(t.value(out.embedding)) == 0.0);
    CHECK(nn::frobenius_norm(t.value(out.logit)) == 0.0);
}

TEST_CASE("eval-mode encoding is deterministic across calls") {
    nn::ParamStore store;
    Rng rng(23);
    TfEncoder enc({.input_dim = 10}, store, rng);
    Matrix x(4, 10);
    for (double& v : x.raw()) v = rng.uniform(-1.0, 1.0);
    Matrix e1 = enc.encode(x);
    Matrix e2 = enc.encode(x);
    CHECK(nn::max_abs_diff(e1, e2) == 0.0);
}

TEST_CASE("encoder rejects input width disagreeing with trained parameters") {
    nn::ParamStore store;
    Rng rng(24);
    TfEncoder enc({.input_dim = 10}, store, rng);
    nn::Tape t(&store);
    CHECK_THROWS_AS(enc.forward(t, t.input(Matrix(2, 7)), false), DimensionError);
    CHECK_THROWS_AS(TfEncoder({.input_dim = 12}, store, rng), DimensionError);
}

TEST_CASE("feature csv round-trips and normalizes ordering") {
    const std::string path = temp_path("features.csv");
    write_text_file(path,
                    "sha256,zeta,alpha,label\n"
                    "bbb,1,0,1\n"
                    "aaa,0,1,0\n");
    auto data = load_feature_csv(path);
    CHECK(data.matrix.sample_ids == std::vector<std::string>{"aaa", "bbb"});
    CHECK(data.matrix.feature_names == std::vector<std::string>{"alpha", "zeta"});
    CHECK(data.matrix.bits(0, 0) == 1.0);  // aaa has alpha
    CHECK(data.matrix.bits(1, 1) == 1.0);  // bbb has zeta
    CHECK(data.labels == std::vector<int>{0, 1});

    const std::string path2 = temp_path("features2.csv");
    save_feature_csv(path2, data);
    auto again = load_feature_csv(path2);
    CHECK(again.matrix.sample_ids == data.matrix.sample_ids);
    CHECK(nn::max_abs_diff(again.matrix.bits, data.matrix.bits) == 0.0);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("feature csv rejects malformed headers and cells") {
    const std::string path = temp_path("bad.csv");
    write_text_file(path, "id,a,label\nx,1,0\n");
    CHECK_THROWS_AS(load_feature_csv(path), DataError);
    write_text_file(path, "sha256,a,label\nx,2,0\n");
    CHECK_THROWS_AS(load_feature_csv(path), DataError);
    write_text_file(path, "sha256,a,label\nx,1,0\nx,0,1\n");
    CHECK_THROWS_AS(load_feature_csv(path), DataError);
    std::remove(path.c_str());
}
