#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mercat/compression.hpp"
#include "mercat/error.hpp"
#include "mercat/rng.hpp"

using namespace mercat;

namespace {

std::vector<Embedding> random_points(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<Embedding> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = rng.uniform(-1, 1) * static_cast<double>(j + 1);
        out.emplace_back(v);
    }
    return out;
}

}  // namespace

TEST_CASE("collinear points") {
    const std::vector<Embedding> pts{Embedding({1, 1}), Embedding({-1, -1}), Embedding({2, 2}), Embedding({-2, -2})};
    const auto m = pca_fit(pts, 1);
    CHECK(m.component(0)[0] == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(m.component(0)[1] == doctest::Approx(1 / std::sqrt(2.0)));
    // Sample covariance: squared norms 2+2+8+8 over n-1 = 3.
    CHECK(m.explained_variance[0] == doctest::Approx(20.0 / 3.0));
    CHECK(pca_transform(m, Embedding({2, 2}), false)[0] == doctest::Approx(2 * std::sqrt(2.0)));
    CHECK(pca_transform(m, Embedding({0, 0}), false)[0] == doctest::Approx(0.0));
}

TEST_CASE("pca basis properties") {
    Rng rng(17);
    const auto pts = random_points(rng, 200, 6);
    const auto m = pca_fit(pts, 6);
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = 0; b < 6; ++b) {
            double d = 0;
            for (std::size_t j = 0; j < 6; ++j) d += m.component(a)[j] * m.component(b)[j];
            CHECK(std::abs(d - (a == b ? 1.0 : 0.0)) < 1e-6);
        }
        if (a > 0) CHECK(m.explained_variance[a] <= m.explained_variance[a - 1]);
        // Largest-magnitude coordinate is positive.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < 6; ++j)
            if (std::abs(m.component(a)[j]) > std::abs(m.component(a)[arg])) arg = j;
        CHECK(m.component(a)[arg] > 0);
    }
    for (const auto& p : pts) {
        const auto back = pca_inverse(m, pca_transform(m, p, false));
        for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(back[j] - p[j]) < 1e-5);
    }
    // Explained variance equals the variance of each projected coordinate.
    for (std::size_t a = 0; a < 6; ++a) {
        double s = 0, ss = 0;
        for (const auto& p : pts) {
            const double z = pca_transform(m, p, false)[a];
            s += z;
            ss += z * z;
        }
        const double n = static_cast<double>(pts.size());
        CHECK(std::abs((ss - s * s / n) / (n - 1) - m.explained_variance[a]) < 1e-6);
    }
    const auto again = pca_fit(pts, 6);
    CHECK(again.components == m.components);
}

TEST_CASE("degenerate and invalid inputs") {
    const std::vector<Embedding> same(5, Embedding({0.3, 0.4, 0.5}));
    const auto m = pca_fit(same, 2);
    CHECK(m.explained_variance[0] == doctest::Approx(0.0));
    const auto z = pca_transform(m, same[0], true);
    CHECK(z.norm() == 0.0);

    const std::vector<Embedding> few{Embedding({1, 0, 0}), Embedding({0, 1, 0})};
    CHECK_THROWS_AS(pca_fit(few, 2), ConfigError);
    const auto ok = pca_fit(same, 1);
    CHECK_THROWS_AS(pca_transform(ok, Embedding({1, 2}), true), ShapeError);
}

TEST_CASE("identical inputs stay identical after projection") {
    Rng rng(3);
    const auto pts = random_points(rng, 50, 8);
    const auto m = pca_fit(pts, 3);
    CHECK(cosine(pca_transform(m, pts[4]), pca_transform(m, pts[4])) == doctest::Approx(1.0));
    CHECK(std::abs(pca_transform(m, pts[4]).norm() - 1.0) < 1e-12);
}

TEST_CASE("MPCA file round trip") {
    Rng rng(1);
    const auto m = pca_fit(random_points(rng, 40, 5), 3);
    const auto path = std::filesystem::temp_directory_path() / "mercat_test.mpca";
    save_pca(path, m);
    const auto back = load_pca(path);
    CHECK(back.input_dim == 5);
    CHECK(back.target_dim == 3);
    for (std::size_t i = 0; i < m.components.size(); ++i)
        CHECK(back.components[i] == static_cast<double>(static_cast<float>(m.components[i])));
    std::filesystem::remove(path);
}
