#include "mercat/compression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "mercat/binary_io.hpp"
#include "mercat/error.hpp"

namespace mercat {

namespace {

PcaModel fit_matrix(const Eigen::MatrixXd& x, std::size_t target_dim) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto dim = static_cast<std::size_t>(x.cols());
    if (target_dim < 1) throw ConfigError("pca target_dim must be positive");
    if (n <= target_dim)
        throw ConfigError("pca_fit needs more samples (" + std::to_string(n) + ") than target_dim (" +
                          std::to_string(target_dim) + ")");
    if (target_dim > dim)
        throw ConfigError("pca target_dim exceeds input dimension " + std::to_string(dim));

    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("pca eigendecomposition failed");
    const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
    const Eigen::MatrixXd& vectors = solver.eigenvectors();

    const double top = std::max(values(values.size() - 1), 0.0);
    const double floor = 1e-12 * std::max(top, 1.0);

    PcaModel m;
    m.input_dim = dim;
    m.target_dim = target_dim;
    m.mean.assign(mean.data(), mean.data() + dim);
    m.components.resize(target_dim * dim);
    m.explained_variance.resize(target_dim);
    for (std::size_t k = 0; k < target_dim; ++k) {
        const auto col = static_cast<Eigen::Index>(dim - 1 - k);
        const double var = values(col);
        m.explained_variance[k] = var > floor ? var : 0.0;

        Eigen::VectorXd v = vectors.col(col);
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < v.size(); ++i)
            if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
        if (v(arg) < 0) v = -v;
        std::copy(v.data(), v.data() + dim, m.components.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
    return m;
}

}  // namespace

PcaModel pca_fit(std::span<const Embedding> samples, std::size_t target_dim) {
    if (samples.empty()) throw ConfigError("pca_fit needs samples");
    const std::size_t dim = samples.front().dim();
    Eigen::MatrixXd x(samples.size(), dim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].dim() != dim) throw ShapeError("pca_fit: samples of unequal dimension");
        for (std::size_t c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = samples[i][c];
    }
    return fit_matrix(x, target_dim);
}

PcaModel pca_fit(const EmbeddingTable& table, std::size_t target_dim) {
    Eigen::MatrixXd x(table.count(), table.dim);
    for (std::size_t i = 0; i < table.count(); ++i) {
        const auto row = table.row(i);
        for (std::size_t c = 0; c < table.dim; ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    }
    return fit_matrix(x, target_dim);
}

Embedding pca_transform(const PcaModel& model, const Embedding& e, bool renormalize) {
    if (e.dim() != model.input_dim)
        throw ShapeError("pca_transform: expected dim " + std::to_string(model.input_dim) + ", got " +
                         std::to_string(e.dim()));
    std::vector<double> centered(model.input_dim);
    for (std::size_t c = 0; c < model.input_dim; ++c) centered[c] = e[c] - model.mean[c];
    std::vector<double> z(model.target_dim);
    for (std::size_t k = 0; k < model.target_dim; ++k) z[k] = dot(model.component(k), centered);
    Embedding out(std::move(z));
    return renormalize ? l2_normalize(out) : out;
}

Embedding pca_inverse(const PcaModel& model, const Embedding& z) {
    if (z.dim() != model.target_dim) throw ShapeError("pca_inverse: dimension mismatch");
    std::vector<double> x(model.mean);
    for (std::size_t k = 0; k < model.target_dim; ++k) {
        const auto comp = model.component(k);
        for (std::size_t c = 0; c < model.input_dim; ++c) x[c] += z[k] * comp[c];
    }
    return Embedding(std::move(x));
}

// MPCA file: "MPCA" u8(version) u32(input_dim) u32(target_dim)
//            f32 mean[input_dim] f32 components[target_dim*input_dim]
//            f32 variance[target_dim]

void save_pca(const std::filesystem::path& path, const PcaModel& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    io::write_magic(out, "MPCA");
    io::write_uint<std::uint8_t>(out, 1);
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(m.input_dim));
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(m.target_dim));
    io::write_f32_array<double>(out, m.mean);
    io::write_f32_array<double>(out, m.components);
    io::write_f32_array<double>(out, m.explained_variance);
}

PcaModel load_pca(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open PCA model: " + path.string());
    io::expect_magic(in, "MPCA");
    if (io::read_uint<std::uint8_t>(in) != 1) throw FormatError("unsupported MPCA version");
    PcaModel m;
    m.input_dim = io::read_uint<std::uint32_t>(in);
    m.target_dim = io::read_uint<std::uint32_t>(in);
    auto read_vec = [&in](std::size_t n) {
        std::vector<float> f(n);
        io::read_f32_array(in, f);
        return std::vector<double>(f.begin(), f.end());
    };
    m.mean = read_vec(m.input_dim);
    m.components = read_vec(m.target_dim * m.input_dim);
    m.explained_variance = read_vec(m.target_dim);
    return m;
}

}  // namespace mercat
