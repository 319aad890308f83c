#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "mercat/embedding.hpp"

namespace mercat {

/// Principal-component projection fit on a corpus of embeddings.
///
/// `components` is row-major target_dim x input_dim with orthonormal rows,
/// ordered by non-increasing explained variance (n-1 denominator). Each row's
/// largest-magnitude coordinate is positive, which fixes the sign ambiguity of
/// the eigendecomposition. Rank-deficient inputs still yield a full
/// orthonormal set; the excess directions report zero variance.
struct PcaModel {
    std::size_t input_dim = 0;
    std::size_t target_dim = 0;
    std::vector<double> mean;
    std::vector<double> components;
    std::vector<double> explained_variance;

    std::span<const double> component(std::size_t k) const noexcept {
        return {components.data() + k * input_dim, input_dim};
    }
};

/// Eigendecomposition of the sample covariance. Needs more samples than
/// target_dim; target_dim may equal the input dim (a pure rotation).
PcaModel pca_fit(std::span<const Embedding> samples, std::size_t target_dim);
PcaModel pca_fit(const EmbeddingTable& table, std::size_t target_dim);

/// components · (e - mean), L2-normalized when `renormalize` is set.
Embedding pca_transform(const PcaModel& model, const Embedding& e, bool renormalize = true);

/// Inverse of the unnormalized transform: mean + componentsᵀ · z.
Embedding pca_inverse(const PcaModel& model, const Embedding& z);

void save_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca(const std::filesystem::path& path);

}  // namespace mercat
