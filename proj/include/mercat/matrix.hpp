#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mercat/embedding.hpp"

namespace mercat {

/// Row-major dense matrix of doubles; one row per batch element.
struct RowMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    RowMatrix() = default;
    RowMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    static RowMatrix from_embeddings(std::span<const Embedding> rows);

    std::span<double> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {data.data() + i * cols, cols};
    }
    double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }

    /// Copy of the leading `d` columns.
    RowMatrix prefix_columns(std::size_t d) const;
};

}  // namespace mercat
