#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mercat/embedding.hpp"
#include "mercat/encoder.hpp"
#include "mercat/matrix.hpp"

namespace mercat {

/// A search query and the title of the item purchased in that session.
struct TrainingPair {
    std::string query_text;
    std::string title_text;
};

struct TrainingConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    double scale = 20.0;
    NestedDims nested = NestedDims::uniform({64, 32, 16, 8});
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate(std::size_t full_dim) const;
};

struct LossReport {
    double total = 0.0;
    std::vector<std::pair<std::size_t, double>> per_dim;
    std::size_t batch_index = 0;
    std::size_t epoch = 0;
};

struct MnrResult {
    double loss = 0.0;
    RowMatrix grad_q;
    RowMatrix grad_t;
};

/// Multiple-negatives ranking loss: softmax cross-entropy of each query
/// against every title in the batch, with the paired title as the target and
/// `scale * cosine` as logits. Returns exact gradients for both sides.
MnrResult mnr_loss(const RowMatrix& queries, const RowMatrix& titles, double scale);

struct MrlResult {
    double total = 0.0;
    std::vector<std::pair<std::size_t, double>> per_dim;
    RowMatrix grad_q;
    RowMatrix grad_t;
};

/// Weighted sum of mnr_loss over the leading d_k coordinates of each row
/// (prefixes are not renormalized; cosine handles the norm). Zero weights are
/// accepted here so ablations can switch levels off.
MrlResult mrl_loss(const RowMatrix& queries, const RowMatrix& titles, const NestedDims& nested,
                   double scale);

struct TrainingResult {
    EncoderModel model;
    std::vector<LossReport> log;
};

using StepCallback = std::function<void(const LossReport&)>;

/// Adam over W with in-batch negatives and nested objectives. Only the
/// columns of buckets active in a batch are read or written at each step
/// (lazy Adam: moments of inactive buckets are left untouched).
TrainingResult train(std::span<const TrainingPair> pairs, EncoderModel model,
                     const TrainingConfig& config, const StepCallback& on_step = {});

struct GradientCheckReport {
    std::size_t coordinates = 0;
    double max_relative_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Compares analytic dLoss/dW against central differences on sampled active
/// coordinates. Read-only with respect to the model.
GradientCheckReport gradient_check(const EncoderModel& model, std::span<const TrainingPair> batch,
                                   const TrainingConfig& config, double h = 1e-5,
                                   double tolerance = 1e-4, std::size_t samples = 64);

}  // namespace mercat
