#include "mercat/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <unordered_map>

#include "mercat/error.hpp"
#include "mercat/rng.hpp"
#include "mercat/text.hpp"

namespace mercat {

void TrainingConfig::validate(std::size_t full_dim) const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 for in-batch negatives");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    nested.validate(full_dim);
}

MnrResult mnr_loss(const RowMatrix& queries, const RowMatrix& titles, double scale) {
    const std::size_t batch = queries.rows;
    if (batch < 2) throw ConfigError("mnr_loss needs at least 2 pairs per batch");
    if (titles.rows != batch || titles.cols != queries.cols)
        throw ShapeError("mnr_loss: query and title batches differ in shape");
    const std::size_t dim = queries.cols;

    // Unit rows and inverse norms; zero rows stay zero with inverse norm 0 so
    // their cosines and gradients vanish.
    auto unitize = [dim](const RowMatrix& m, RowMatrix& unit, std::vector<double>& inv) {
        unit = RowMatrix(m.rows, dim);
        inv.assign(m.rows, 0.0);
        for (std::size_t i = 0; i < m.rows; ++i) {
            const double n = std::sqrt(dot(m.row(i), m.row(i)));
            if (n <= kZeroNorm) continue;
            inv[i] = 1.0 / n;
            for (std::size_t c = 0; c < dim; ++c) unit(i, c) = m(i, c) * inv[i];
        }
    };
    RowMatrix qu, tu;
    std::vector<double> q_inv, t_inv;
    unitize(queries, qu, q_inv);
    unitize(titles, tu, t_inv);

    RowMatrix cos(batch, batch);
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < batch; ++j) cos(i, j) = dot(qu.row(i), tu.row(j));

    // g(i, j) = dL/dS_ij = (softmax_ij - [i == j]) / B, with S = scale * cos.
    RowMatrix g(batch, batch);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < batch; ++j) row_max = std::max(row_max, scale * cos(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < batch; ++j) z += std::exp(scale * cos(i, j) - row_max);
        loss += std::log(z) + row_max - scale * cos(i, i);
        for (std::size_t j = 0; j < batch; ++j) {
            const double p = std::exp(scale * cos(i, j) - row_max) / z;
            g(i, j) = (p - (i == j ? 1.0 : 0.0)) / static_cast<double>(batch);
        }
    }
    loss /= static_cast<double>(batch);

    // d cos(q, t) / dq = (t_hat - cos * q_hat) / |q|, symmetric for t.
    MnrResult out{loss, RowMatrix(batch, dim), RowMatrix(batch, dim)};
    for (std::size_t i = 0; i < batch; ++i) {
        auto gq = out.grad_q.row(i);
        for (std::size_t j = 0; j < batch; ++j) {
            const double gij = scale * g(i, j);
            if (gij == 0.0) continue;
            const double c = cos(i, j);
            auto gt = out.grad_t.row(j);
            for (std::size_t k = 0; k < dim; ++k) {
                gq[k] += gij * (tu(j, k) - c * qu(i, k)) * q_inv[i];
                gt[k] += gij * (qu(i, k) - c * tu(j, k)) * t_inv[j];
            }
        }
    }
    return out;
}

MrlResult mrl_loss(const RowMatrix& queries, const RowMatrix& titles, const NestedDims& nested,
                   double scale) {
    if (queries.cols != titles.cols) throw ShapeError("mrl_loss: query/title dims differ");
    if (nested.dims.empty() || nested.dims.front() != queries.cols)
        throw ShapeError("mrl_loss: first nested dim must equal the embedding dim " + std::to_string(queries.cols));
    nested.validate(queries.cols, /*allow_zero_weights=*/true);

    MrlResult out;
    out.grad_q = RowMatrix(queries.rows, queries.cols);
    out.grad_t = RowMatrix(titles.rows, titles.cols);
    for (std::size_t k = 0; k < nested.dims.size(); ++k) {
        const std::size_t d = nested.dims[k];
        const double w = nested.weights[k];
        const bool full = d == queries.cols;
        const MnrResult level = full ? mnr_loss(queries, titles, scale)
                                     : mnr_loss(queries.prefix_columns(d), titles.prefix_columns(d), scale);
        out.per_dim.emplace_back(d, level.loss);
        out.total += w * level.loss;
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < queries.rows; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                out.grad_q(i, c) += w * level.grad_q(i, c);
                out.grad_t(i, c) += w * level.grad_t(i, c);
            }
        }
    }
    return out;
}

namespace {

struct Perturbation {
    std::uint32_t bucket;
    std::size_t row;
    double delta;
};

struct EncodedBatch {
    RowMatrix embeddings;          // normalized outputs, one row per text
    std::vector<double> inv_norm;  // 1/|W x|, 0 for degenerate outputs
};

EncodedBatch encode_features(const EncoderModel& model, std::span<const FeatureVector* const> feats,
                             const std::optional<Perturbation>& perturb) {
    const std::size_t dim = model.full_dim();
    EncodedBatch out{RowMatrix(feats.size(), dim), std::vector<double>(feats.size(), 0.0)};
    for (std::size_t i = 0; i < feats.size(); ++i) {
        auto y = out.embeddings.row(i);
        for (const auto& [b, xv] : *feats[i]) {
            const auto col = model.column(b);
            for (std::size_t r = 0; r < dim; ++r) y[r] += col[r] * xv;
            if (perturb && perturb->bucket == b) y[perturb->row] += perturb->delta * xv;
        }
        const double n = std::sqrt(dot(y, y));
        if (n <= kZeroNorm) {
            std::fill(y.begin(), y.end(), 0.0);
            continue;
        }
        out.inv_norm[i] = 1.0 / n;
        for (double& v : y) v *= out.inv_norm[i];
    }
    return out;
}

/// Sparse dLoss/dW: one full_dim column per active bucket, in first-seen order.
struct SparseGrad {
    std::vector<std::uint32_t> buckets;
    std::unordered_map<std::uint32_t, std::size_t> slot;
    std::vector<double> values;

    std::span<double> column(std::uint32_t b, std::size_t dim) {
        auto [it, inserted] = slot.try_emplace(b, buckets.size());
        if (inserted) {
            buckets.push_back(b);
            values.resize(values.size() + dim, 0.0);
        }
        return {values.data() + it->second * dim, dim};
    }
};

/// Pulls an embedding gradient back through normalization and W x into `grad`.
void backprop_rows(const EncodedBatch& enc, const RowMatrix& grad_e,
                   std::span<const FeatureVector* const> feats, std::size_t dim, SparseGrad& grad) {
    std::vector<double> dy(dim);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (enc.inv_norm[i] == 0.0) continue;
        const auto e = enc.embeddings.row(i);
        const auto ge = grad_e.row(i);
        const double proj = dot(e, ge);
        for (std::size_t r = 0; r < dim; ++r) dy[r] = (ge[r] - e[r] * proj) * enc.inv_norm[i];
        for (const auto& [b, xv] : *feats[i]) {
            auto col = grad.column(b, dim);
            for (std::size_t r = 0; r < dim; ++r) col[r] += dy[r] * xv;
        }
    }
}

struct BatchFeatures {
    std::vector<const FeatureVector*> queries;
    std::vector<const FeatureVector*> titles;
};

MrlResult batch_loss(const EncoderModel& model, const BatchFeatures& batch, const TrainingConfig& config,
                     const std::optional<Perturbation>& perturb, EncodedBatch* q_out = nullptr,
                     EncodedBatch* t_out = nullptr) {
    EncodedBatch q = encode_features(model, batch.queries, perturb);
    EncodedBatch t = encode_features(model, batch.titles, perturb);
    MrlResult r = mrl_loss(q.embeddings, t.embeddings, config.nested, config.scale);
    if (q_out) *q_out = std::move(q);
    if (t_out) *t_out = std::move(t);
    return r;
}

std::pair<MrlResult, SparseGrad> batch_loss_and_grad(const EncoderModel& model,
                                                     const BatchFeatures& batch,
                                                     const TrainingConfig& config) {
    EncodedBatch q, t;
    MrlResult r = batch_loss(model, batch, config, std::nullopt, &q, &t);
    SparseGrad grad;
    backprop_rows(q, r.grad_q, batch.queries, model.full_dim(), grad);
    backprop_rows(t, r.grad_t, batch.titles, model.full_dim(), grad);
    return {std::move(r), std::move(grad)};
}

struct FeaturizedPairs {
    std::vector<FeatureVector> queries;
    std::vector<FeatureVector> titles;
};

FeaturizedPairs featurize_pairs(std::span<const TrainingPair> pairs, const EncoderConfig& ec) {
    FeaturizedPairs f;
    f.queries.reserve(pairs.size());
    f.titles.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (text::trim(p.query_text).empty() || text::trim(p.title_text).empty())
            throw ValidationError("training pair with an empty query or title");
        f.queries.push_back(unit_features(featurize(p.query_text, Role::Query, ec)));
        f.titles.push_back(unit_features(featurize(p.title_text, Role::Passage, ec)));
    }
    return f;
}

class LazyAdam {
public:
    LazyAdam(const TrainingConfig& c, std::size_t dim) : c_(c), dim_(dim) {}

    void step(EncoderModel& model, const SparseGrad& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(c_.adam_beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(c_.adam_beta2, static_cast<double>(t_));
        for (std::size_t s = 0; s < grad.buckets.size(); ++s) {
            const std::uint32_t b = grad.buckets[s];
            auto [it, inserted] = slot_.try_emplace(b, slot_.size());
            if (inserted) {
                m_.resize(m_.size() + dim_, 0.0);
                v_.resize(v_.size() + dim_, 0.0);
            }
            double* m = m_.data() + it->second * dim_;
            double* v = v_.data() + it->second * dim_;
            const double* g = grad.values.data() + s * dim_;
            auto w = model.column(b);
            for (std::size_t r = 0; r < dim_; ++r) {
                m[r] = c_.adam_beta1 * m[r] + (1.0 - c_.adam_beta1) * g[r];
                v[r] = c_.adam_beta2 * v[r] + (1.0 - c_.adam_beta2) * g[r] * g[r];
                w[r] -= c_.learning_rate * (m[r] / bc1) / (std::sqrt(v[r] / bc2) + c_.adam_eps);
            }
        }
    }

private:
    const TrainingConfig& c_;
    std::size_t dim_;
    std::uint64_t t_ = 0;
    std::unordered_map<std::uint32_t, std::size_t> slot_;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace

TrainingResult train(std::span<const TrainingPair> pairs, EncoderModel model,
                     const TrainingConfig& config, const StepCallback& on_step) {
    config.validate(model.full_dim());
    if (pairs.size() < config.batch_size)
        throw ConfigError("need at least batch_size=" + std::to_string(config.batch_size) +
                          " pairs, got " + std::to_string(pairs.size()));

    const FeaturizedPairs feats = featurize_pairs(pairs, model.config());
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed);
    LazyAdam adam(config, model.full_dim());

    TrainingResult result{std::move(model), {}};
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            if (end - start < 2) continue;
            BatchFeatures batch;
            for (std::size_t i = start; i < end; ++i) {
                batch.queries.push_back(&feats.queries[order[i]]);
                batch.titles.push_back(&feats.titles[order[i]]);
            }
            auto [loss, grad] = batch_loss_and_grad(result.model, batch, config);
            adam.step(result.model, grad);
            LossReport report{loss.total, std::move(loss.per_dim), step++, epoch};
            if (on_step) on_step(report);
            result.log.push_back(std::move(report));
        }
    }
    return result;
}

GradientCheckReport gradient_check(const EncoderModel& model, std::span<const TrainingPair> batch,
                                   const TrainingConfig& config, double h, double tolerance,
                                   std::size_t samples) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw ConfigError("gradient_check: h must lie in [1e-7, 1e-3]");
    if (batch.size() < 2) throw ConfigError("gradient_check: batch needs at least 2 pairs");
    config.nested.validate(model.full_dim(), /*allow_zero_weights=*/true);

    const FeaturizedPairs feats = featurize_pairs(batch, model.config());
    BatchFeatures bf;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        bf.queries.push_back(&feats.queries[i]);
        bf.titles.push_back(&feats.titles[i]);
    }
    const SparseGrad grad = batch_loss_and_grad(model, bf, config).second;
    const std::size_t dim = model.full_dim();

    std::vector<std::pair<std::uint32_t, std::size_t>> coords;
    for (std::uint32_t b : grad.buckets)
        for (std::size_t r = 0; r < dim; ++r) coords.emplace_back(b, r);
    Rng rng(derive_seed(config.seed, "gradient-check"));
    rng.shuffle(std::span(coords));
    coords.resize(std::min(coords.size(), samples));

    auto loss_at = [&](std::uint32_t b, std::size_t r, double delta) {
        return batch_loss(model, bf, config, Perturbation{b, r, delta}).total;
    };

    GradientCheckReport report{coords.size(), 0.0, tolerance, true};
    for (const auto& [b, r] : coords) {
        const double analytic = grad.values[grad.slot.at(b) * dim + r];
        // Fourth-order central stencil at step h.
        const double numeric = (-loss_at(b, r, 2 * h) + 8 * loss_at(b, r, h) - 8 * loss_at(b, r, -h) +
                                loss_at(b, r, -2 * h)) /
                               (12 * h);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        report.max_relative_error = std::max(report.max_relative_error, rel);
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

}  // namespace mercat
