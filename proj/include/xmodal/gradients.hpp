#pragma once

// Hand-derived gradients of the joint loss with respect to raw embeddings,
// encoder parameters and the class-weight rows, plus a central
// finite-difference checker used as the oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

/// Gradient of a scalar loss with respect to raw (unnormalized) embedding rows
/// and the class-weight rows.
struct EmbeddingGradient {
    double value = 0.0;
    LossBreakdown breakdown;
    Mat d_embeddings;  // B x d
    Mat d_weights;     // N x d
};

struct GradientBundle {
    Mat d_weights;                    // N x d
    std::vector<Encoder> d_encoders;  // same shapes as ModelParams::encoders
    double value = 0.0;
    LossBreakdown breakdown;  // components at the linearization point

    /// Same block order as parameter_blocks(ModelParams&).
    auto blocks() { return parameter_blocks(d_encoders, d_weights); }
    auto blocks() const { return parameter_blocks(d_encoders, d_weights); }
};

namespace detail {

/// d(per-instance term)/d log(1+Gamma) for the IV term, with or without the
/// weight factor participating.
inline double iv_outer_derivative(double log1p_gamma, const HyperParams& hp) {
    const double w = hardness(log1p_gamma);
    const double weight = std::pow(w, hp.tau);
    if (hp.detach_weight || hp.tau == 0.0) return weight;
    // d/dL [w^tau L] = w^tau + tau w^tau e^{-L} (L / w); L / w -> 1 as L -> 0.
    const double ratio = w > 0.0 ? log1p_gamma / w : 1.0;
    return weight + hp.tau * weight * std::exp(-log1p_gamma) * ratio;
}

/// Gradients with respect to unit embedding rows u (before the normalization
/// Jacobian is applied).
inline void accumulate_unit_grads(const Mat& u, const std::vector<int>& labels,
                                  const std::vector<int>& modalities, const ClassWeightMatrix& w,
                                  const HyperParams& hp, LossSet enabled, Mat& du, Mat& dw) {
    const Eigen::Index batch = u.rows();
    const double inv_b = 1.0 / static_cast<double>(batch);

    if (enabled.has(Loss::NS) || enabled.has(Loss::IV)) {
        for (Eigen::Index b = 0; b < batch; ++b) {
            const Vec ub = u.row(b).transpose();
            const int y = labels[b];
            const auto t = margin_terms(ub, y, w, hp);
            const double outer =
                (enabled.has(Loss::IV) ? iv_outer_derivative(t.log1p_gamma, hp) : 1.0) * inv_b;
            for (int j = 0; j < w.num_classes(); ++j) {
                if (j == y) continue;
                const double g = outer * t.prob[j] / hp.omega;
                du.row(b) += g * (w.rows.row(j) - w.rows.row(y));
                dw.row(j) += g * ub.transpose();
                dw.row(y) -= g * ub.transpose();
            }
        }
    }

    if (enabled.has(Loss::CE)) {
        for (Eigen::Index b = 0; b < batch; ++b) {
            const Vec ub = u.row(b).transpose();
            const Vec z = (w.rows * ub) / hp.omega;
            Vec p = (z.array() - z.maxCoeff()).exp().matrix();
            p /= p.sum();
            p[labels[b]] -= 1.0;
            p *= inv_b / hp.omega;
            du.row(b) += (w.rows.transpose() * p).transpose();
            dw += p * ub.transpose();
        }
    }

    if (enabled.has(Loss::IC)) {
        LabeledEmbeddings view{u, labels, modalities};
        const auto groups = ic_groups(view);
        const double inv_c = 1.0 / groups.contributing;
        for (const auto& [c, rows] : groups.members) {
            const auto p = rows.size();
            Mat k = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b2 = 0; b2 < p; ++b2)
                    if (a != b2) {
                        k(a, b2) = -hp.t_rbf * (u.row(rows[a]) - u.row(rows[b2])).squaredNorm();
                        m = std::max(m, k(a, b2));
                    }
            double s = 0.0;
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b2 = 0; b2 < p; ++b2)
                    if (a != b2) {
                        k(a, b2) = std::exp(k(a, b2) - m);
                        s += k(a, b2);
                    }
            // Each unordered pair appears twice in the ordered-pair sum.
            const double scale = 4.0 * hp.t_rbf / (static_cast<double>(p) * s) * inv_c;
            for (std::size_t a = 0; a < p; ++a) {
                for (std::size_t b2 = 0; b2 < p; ++b2) {
                    if (a == b2) continue;
                    du.row(rows[a]) += scale * k(a, b2) * (u.row(rows[a]) - u.row(rows[b2]));
                }
            }
        }
    }
}

}  // namespace detail

/// Gradient of the enabled total loss with respect to raw embedding rows
/// (through the L2 normalization) and the weight rows as free parameters.
inline EmbeddingGradient grad_embeddings(const LabeledEmbeddings& raw, const ClassWeightMatrix& w,
                                         const HyperParams& hp, LossSet enabled) {
    EmbeddingGradient g;
    g.breakdown = loss_total(raw, w, hp, enabled);
    g.value = g.breakdown.total;
    const Mat u = detail::normalized_rows(raw.embeddings);
    Mat du = Mat::Zero(u.rows(), u.cols());
    g.d_weights = Mat::Zero(w.rows.rows(), w.rows.cols());
    detail::accumulate_unit_grads(u, raw.labels, raw.modalities, w, hp, enabled, du, g.d_weights);

    // d u / d z = (I - u u^T) / ||z||
    g.d_embeddings.resize(u.rows(), u.cols());
    for (Eigen::Index b = 0; b < u.rows(); ++b) {
        const double n = raw.embeddings.row(b).norm();
        const double radial = du.row(b).dot(u.row(b));
        g.d_embeddings.row(b) = (du.row(b) - radial * u.row(b)) / n;
    }
    return g;
}

/// Full backprop from the enabled loss into every model parameter.
inline GradientBundle grad_total(const ModelParams& params, const RawBatch& batch,
                                 const HyperParams& hp, LossSet enabled) {
    const auto raw = detail::encode_raw(params, batch);
    const auto eg = grad_embeddings(raw, params.weights, hp, enabled);

    GradientBundle out;
    out.value = eg.value;
    out.breakdown = eg.breakdown;
    out.d_weights = eg.d_weights;
    out.d_encoders.reserve(params.encoders.size());
    for (const auto& enc : params.encoders) out.d_encoders.push_back(enc.zeros_like());

    for (int b = 0; b < batch.size(); ++b) {
        const auto& s = batch.samples[b];
        const auto& enc = params.encoders[s.modality];
        auto& genc = out.d_encoders[s.modality];
        const Vec dz = eg.d_embeddings.row(b).transpose();
        if (enc.has_hidden()) {
            const Vec a = (enc.hidden_w * s.features + enc.hidden_b).array().tanh().matrix();
            genc.out_w += dz * a.transpose();
            genc.out_b += dz;
            const Vec dpre = ((enc.out_w.transpose() * dz).array() * (1.0 - a.array().square())).matrix();
            genc.hidden_w += dpre * s.features.transpose();
            genc.hidden_b += dpre;
        } else {
            genc.out_w += dz * s.features.transpose();
            genc.out_b += dz;
        }
    }
    return out;
}

struct FiniteDiffResult {
    double max_rel_err = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t coordinates = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares a supplied gradient against central differences of the enabled
/// total loss, coordinate by coordinate in parameter_blocks order.
inline FiniteDiffResult compare_with_finite_diff(const ModelParams& params, const RawBatch& batch,
                                                 const HyperParams& hp, LossSet enabled,
                                                 GradientBundle analytic, double h = 1e-5) {
    if (!(h > 0.0)) throw BadArgs("finite-difference step must be > 0");
    ModelParams probe = params;
    // With a detached weight the analytic gradient belongs to the objective
    // whose IV weights are constants fixed at the linearization point.
    std::vector<double> frozen;
    if (hp.detach_weight && enabled.has(Loss::IV)) {
        frozen = loss_total(detail::encode_raw(params, batch), params.weights, hp, enabled)
                     .per_instance_weight;
    }
    auto eval = [&] {
        auto out = loss_total(detail::encode_raw(probe, batch), probe.weights, hp, enabled, frozen);
        if (!std::isfinite(out.total)) throw NonFiniteLoss("loss probe evaluated to a non-finite value");
        return std::move(out.terms);
    };
    auto pblocks = parameter_blocks(probe);
    auto gblocks = analytic.blocks();
    if (pblocks.size() != gblocks.size()) throw DimensionMismatch("gradient bundle shape");

    FiniteDiffResult r;
    std::size_t coord = 0;
    for (std::size_t k = 0; k < pblocks.size(); ++k) {
        if (pblocks[k].size() != gblocks[k].size()) throw DimensionMismatch("gradient block shape");
        for (std::size_t i = 0; i < pblocks[k].size(); ++i, ++coord) {
            double& x = pblocks[k][i];
            const double saved = x;
            x = saved + h;
            const auto up = eval();
            x = saved - h;
            const auto down = eval();
            x = saved;
            // Central difference taken term by term.
            double diff = 0.0;
            for (std::size_t t = 0; t < up.size(); ++t) diff += up[t] - down[t];
            const double numeric = diff / (2.0 * h);
            const double err = relative_error(gblocks[k][i], numeric);
            if (coord == 0 || err > r.max_rel_err) {
                r.max_rel_err = err;
                r.worst_coordinate = coord;
                r.analytic_at_worst = gblocks[k][i];
                r.numeric_at_worst = numeric;
            }
        }
    }
    r.coordinates = coord;
    return r;
}

inline FiniteDiffResult finite_diff_check(const ModelParams& params, const RawBatch& batch,
                                          const HyperParams& hp, LossSet enabled,
                                          double h = 1e-5) {
    return compare_with_finite_diff(params, batch, hp, enabled, grad_total(params, batch, hp, enabled), h);
}

}  // namespace xmodal

namespace xmodal {

struct RandomProblemShape {
    int num_classes = 4;
    int num_modalities = 3;
    int batch = 12;
    int embed_dim = 6;
    int hidden_width = 0;
};

struct RandomProblem {
    ModelParams params;
    RawBatch batch;
};

/// Small random model and batch for gradient checking. Every class in the
/// batch gets at least two rows when batch >= 2 * num_classes; input dims are
/// embed_dim + modality index.
inline RandomProblem random_problem(const RandomProblemShape& shape, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.embed_dim = shape.embed_dim;
    cfg.hidden_width = shape.hidden_width;
    cfg.num_classes = shape.num_classes;
    for (int m = 0; m < shape.num_modalities; ++m) cfg.input_dims.push_back(shape.embed_dim + m);

    RandomProblem p;
    p.params = init_params(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int b = 0; b < shape.batch; ++b) {
        RawSample s;
        s.label = b % shape.num_classes;
        s.modality = (b / shape.num_classes) % shape.num_modalities;
        s.features = Vec(cfg.input_dims[s.modality]);
        for (auto& x : s.features) x = normal(rng);
        p.batch.samples.push_back(std::move(s));
    }
    return p;
}

}  // namespace xmodal
