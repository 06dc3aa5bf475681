#pragma once

// Per-modality encoders into the shared d-dimensional sphere, plus the shared
// class-weight matrix.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "xmodal/geometry.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {

struct ModelConfig {
    int embed_dim = 16;
    int hidden_width = 0;  // 0: single affine layer
    int num_classes = 0;
    std::vector<int> input_dims;  // one per modality

    int num_modalities() const { return static_cast<int>(input_dims.size()); }

    void validate() const {
        if (embed_dim < 2) throw BadConfig("embed_dim must be >= 2");
        if (hidden_width < 0) throw BadConfig("hidden_width must be >= 0");
        if (num_classes < 2) throw BadConfig("num_classes must be >= 2");
        if (input_dims.empty()) throw BadConfig("need at least one modality");
        for (int d : input_dims) {
            if (d < 1) throw BadConfig("input dims must be positive");
        }
    }
};

/// Affine map, optionally preceded by one tanh hidden layer.
struct Encoder {
    Mat hidden_w;  // h x d_m, empty for the linear encoder
    Vec hidden_b;  // h
    Mat out_w;     // d x (h or d_m)
    Vec out_b;     // d

    bool has_hidden() const { return hidden_w.size() > 0; }
    int input_dim() const {
        return static_cast<int>(has_hidden() ? hidden_w.cols() : out_w.cols());
    }

    Vec apply(const Vec& x) const {
        if (has_hidden()) {
            const Vec a = (hidden_w * x + hidden_b).array().tanh().matrix();
            return out_w * a + out_b;
        }
        return out_w * x + out_b;
    }

    /// Zero-filled encoder of the same shape (gradient accumulator).
    Encoder zeros_like() const {
        return {Mat::Zero(hidden_w.rows(), hidden_w.cols()), Vec::Zero(hidden_b.size()),
                Mat::Zero(out_w.rows(), out_w.cols()), Vec::Zero(out_b.size())};
    }
};

struct ModelParams {
    ModelConfig config;
    std::vector<Encoder> encoders;
    ClassWeightMatrix weights;

    bool operator==(const ModelParams& o) const;
};

struct RawSample {
    Vec features;
    int label = 0;
    int modality = 0;
};

struct RawBatch {
    std::vector<RawSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

inline bool operator==(const Encoder& a, const Encoder& b) {
    auto same = [](const auto& x, const auto& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.hidden_w, b.hidden_w) && same(a.hidden_b, b.hidden_b) &&
           same(a.out_w, b.out_w) && same(a.out_b, b.out_b);
}

inline bool ModelParams::operator==(const ModelParams& o) const {
    return config.embed_dim == o.config.embed_dim && config.hidden_width == o.config.hidden_width &&
           config.num_classes == o.config.num_classes && config.input_dims == o.config.input_dims &&
           encoders == o.encoders && weights.rows.rows() == o.weights.rows.rows() &&
           weights.rows.cols() == o.weights.rows.cols() && weights.rows == o.weights.rows;
}

/// Encoder entries ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); weight rows are
/// isotropic normal draws projected to the sphere.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto uniform_fill = [&](Eigen::Index rows, Eigen::Index cols, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Mat m(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
        return m;
    };

    ModelParams p;
    p.config = cfg;
    for (int dm : cfg.input_dims) {
        Encoder enc;
        int fan_in = dm;
        if (cfg.hidden_width > 0) {
            enc.hidden_w = uniform_fill(cfg.hidden_width, dm, dm);
            enc.hidden_b = uniform_fill(cfg.hidden_width, 1, dm).col(0);
            fan_in = cfg.hidden_width;
        } else {
            enc.hidden_w = Mat(0, 0);
            enc.hidden_b = Vec(0);
        }
        enc.out_w = uniform_fill(cfg.embed_dim, fan_in, fan_in);
        enc.out_b = uniform_fill(cfg.embed_dim, 1, fan_in).col(0);
        p.encoders.push_back(std::move(enc));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat w(cfg.num_classes, cfg.embed_dim);
    for (Eigen::Index j = 0; j < w.rows(); ++j)
        for (Eigen::Index k = 0; k < w.cols(); ++k) w(j, k) = normal(rng);
    p.weights = ClassWeightMatrix::normalized(w);
    return p;
}

namespace detail {

inline void check_batch(const ModelParams& params, const RawBatch& batch) {
    if (batch.size() == 0) throw BadArgs("empty batch");
    const int m = static_cast<int>(params.encoders.size());
    for (int b = 0; b < batch.size(); ++b) {
        const auto& s = batch.samples[b];
        if (s.modality < 0 || s.modality >= m) {
            throw BadArgs("modality id " + std::to_string(s.modality) + " out of range at row " +
                          std::to_string(b));
        }
        if (s.features.size() != params.encoders[s.modality].input_dim()) {
            throw DimensionMismatch("row " + std::to_string(b) + " has " +
                                    std::to_string(s.features.size()) + " features, encoder " +
                                    std::to_string(s.modality) + " expects " +
                                    std::to_string(params.encoders[s.modality].input_dim()));
        }
    }
}

/// Encoder outputs before normalization, one row per sample.
inline LabeledEmbeddings encode_raw(const ModelParams& params, const RawBatch& batch) {
    check_batch(params, batch);
    LabeledEmbeddings e;
    e.embeddings.resize(batch.size(), params.config.embed_dim);
    e.labels.reserve(batch.size());
    e.modalities.reserve(batch.size());
    for (int b = 0; b < batch.size(); ++b) {
        const auto& s = batch.samples[b];
        e.embeddings.row(b) = params.encoders[s.modality].apply(s.features).transpose();
        e.labels.push_back(s.label);
        e.modalities.push_back(s.modality);
    }
    return e;
}

}  // namespace detail

/// Normalized embeddings for every sample. NearZeroNorm if an encoder output
/// collapses.
inline LabeledEmbeddings forward(const ModelParams& params, const RawBatch& batch) {
    auto e = detail::encode_raw(params, batch);
    e.embeddings = detail::normalized_rows(e.embeddings);
    return e;
}

/// Flat views over every parameter array, in a fixed order: per encoder
/// hidden_w, hidden_b, out_w, out_b; then the weight matrix. Works on const
/// and mutable storage alike.
template <class Encoders, class Weights>
auto parameter_blocks(Encoders& encoders, Weights& weights) {
    using T = std::remove_pointer_t<decltype(weights.data())>;
    std::vector<std::span<T>> out;
    auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
    for (auto& enc : encoders) {
        add(enc.hidden_w);
        add(enc.hidden_b);
        add(enc.out_w);
        add(enc.out_b);
    }
    add(weights);
    return out;
}

inline auto parameter_blocks(ModelParams& p) { return parameter_blocks(p.encoders, p.weights.rows); }
inline auto parameter_blocks(const ModelParams& p) { return parameter_blocks(p.encoders, p.weights.rows); }

inline std::size_t parameter_count(const ModelParams& p) {
    auto n = static_cast<std::size_t>(p.weights.rows.size());
    for (const auto& e : p.encoders) {
        n += static_cast<std::size_t>(e.hidden_w.size() + e.hidden_b.size() + e.out_w.size() +
                                      e.out_b.size());
    }
    return n;
}

}  // namespace xmodal
