#pragma once

// Loss functions on a batch of embeddings sharing one class-weight matrix:
//
//   Gamma_b   = sum_{j != y_b} exp((cos_j - cos_y + lambda0) / omega)
//   NS'       = mean_b log(1 + Gamma_b)
//   IV        = mean_b (Gamma_b / (1 + Gamma_b))^tau * log(1 + Gamma_b)
//   IC        = -mean_c (1 / P_c) log sum_{i != j in c} exp(-t ||x_i - x_j||^2)
//   CE        = mean_b -log softmax(cos / omega)[y_b]
//
// Raw embeddings are normalized before evaluation. Weight rows are used as
// given (cos_j = w_j . u); keeping them on the sphere is the optimizer's job.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <cctype>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/geometry.hpp"

namespace xmodal {

struct HyperParams {
    double lambda0 = 0.35;
    double omega = 1.0 / 30.0;
    double tau = 0.1;
    double t_rbf = 2.0;
    bool detach_weight = false;

    void validate() const {
        if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) throw BadConfig("lambda0 must be >= 0");
        if (!(omega > 0.0) || !std::isfinite(omega)) throw BadConfig("omega must be > 0");
        if (!(tau >= 0.0) || !std::isfinite(tau)) throw BadConfig("tau must be >= 0");
        if (!(t_rbf > 0.0) || !std::isfinite(t_rbf)) throw BadConfig("t_rbf must be > 0");
    }
};

enum class Loss : std::uint8_t { CE = 1, IV = 2, IC = 4, NS = 8 };

/// Set of enabled loss components. IV and NS' are mutually exclusive.
class LossSet {
public:
    constexpr LossSet() = default;
    constexpr LossSet(std::initializer_list<Loss> ls) {
        for (Loss l : ls) bits_ |= static_cast<std::uint8_t>(l);
    }

    constexpr bool has(Loss l) const { return (bits_ & static_cast<std::uint8_t>(l)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr LossSet with(Loss l) const {
        LossSet s = *this;
        s.bits_ |= static_cast<std::uint8_t>(l);
        return s;
    }
    constexpr bool operator==(const LossSet&) const = default;

    void validate() const {
        if (empty()) throw ConflictingFlags("at least one loss component must be enabled");
        if (has(Loss::IV) && has(Loss::NS)) {
            throw ConflictingFlags("IV and NS' cannot be enabled together");
        }
    }

    /// Parses "ce,iv,ic" or "ce+iv+ic". Component names: ce, iv, ic, ns.
    static LossSet parse(std::string_view text) {
        LossSet s;
        std::string tok;
        auto flush = [&] {
            if (tok.empty()) return;
            if (tok == "ce") s = s.with(Loss::CE);
            else if (tok == "iv") s = s.with(Loss::IV);
            else if (tok == "ic") s = s.with(Loss::IC);
            else if (tok == "ns" || tok == "ns'" || tok == "nsp") s = s.with(Loss::NS);
            else throw BadConfig("unknown loss component '" + tok + "'");
            tok.clear();
        };
        for (char c : text) {
            if (c == ',' || c == '+' || c == ' ') flush();
            else tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
        flush();
        if (s.empty()) throw BadConfig("empty loss set '" + std::string(text) + "'");
        return s;
    }

    std::string to_string() const {
        std::string out;
        auto add = [&](Loss l, const char* name) {
            if (!has(l)) return;
            if (!out.empty()) out += '+';
            out += name;
        };
        add(Loss::CE, "ce");
        add(Loss::IV, "iv");
        add(Loss::NS, "ns");
        add(Loss::IC, "ic");
        return out;
    }

private:
    std::uint8_t bits_ = 0;
};

/// One weight vector per class (rows), shared by every modality.
struct ClassWeightMatrix {
    Mat rows;  // N x d

    static ClassWeightMatrix normalized(const Mat& raw) {
        ClassWeightMatrix w{raw};
        for (Eigen::Index j = 0; j < raw.rows(); ++j) w.rows.row(j) = normalize(raw.row(j).transpose());
        return w;
    }

    int num_classes() const { return static_cast<int>(rows.rows()); }
    int dim() const { return static_cast<int>(rows.cols()); }

    bool is_unit(double tol = 1e-9) const {
        for (Eigen::Index j = 0; j < rows.rows(); ++j) {
            if (std::abs(rows.row(j).norm() - 1.0) > tol) return false;
        }
        return true;
    }
};

/// Embeddings as rows, with per-row class label and modality id.
struct LabeledEmbeddings {
    Mat embeddings;  // B x d
    std::vector<int> labels;
    std::vector<int> modalities;

    int size() const { return static_cast<int>(labels.size()); }
    int dim() const { return static_cast<int>(embeddings.cols()); }
};

struct LossBreakdown {
    double ns_prime = 0.0;
    double iv = 0.0;
    double ic = 0.0;
    double ce = 0.0;
    double total = 0.0;
    std::vector<double> per_instance_weight;
    std::vector<double> per_instance_gamma;
    int skipped_ic_classes = 0;
    /// Additive pieces of total: one per enabled (component, row) and one per
    /// contributing IC class, already scaled by their averaging factors.
    std::vector<double> terms;
};

namespace detail {

inline void check_embeddings(const LabeledEmbeddings& e) {
    const auto b = static_cast<std::size_t>(e.embeddings.rows());
    if (b == 0) throw BadArgs("empty batch");
    if (e.labels.size() != b || e.modalities.size() != b) {
        throw DimensionMismatch("embeddings, labels and modality ids differ in length");
    }
    for (std::size_t i = 0; i < b; ++i) {
        if (e.labels[i] < 0) throw InvalidLabel("negative label at row " + std::to_string(i));
        if (e.modalities[i] < 0) throw BadArgs("negative modality id at row " + std::to_string(i));
    }
}

inline void check_inputs(const LabeledEmbeddings& e, const ClassWeightMatrix& w) {
    check_embeddings(e);
    if (w.num_classes() < 2) throw BadArgs("class-weight matrix needs at least 2 rows");
    if (w.dim() != e.dim()) {
        throw DimensionMismatch("embedding dim " + std::to_string(e.dim()) + " vs weight dim " +
                                std::to_string(w.dim()));
    }
    for (std::size_t i = 0; i < e.labels.size(); ++i) {
        if (e.labels[i] >= w.num_classes()) {
            throw InvalidLabel("label " + std::to_string(e.labels[i]) + " at row " +
                               std::to_string(i) + " >= N=" + std::to_string(w.num_classes()));
        }
    }
}

inline Mat normalized_rows(const Mat& raw) {
    Mat u(raw.rows(), raw.cols());
    for (Eigen::Index b = 0; b < raw.rows(); ++b) u.row(b) = normalize(raw.row(b).transpose());
    return u;
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Per-instance quantities of the margin softmax for one unit embedding.
struct MarginTerms {
    double log_gamma = 0.0;   // log Gamma
    double log1p_gamma = 0.0; // log(1 + Gamma) = logsumexp(0, s_1..s_{N-1})
    Vec prob;                 // d log(1+Gamma) / d s_j; prob[y] = 0
};

inline MarginTerms margin_terms(const Vec& u, int label, const ClassWeightMatrix& w,
                                const HyperParams& hp) {
    const Vec cos = w.rows * u;
    const int n = w.num_classes();
    Vec s(n);
    double smax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
        if (j == label) continue;
        s[j] = (cos[j] - cos[label] + hp.lambda0) / hp.omega;
        smax = std::max(smax, s[j]);
    }
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
        if (j != label) acc += std::exp(s[j] - smax);
    }
    MarginTerms t;
    t.log_gamma = smax + std::log(acc);
    t.log1p_gamma = softplus(t.log_gamma);
    t.prob = Vec::Zero(n);
    for (int j = 0; j < n; ++j) {
        if (j != label) t.prob[j] = std::exp(s[j] - t.log1p_gamma);
    }
    return t;
}

/// Gamma / (1 + Gamma) = 1 - exp(-log(1+Gamma)).
inline double hardness(double log1p_gamma) { return -std::expm1(-log1p_gamma); }

struct IcTerms {
    double value = 0.0;
    int contributing = 0;
    int skipped = 0;
    std::map<int, std::vector<int>> members;  // class -> rows with >= 2 members
};

inline IcTerms ic_groups(const LabeledEmbeddings& e) {
    std::map<int, std::vector<int>> by_class;
    for (int b = 0; b < e.size(); ++b) by_class[e.labels[b]].push_back(b);
    IcTerms t;
    for (auto& [c, rows] : by_class) {
        if (rows.size() < 2) {
            ++t.skipped;
        } else {
            t.members.emplace(c, std::move(rows));
        }
    }
    t.contributing = static_cast<int>(t.members.size());
    if (t.contributing == 0) throw NoValidClass("no class has two or more instances in the batch");
    return t;
}

}  // namespace detail

/// Gamma_b for every row of the batch.
inline std::vector<double> compute_gamma(const LabeledEmbeddings& e, const ClassWeightMatrix& w,
                                         const HyperParams& hp) {
    detail::check_inputs(e, w);
    const Mat u = detail::normalized_rows(e.embeddings);
    std::vector<double> out(e.size());
    for (int b = 0; b < e.size(); ++b) {
        out[b] = std::exp(detail::margin_terms(u.row(b).transpose(), e.labels[b], w, hp).log_gamma);
    }
    return out;
}

inline double loss_ns_prime(const LabeledEmbeddings& e, const ClassWeightMatrix& w,
                            const HyperParams& hp) {
    detail::check_inputs(e, w);
    const Mat u = detail::normalized_rows(e.embeddings);
    double sum = 0.0;
    for (int b = 0; b < e.size(); ++b) {
        sum += detail::margin_terms(u.row(b).transpose(), e.labels[b], w, hp).log1p_gamma;
    }
    return sum / e.size();
}

struct IvResult {
    double value = 0.0;
    std::vector<double> weights;  // (Gamma / (1 + Gamma))^tau per row
};

inline IvResult loss_iv(const LabeledEmbeddings& e, const ClassWeightMatrix& w,
                        const HyperParams& hp) {
    detail::check_inputs(e, w);
    const Mat u = detail::normalized_rows(e.embeddings);
    IvResult r;
    r.weights.resize(e.size());
    double sum = 0.0;
    for (int b = 0; b < e.size(); ++b) {
        const auto t = detail::margin_terms(u.row(b).transpose(), e.labels[b], w, hp);
        r.weights[b] = std::pow(detail::hardness(t.log1p_gamma), hp.tau);
        sum += r.weights[b] * t.log1p_gamma;
    }
    r.value = sum / e.size();
    return r;
}

struct IcResult {
    double value = 0.0;
    int skipped_classes = 0;
};

/// Intra-class RBF loss. Classes with a single in-batch instance are skipped
/// and counted; throws NoValidClass if nothing contributes.
namespace detail {

/// -(1/P_c) log sum_{i != j} exp(-t ||u_i - u_j||^2) for one class.
inline double ic_class_term(const Mat& u, const std::vector<int>& rows, const HyperParams& hp) {
    // Exponents lie in [-4t, 0]; shift by the largest for a stable log-sum.
    std::vector<double> expo;
    expo.reserve(rows.size() * (rows.size() - 1));
    for (int i : rows) {
        for (int j : rows) {
            if (i == j) continue;
            expo.push_back(-hp.t_rbf * (u.row(i) - u.row(j)).squaredNorm());
        }
    }
    const double m = *std::max_element(expo.begin(), expo.end());
    double acc = 0.0;
    for (double x : expo) acc += std::exp(x - m);
    return -(m + std::log(acc)) / static_cast<double>(rows.size());
}

/// -log softmax_y of the logits cos / omega.
inline double ce_row_term(const Vec& u, int y, const ClassWeightMatrix& w, const HyperParams& hp) {
    // softplus(logsumexp_{j != y}(z_j - z_y)); exact even when the target
    // logit dominates.
    const Vec z = (w.rows * u) / hp.omega;
    if (z.size() == 1) return 0.0;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.size(); ++j)
        if (j != y) m = std::max(m, z[j] - z[y]);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j)
        if (j != y) acc += std::exp(z[j] - z[y] - m);
    return softplus(m + std::log(acc));
}

}  // namespace detail

/// Intra-class RBF loss. Classes with a single in-batch instance are skipped
/// and counted; throws NoValidClass if nothing contributes.
inline IcResult loss_ic_detailed(const LabeledEmbeddings& e, const HyperParams& hp) {
    detail::check_embeddings(e);
    const Mat u = detail::normalized_rows(e.embeddings);
    auto groups = detail::ic_groups(e);
    double sum = 0.0;
    for (const auto& [c, rows] : groups.members) sum += detail::ic_class_term(u, rows, hp);
    return {sum / groups.contributing, groups.skipped};
}

inline double loss_ic(const LabeledEmbeddings& e, const HyperParams& hp) {
    return loss_ic_detailed(e, hp).value;
}

/// Cosine-logit cross entropy with logits cos_j / omega and no margin.
inline double loss_ce(const LabeledEmbeddings& e, const ClassWeightMatrix& w,
                      const HyperParams& hp) {
    detail::check_inputs(e, w);
    const Mat u = detail::normalized_rows(e.embeddings);
    double sum = 0.0;
    for (int b = 0; b < e.size(); ++b) sum += detail::ce_row_term(u.row(b).transpose(), e.labels[b], w, hp);
    return sum / e.size();
}

/// Evaluates the enabled components; total is their sum.
///
/// `frozen_iv_weights`, when non-empty, replaces the per-instance IV weights
/// by constants. This is the surrogate objective whose gradient the
/// detach_weight mode computes.
inline LossBreakdown loss_total(const LabeledEmbeddings& e, const ClassWeightMatrix& w,
                                const HyperParams& hp, LossSet enabled,
                                std::span<const double> frozen_iv_weights = {}) {
    enabled.validate();
    hp.validate();
    detail::check_inputs(e, w);
    if (!frozen_iv_weights.empty() && frozen_iv_weights.size() != e.labels.size()) {
        throw DimensionMismatch("frozen IV weights do not match the batch size");
    }
    LossBreakdown out;
    // Gamma and the weights are always reported for introspection.
    const Mat u = detail::normalized_rows(e.embeddings);
    out.per_instance_gamma.resize(e.size());
    out.per_instance_weight.resize(e.size());
    const double inv_b = 1.0 / e.size();
    double ns_sum = 0.0;
    double iv_sum = 0.0;
    double ce_sum = 0.0;
    for (int b = 0; b < e.size(); ++b) {
        const Vec ub = u.row(b).transpose();
        const auto t = detail::margin_terms(ub, e.labels[b], w, hp);
        out.per_instance_gamma[b] = std::exp(t.log_gamma);
        out.per_instance_weight[b] = std::pow(detail::hardness(t.log1p_gamma), hp.tau);
        ns_sum += t.log1p_gamma;
        const double weight =
            frozen_iv_weights.empty() ? out.per_instance_weight[b] : frozen_iv_weights[b];
        iv_sum += weight * t.log1p_gamma;
        if (enabled.has(Loss::NS)) out.terms.push_back(t.log1p_gamma * inv_b);
        if (enabled.has(Loss::IV)) out.terms.push_back(weight * t.log1p_gamma * inv_b);
        if (enabled.has(Loss::CE)) {
            const double ce = detail::ce_row_term(ub, e.labels[b], w, hp);
            ce_sum += ce;
            out.terms.push_back(ce * inv_b);
        }
    }
    if (enabled.has(Loss::NS)) out.ns_prime = ns_sum / e.size();
    if (enabled.has(Loss::IV)) out.iv = iv_sum / e.size();
    if (enabled.has(Loss::CE)) out.ce = ce_sum / e.size();
    if (enabled.has(Loss::IC)) {
        const auto groups = detail::ic_groups(e);
        double ic_sum = 0.0;
        for (const auto& [c, rows] : groups.members) {
            const double term = detail::ic_class_term(u, rows, hp);
            ic_sum += term;
            out.terms.push_back(term / groups.contributing);
        }
        out.ic = ic_sum / groups.contributing;
        out.skipped_ic_classes = groups.skipped;
    }
    out.total = out.ce + out.iv + out.ns_prime + out.ic;
    return out;
}

}  // namespace xmodal
