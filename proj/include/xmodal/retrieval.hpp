#pragma once

// Cosine-ranked cross-modal retrieval: Average Precision, the M x M
// source -> target mAP matrix, and the margin-satisfaction diagnostic.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "xmodal/geometry.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/textio.hpp"

namespace xmodal {

/// Gallery indices by descending cosine with the query; ties keep ascending
/// gallery order.
inline std::vector<std::size_t> rank_gallery(const Vec& query, std::span<const Vec> gallery) {
    if (gallery.empty()) throw EmptyGallery("cannot rank an empty gallery");
    std::vector<double> sim(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) sim[i] = cosine(query, gallery[i]);
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    return order;
}

/// AP = (1/T) sum_{r=1..R} P_r * rel(r), with P_r the precision of the top r.
/// Returns 0 when T = 0.
inline double average_precision(std::span<const std::uint8_t> relevance, std::size_t top_r,
                                std::size_t total_relevant) {
    if (top_r > relevance.size()) {
        throw BadArgs("R=" + std::to_string(top_r) + " exceeds ranked list length " +
                      std::to_string(relevance.size()));
    }
    if (total_relevant == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top_r; ++r) {
        if (relevance[r]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(total_relevant);
}

struct QueryResult {
    int source = 0;
    int target = 0;
    int query_index = 0;  // row within the source modality
    int label = 0;
    double ap = 0.0;
};

struct RetrievalReport {
    Mat map_matrix;                  // M x M, rows = source, cols = target
    std::vector<int> gallery_sizes;  // per target modality
    std::size_t top_r = 0;           // 0: full gallery
    std::vector<QueryResult> per_query;  // filled when detail is requested

    double mean_map() const { return map_matrix.mean(); }
};

struct RetrievalOptions {
    std::size_t top_r = 0;
    bool detail = false;
};

/// Every source-modality embedding queries the full target-modality gallery.
/// The query itself is excluded when source == target; relevance means equal
/// class label; T counts relevant items within the top R.
inline RetrievalReport cross_modal_matrix(const LabeledEmbeddings& e, int num_modalities,
                                          const RetrievalOptions& opt = {}) {
    detail::check_embeddings(e);
    std::vector<std::vector<Vec>> vecs(num_modalities);
    std::vector<std::vector<int>> labels(num_modalities);
    for (int b = 0; b < e.size(); ++b) {
        const int m = e.modalities[b];
        if (m >= num_modalities) throw BadArgs("modality id " + std::to_string(m) + " out of range");
        vecs[m].push_back(normalize(e.embeddings.row(b).transpose()));
        labels[m].push_back(e.labels[b]);
    }
    for (int m = 0; m < num_modalities; ++m) {
        if (vecs[m].empty()) throw EmptyModality("modality " + std::to_string(m) + " has no test rows");
    }

    RetrievalReport rep;
    rep.top_r = opt.top_r;
    rep.map_matrix = Mat::Zero(num_modalities, num_modalities);
    for (int m = 0; m < num_modalities; ++m) rep.gallery_sizes.push_back(static_cast<int>(vecs[m].size()));

    for (int s = 0; s < num_modalities; ++s) {
        for (int t = 0; t < num_modalities; ++t) {
            double sum = 0.0;
            for (std::size_t q = 0; q < vecs[s].size(); ++q) {
                std::vector<Vec> gallery;
                std::vector<int> glabels;
                for (std::size_t g = 0; g < vecs[t].size(); ++g) {
                    if (s == t && g == q) continue;
                    gallery.push_back(vecs[t][g]);
                    glabels.push_back(labels[t][g]);
                }
                if (gallery.empty()) throw EmptyGallery("target modality has no items besides the query");
                const auto order = rank_gallery(vecs[s][q], gallery);
                const std::size_t r = opt.top_r == 0 ? order.size() : std::min(opt.top_r, order.size());
                std::vector<std::uint8_t> rel(order.size());
                std::size_t t_rel = 0;
                for (std::size_t k = 0; k < order.size(); ++k) {
                    rel[k] = glabels[order[k]] == labels[s][q] ? 1 : 0;
                    if (k < r) t_rel += rel[k];
                }
                const double ap = average_precision(rel, r, t_rel);
                sum += ap;
                if (opt.detail) {
                    rep.per_query.push_back({s, t, static_cast<int>(q), labels[s][q], ap});
                }
            }
            rep.map_matrix(s, t) = sum / static_cast<double>(vecs[s].size());
        }
    }
    return rep;
}

inline RetrievalReport cross_modal_matrix(const ModelParams& params, const RawBatch& test,
                                          const RetrievalOptions& opt = {}) {
    if (test.size() == 0) throw EmptyModality("test split is empty");
    return cross_modal_matrix(forward(params, test), static_cast<int>(params.encoders.size()), opt);
}

/// Fraction of rows with (1 - cos_y) + lambda0 < min_{j != y} (1 - cos_j).
inline double margin_satisfaction(const LabeledEmbeddings& e, const ClassWeightMatrix& w, double lambda0) {
    detail::check_inputs(e, w);
    int ok = 0;
    for (int b = 0; b < e.size(); ++b) {
        const Vec u = normalize(e.embeddings.row(b).transpose());
        const int y = e.labels[b];
        const double own = 1.0 - w.rows.row(y).dot(u);
        double nearest_other = std::numeric_limits<double>::infinity();
        for (int j = 0; j < w.num_classes(); ++j) {
            if (j != y) nearest_other = std::min(nearest_other, 1.0 - w.rows.row(j).dot(u));
        }
        if (own + lambda0 < nearest_other) ++ok;
    }
    return static_cast<double>(ok) / e.size();
}

// ---------------------------------------------------------------------------
// Report output

inline std::string modality_name(int m) { return "m" + std::to_string(m); }

/// Matrix CSV: header "source,m0,m1,...", one row per source modality.
inline void write_report_csv(const RetrievalReport& rep, std::ostream& out) {
    const auto m = rep.map_matrix.rows();
    out << "source";
    for (Eigen::Index t = 0; t < m; ++t) out << ',' << modality_name(static_cast<int>(t));
    out << '\n';
    for (Eigen::Index s = 0; s < m; ++s) {
        out << modality_name(static_cast<int>(s));
        for (Eigen::Index t = 0; t < m; ++t) out << ',' << textio::format_double(rep.map_matrix(s, t));
        out << '\n';
    }
}

/// Structured text: summary lines, then one line per query when present.
inline void write_report_text(const RetrievalReport& rep, std::ostream& out) {
    out << "modalities " << rep.map_matrix.rows() << '\n';
    out << "top_r " << rep.top_r << '\n';
    out << "gallery_sizes";
    for (int g : rep.gallery_sizes) out << ' ' << g;
    out << '\n';
    out << "mean_map " << textio::format_double(rep.mean_map()) << '\n';
    for (Eigen::Index s = 0; s < rep.map_matrix.rows(); ++s)
        for (Eigen::Index t = 0; t < rep.map_matrix.cols(); ++t)
            out << "cell " << modality_name(static_cast<int>(s)) << ' ' << modality_name(static_cast<int>(t))
                << ' ' << textio::format_double(rep.map_matrix(s, t)) << '\n';
    out << "queries " << rep.per_query.size() << '\n';
    for (const auto& q : rep.per_query) {
        out << "query " << modality_name(q.source) << ' ' << modality_name(q.target) << ' ' << q.query_index
            << ' ' << q.label << ' ' << textio::format_double(q.ap) << '\n';
    }
}

}  // namespace xmodal
