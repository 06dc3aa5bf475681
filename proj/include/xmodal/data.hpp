#pragma once

// Synthetic multi-modal datasets, their text file format, and class-balanced
// batch sampling.
//
// Generation: class prototypes live on the latent d-sphere; each modality
// embeds them into R^{d_m} with a fixed orthonormal map plus an offset, and
// instances add isotropic Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "xmodal/geometry.hpp"
#include "xmodal/model.hpp"
#include "xmodal/textio.hpp"

namespace xmodal {

struct GenConfig {
    int num_classes = 8;
    int num_modalities = 3;
    int n_train = 40;  // per class per modality
    int n_test = 10;
    int latent_dim = 16;
    std::vector<int> dims{24, 32, 20};
    double sigma_intra = 0.05;
    double modal_shift = 1.0;  // 0: every modality shares the canonical map
    double overlap = 0.0;      // prototype correlation in [0, 1)
    double shift_test = 0.0;   // extra re-mapping of the test split
    std::uint64_t seed = 42;

    bool operator==(const GenConfig&) const = default;

    void validate() const {
        if (num_classes < 2) throw BadConfig("gen: N must be >= 2");
        if (num_modalities < 1) throw BadConfig("gen: M must be >= 1");
        if (n_train < 2) throw BadConfig("gen: n_train must be >= 2");
        if (n_test < 1) throw BadConfig("gen: n_test must be >= 1");
        if (latent_dim < 2) throw BadConfig("gen: latent_dim must be >= 2");
        if (static_cast<int>(dims.size()) != num_modalities) {
            throw BadConfig("gen: dims lists " + std::to_string(dims.size()) + " entries for M=" +
                            std::to_string(num_modalities));
        }
        for (int d : dims) {
            if (d < latent_dim) throw BadConfig("gen: every modality dim must be >= latent_dim");
        }
        if (!(sigma_intra >= 0.0) || !std::isfinite(sigma_intra)) throw BadConfig("gen: sigma_intra must be >= 0");
        if (!(modal_shift >= 0.0) || !std::isfinite(modal_shift)) throw BadConfig("gen: modal_shift must be >= 0");
        if (!(overlap >= 0.0 && overlap < 1.0)) throw BadConfig("gen: overlap must be in [0, 1)");
        if (!(shift_test >= 0.0) || !std::isfinite(shift_test)) throw BadConfig("gen: shift_test must be >= 0");
    }
};

struct MultiModalDataset {
    GenConfig config;
    RawBatch train;
    RawBatch test;
};

inline bool operator==(const RawSample& a, const RawSample& b) {
    return a.label == b.label && a.modality == b.modality && a.features.size() == b.features.size() &&
           a.features == b.features;
}

inline bool operator==(const RawBatch& a, const RawBatch& b) { return a.samples == b.samples; }

inline bool operator==(const MultiModalDataset& a, const MultiModalDataset& b) {
    return a.config == b.config && a.train == b.train && a.test == b.test;
}

namespace detail {

inline Mat orthonormal_columns(const Mat& m) {
    Eigen::HouseholderQR<Mat> qr(m);
    Mat q = qr.householderQ() * Mat::Identity(m.rows(), m.cols());
    // Fix column signs so the result is a continuous function of m.
    const Mat r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (r(c, c) < 0.0) q.col(c) *= -1.0;
    }
    return q;
}

inline Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
    return m;
}

struct ModalityMap {
    Mat map;     // d_m x latent
    Vec offset;  // d_m
};

}  // namespace detail

inline MultiModalDataset generate(const GenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int d = cfg.latent_dim;

    const Vec common = normalize(detail::gaussian_matrix(d, 1, rng).col(0));
    std::vector<Vec> protos;
    for (int c = 0; c < cfg.num_classes; ++c) {
        const Vec own = normalize(detail::gaussian_matrix(d, 1, rng).col(0));
        protos.push_back(normalize(std::sqrt(cfg.overlap) * common + std::sqrt(1.0 - cfg.overlap) * own));
    }

    std::vector<detail::ModalityMap> train_maps;
    for (int m = 0; m < cfg.num_modalities; ++m) {
        const int dm = cfg.dims[m];
        const Mat canonical = Mat::Identity(dm, d);
        const Mat random = detail::orthonormal_columns(detail::gaussian_matrix(dm, d, rng));
        const double s = std::min(cfg.modal_shift, 1.0);
        detail::ModalityMap mm;
        mm.map = detail::orthonormal_columns((1.0 - s) * canonical + s * random);
        mm.offset = cfg.modal_shift * detail::gaussian_matrix(dm, 1, rng, 1.0 / std::sqrt(dm)).col(0);
        train_maps.push_back(std::move(mm));
    }

    auto emit = [&](RawBatch& out, const std::vector<detail::ModalityMap>& maps, int per_class) {
        for (int m = 0; m < cfg.num_modalities; ++m) {
            std::normal_distribution<double> noise(0.0, 1.0);
            for (int c = 0; c < cfg.num_classes; ++c) {
                const Vec centre = maps[m].map * protos[c] + maps[m].offset;
                for (int i = 0; i < per_class; ++i) {
                    RawSample s;
                    s.label = c;
                    s.modality = m;
                    s.features = centre;
                    for (auto& x : s.features) x += cfg.sigma_intra * noise(rng);
                    out.samples.push_back(std::move(s));
                }
            }
        }
    };

    MultiModalDataset ds;
    ds.config = cfg;
    emit(ds.train, train_maps, cfg.n_train);

    // Drawn unconditionally so shift_test does not perturb the rest of the stream.
    std::vector<detail::ModalityMap> test_maps;
    for (int m = 0; m < cfg.num_modalities; ++m) {
        const int dm = cfg.dims[m];
        const Mat dmap = detail::gaussian_matrix(dm, d, rng, 1.0 / std::sqrt(dm));
        const Vec doff = detail::gaussian_matrix(dm, 1, rng, 1.0 / std::sqrt(dm)).col(0);
        detail::ModalityMap mm = train_maps[m];
        if (cfg.shift_test > 0.0) {
            mm.map = detail::orthonormal_columns(mm.map + cfg.shift_test * dmap);
            mm.offset += cfg.shift_test * doff;
        }
        test_maps.push_back(std::move(mm));
    }
    emit(ds.test, test_maps, cfg.n_test);
    return ds;
}

// ---------------------------------------------------------------------------
// File format

inline constexpr int kDatasetFormatVersion = 1;

inline void write_dataset(const MultiModalDataset& ds, std::ostream& out) {
    using textio::format_double;
    const auto& c = ds.config;
    out << "xmodal-dataset " << kDatasetFormatVersion << '\n';
    out << "N " << c.num_classes << '\n';
    out << "M " << c.num_modalities << '\n';
    out << "dims";
    for (int d : c.dims) out << ' ' << d;
    out << '\n';
    out << "latent_dim " << c.latent_dim << '\n';
    out << "n_train " << c.n_train << '\n';
    out << "n_test " << c.n_test << '\n';
    out << "sigma_intra " << format_double(c.sigma_intra) << '\n';
    out << "modal_shift " << format_double(c.modal_shift) << '\n';
    out << "overlap " << format_double(c.overlap) << '\n';
    out << "shift_test " << format_double(c.shift_test) << '\n';
    out << "seed " << c.seed << '\n';
    out << "rows " << ds.train.size() + ds.test.size() << '\n';
    auto rows = [&](const RawBatch& b, const char* split) {
        for (const auto& s : b.samples) {
            out << split << ' ' << s.label << ' ' << s.modality;
            for (double x : s.features) out << ' ' << format_double(x);
            out << '\n';
        }
    };
    rows(ds.train, "train");
    rows(ds.test, "test");
}

inline void write_dataset(const MultiModalDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_dataset(ds, out);
    out.flush();
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline MultiModalDataset read_dataset(std::istream& in, const std::string& source) {
    textio::LineReader r(in, source);
    {
        auto magic = r.next("header");
        if (magic.size() != 2 || magic[0] != "xmodal-dataset") r.fail("not an xmodal dataset file");
        const int version = r.to_int<int>(magic[1], "version");
        if (version > kDatasetFormatVersion) {
            throw VersionMismatch(source + ": dataset format version " + std::to_string(version) +
                                  " is newer than supported " + std::to_string(kDatasetFormatVersion));
        }
    }
    GenConfig c;
    c.num_classes = r.to_int<int>(r.keyed("N")[0], "N");
    c.num_modalities = r.to_int<int>(r.keyed("M")[0], "M");
    if (c.num_classes < 2 || c.num_modalities < 1) r.fail("N must be >= 2 and M >= 1");
    {
        auto toks = r.keyed("dims", c.num_modalities);
        c.dims.clear();
        for (auto t : toks) c.dims.push_back(r.to_int<int>(t, "dims"));
    }
    c.latent_dim = r.to_int<int>(r.keyed("latent_dim")[0], "latent_dim");
    c.n_train = r.to_int<int>(r.keyed("n_train")[0], "n_train");
    c.n_test = r.to_int<int>(r.keyed("n_test")[0], "n_test");
    c.sigma_intra = r.to_double(r.keyed("sigma_intra")[0], "sigma_intra");
    c.modal_shift = r.to_double(r.keyed("modal_shift")[0], "modal_shift");
    c.overlap = r.to_double(r.keyed("overlap")[0], "overlap");
    c.shift_test = r.to_double(r.keyed("shift_test")[0], "shift_test");
    c.seed = r.to_int<std::uint64_t>(r.keyed("seed")[0], "seed");
    try {
        c.validate();
    } catch (const BadConfig& e) {
        r.fail(std::string("invalid header: ") + e.what());
    }
    const long long rows = r.to_int(r.keyed("rows")[0], "rows");
    const long long expected =
        static_cast<long long>(c.num_classes) * c.num_modalities * (c.n_train + c.n_test);
    if (rows != expected) {
        r.fail("rows " + std::to_string(rows) + " disagrees with header counts (" +
               std::to_string(expected) + ")");
    }

    MultiModalDataset ds;
    ds.config = c;
    std::map<std::pair<int, int>, int> train_counts, test_counts;
    for (long long i = 0; i < rows; ++i) {
        auto toks = r.next("data row " + std::to_string(i + 1) + " of " + std::to_string(rows));
        if (toks.size() < 3) r.fail("row needs split, class, modality and features");
        const bool is_train = toks[0] == "train";
        if (!is_train && toks[0] != "test") r.fail("split must be 'train' or 'test'");
        RawSample s;
        s.label = r.to_int<int>(toks[1], "class");
        s.modality = r.to_int<int>(toks[2], "modality");
        if (s.label < 0 || s.label >= c.num_classes) r.fail("class id out of range");
        if (s.modality < 0 || s.modality >= c.num_modalities) r.fail("modality id out of range");
        const auto nfeat = static_cast<int>(toks.size()) - 3;
        if (nfeat != c.dims[s.modality]) {
            r.fail("modality " + std::to_string(s.modality) + " row has " + std::to_string(nfeat) +
                   " features, header dims say " + std::to_string(c.dims[s.modality]));
        }
        s.features.resize(nfeat);
        for (int k = 0; k < nfeat; ++k) {
            s.features[k] = r.to_double(toks[3 + k], "feature");
            if (!std::isfinite(s.features[k])) r.fail("non-finite feature");
        }
        auto& counts = is_train ? train_counts : test_counts;
        ++counts[{s.label, s.modality}];
        (is_train ? ds.train : ds.test).samples.push_back(std::move(s));
    }
    if (!r.at_end()) r.fail("trailing content after " + std::to_string(rows) + " rows");
    for (int cl = 0; cl < c.num_classes; ++cl) {
        for (int m = 0; m < c.num_modalities; ++m) {
            if (train_counts[{cl, m}] != c.n_train || test_counts[{cl, m}] != c.n_test) {
                r.fail("class " + std::to_string(cl) + " modality " + std::to_string(m) +
                       " does not have the declared per-class counts");
            }
        }
    }
    return ds;
}

inline MultiModalDataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return read_dataset(in, path);
}

// ---------------------------------------------------------------------------
// Sampling

/// Class-balanced sampler over a dataset's train split.
class BatchSampler {
public:
    BatchSampler(const MultiModalDataset& ds, int batch_size, int classes_per_batch)
        : ds_(&ds), batch_size_(batch_size), classes_per_batch_(classes_per_batch) {
        const auto& c = ds.config;
        if (classes_per_batch < 1 || classes_per_batch > c.num_classes) {
            throw InsufficientData("classes_per_batch=" + std::to_string(classes_per_batch) +
                                   " but the dataset has " + std::to_string(c.num_classes) + " classes");
        }
        if (batch_size < 2 * classes_per_batch * c.num_modalities) {
            throw InsufficientData("batch_size must be >= 2 * classes_per_batch * M = " +
                                   std::to_string(2 * classes_per_batch * c.num_modalities));
        }
        index_.assign(static_cast<std::size_t>(c.num_classes * c.num_modalities), {});
        for (int i = 0; i < ds.train.size(); ++i) {
            const auto& s = ds.train.samples[i];
            index_[slot(s.label, s.modality)].push_back(i);
        }
        // The largest quota must fit in every (class, modality) cell.
        const int per_class = (batch_size + classes_per_batch - 1) / classes_per_batch;
        const int per_cell = (per_class + c.num_modalities - 1) / c.num_modalities;
        for (const auto& cell : index_) {
            if (static_cast<int>(cell.size()) < per_cell) {
                throw InsufficientData("a class/modality cell has " + std::to_string(cell.size()) +
                                       " rows, batch needs " + std::to_string(per_cell));
            }
        }
    }

    /// Picks classes_per_batch distinct classes, splits batch_size evenly
    /// across them (remainder to the first picks) and each class quota evenly
    /// across modalities, sampling rows without replacement.
    RawBatch sample(std::mt19937_64& rng) const {
        const int n = ds_->config.num_classes;
        const int nm = ds_->config.num_modalities;
        std::vector<int> classes(n);
        for (int i = 0; i < n; ++i) classes[i] = i;
        for (int i = 0; i < classes_per_batch_; ++i) {
            std::uniform_int_distribution<int> pick(i, n - 1);
            std::swap(classes[i], classes[pick(rng)]);
        }
        RawBatch out;
        out.samples.reserve(batch_size_);
        for (int k = 0; k < classes_per_batch_; ++k) {
            const int quota = batch_size_ / classes_per_batch_ + (k < batch_size_ % classes_per_batch_ ? 1 : 0);
            for (int mi = 0; mi < nm; ++mi) {
                const int m = (mi + k) % nm;
                const int cell_quota = quota / nm + (mi < quota % nm ? 1 : 0);
                std::vector<int> rows = index_[slot(classes[k], m)];
                for (int i = 0; i < cell_quota; ++i) {
                    std::uniform_int_distribution<int> pick(i, static_cast<int>(rows.size()) - 1);
                    std::swap(rows[i], rows[pick(rng)]);
                    out.samples.push_back(ds_->train.samples[rows[i]]);
                }
            }
        }
        return out;
    }

private:
    std::size_t slot(int label, int modality) const {
        return static_cast<std::size_t>(label * ds_->config.num_modalities + modality);
    }

    const MultiModalDataset* ds_;
    int batch_size_;
    int classes_per_batch_;
    std::vector<std::vector<int>> index_;
};

inline RawBatch sample_batch(const MultiModalDataset& ds, int batch_size, int classes_per_batch,
                             std::mt19937_64& rng) {
    return BatchSampler(ds, batch_size, classes_per_batch).sample(rng);
}

}  // namespace xmodal
