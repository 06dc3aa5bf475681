#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "generators.hpp"
#include "xmodal/data.hpp"

using namespace xmodal;

namespace {

GenConfig small_gen() {
    GenConfig c;
    c.num_classes = 3;
    c.num_modalities = 2;
    c.n_train = 4;
    c.n_test = 2;
    c.latent_dim = 3;
    c.dims = {4, 5};
    c.sigma_intra = 0.1;
    c.seed = 5;
    return c;
}

std::string to_text(const MultiModalDataset& ds) {
    std::ostringstream out;
    write_dataset(ds, out);
    return out.str();
}

MultiModalDataset from_text(const std::string& s) {
    std::istringstream in(s);
    return read_dataset(in, "mem");
}

std::string replace_line(const std::string& text, const std::string& prefix, const std::string& line) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string l;
    while (std::getline(in, l)) out << (l.rfind(prefix, 0) == 0 ? line : l) << '\n';
    return out.str();
}

}  // namespace

TEST(Generate, Deterministic) {
    EXPECT_TRUE(generate(GenConfig{}) == generate(GenConfig{}));
    auto other = GenConfig{};
    other.seed = 43;
    EXPECT_FALSE(generate(GenConfig{}) == generate(other));
}

TEST(Generate, DefaultCounts) {
    const auto ds = generate(GenConfig{});
    EXPECT_EQ(ds.train.size(), 8 * 3 * 40);
    EXPECT_EQ(ds.test.size(), 8 * 3 * 10);
    std::map<std::pair<int, int>, int> counts;
    for (const auto& s : ds.train.samples) {
        ++counts[{s.label, s.modality}];
        EXPECT_EQ(s.features.size(), GenConfig{}.dims[s.modality]);
        EXPECT_TRUE(s.features.allFinite());
    }
    for (const auto& [key, n] : counts) EXPECT_EQ(n, 40);
}

TEST(Generate, NoNoiseMeansIdenticalInstances) {
    auto c = GenConfig{};
    c.sigma_intra = 0.0;
    const auto ds = generate(c);
    std::map<std::pair<int, int>, Vec> first;
    for (const auto& s : ds.train.samples) {
        const auto [it, inserted] = first.emplace(std::make_pair(s.label, s.modality), s.features);
        if (!inserted) EXPECT_EQ(s.features, it->second);
    }
}

TEST(Generate, SeparableWithoutNoiseOrOverlap) {
    // Nearest class mean per modality recovers every train label.
    for (double sigma : {0.0, 1e-3}) {
        auto c = GenConfig{};
        c.sigma_intra = sigma;
        c.overlap = 0.0;
        const auto ds = generate(c);
        std::map<std::pair<int, int>, Vec> sums;
        std::map<std::pair<int, int>, int> counts;
        for (const auto& s : ds.train.samples) {
            auto key = std::make_pair(s.label, s.modality);
            if (!sums.count(key)) sums[key] = Vec::Zero(s.features.size());
            sums[key] += s.features;
            ++counts[key];
        }
        int correct = 0;
        for (const auto& s : ds.train.samples) {
            int best = -1;
            double best_d = 0.0;
            for (int cl = 0; cl < c.num_classes; ++cl) {
                const auto key = std::make_pair(cl, s.modality);
                const double d = (s.features - sums[key] / counts[key]).squaredNorm();
                if (best < 0 || d < best_d) {
                    best = cl;
                    best_d = d;
                }
            }
            correct += best == s.label;
        }
        EXPECT_EQ(correct, ds.train.size()) << "sigma=" << sigma;
    }
}

TEST(Generate, TestShiftOnlyMovesTestSplit) {
    auto a = small_gen();
    auto b = a;
    b.shift_test = 0.5;
    const auto da = generate(a);
    const auto db = generate(b);
    EXPECT_TRUE(da.train == db.train);
    EXPECT_FALSE(da.test == db.test);
}

TEST(Generate, RejectsBadConfig) {
    auto c = GenConfig{};
    c.num_classes = 1;
    EXPECT_THROW(generate(c), BadConfig);
    c = GenConfig{};
    c.dims = {24, 32};
    EXPECT_THROW(generate(c), BadConfig);
    c = GenConfig{};
    c.dims = {24, 8, 20};
    EXPECT_THROW(generate(c), BadConfig);
    c = GenConfig{};
    c.overlap = 1.0;
    EXPECT_THROW(generate(c), BadConfig);
    c = GenConfig{};
    c.n_train = 1;
    EXPECT_THROW(generate(c), BadConfig);
}

TEST(DatasetFile, StreamRoundTripIsExact) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 5; ++k) {
        auto c = small_gen();
        c.seed = rng();
        c.sigma_intra = gen::uniform_real(0.0, 1.0, rng);
        c.overlap = gen::uniform_real(0.0, 0.9, rng);
        c.shift_test = k % 2 ? 0.3 : 0.0;
        const auto ds = generate(c);
        EXPECT_TRUE(from_text(to_text(ds)) == ds);
    }
}

TEST(DatasetFile, PathRoundTrip) {
    const auto dir = gen::scratch_dir("dataset_roundtrip");
    const auto ds = generate(GenConfig{});
    write_dataset(ds, (dir / "ds.txt").string());
    EXPECT_TRUE(read_dataset((dir / "ds.txt").string()) == ds);
    EXPECT_THROW(read_dataset((dir / "missing.txt").string()), IoError);
}

TEST(DatasetFile, TruncatedFile) {
    const std::string text = to_text(generate(small_gen()));
    const auto cut = text.substr(0, text.size() / 2);
    EXPECT_THROW(from_text(cut.substr(0, cut.rfind('\n') + 1)), FormatError);
    EXPECT_THROW(from_text(cut), FormatError);
    EXPECT_THROW(from_text(""), FormatError);
}

TEST(DatasetFile, HeaderDimsMismatch) {
    const std::string text = to_text(generate(small_gen()));
    try {
        from_text(replace_line(text, "dims", "dims 4 6"));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("features"), std::string::npos);
    }
}

TEST(DatasetFile, OtherCorruptions) {
    const std::string text = to_text(generate(small_gen()));
    EXPECT_THROW(from_text(replace_line(text, "rows", "rows 7")), FormatError);
    EXPECT_THROW(from_text(text + "train 0 0 1 2 3 4\n"), FormatError);
    EXPECT_THROW(from_text(replace_line(text, "xmodal-dataset", "something-else 1")), FormatError);
    EXPECT_THROW(from_text(replace_line(text, "sigma_intra", "sigma_intra abc")), FormatError);
    EXPECT_THROW(from_text(replace_line(text, "xmodal-dataset", "xmodal-dataset 2")), VersionMismatch);
}

TEST(Sampler, BalancedDefaultBatch) {
    const auto ds = generate(GenConfig{});
    std::mt19937_64 rng(3);
    for (int k = 0; k < 20; ++k) {
        const auto b = sample_batch(ds, 128, 8, rng);
        ASSERT_EQ(b.size(), 128);
        std::map<int, int> per_class;
        std::map<std::pair<int, int>, int> per_cell;
        for (const auto& s : b.samples) {
            ++per_class[s.label];
            ++per_cell[{s.label, s.modality}];
        }
        EXPECT_EQ(per_class.size(), 8u);
        for (const auto& [c, n] : per_class) EXPECT_GE(n, 2);
        for (const auto& [key, n] : per_cell) EXPECT_GE(n, 5);
    }
}

TEST(Sampler, FewerClassesPerBatch) {
    const auto ds = generate(GenConfig{});
    std::mt19937_64 rng(4);
    const auto b = sample_batch(ds, 30, 4, rng);
    std::set<int> classes;
    for (const auto& s : b.samples) classes.insert(s.label);
    EXPECT_EQ(classes.size(), 4u);
    EXPECT_EQ(b.size(), 30);
}

TEST(Sampler, RowsAreDistinctWithinABatch) {
    const auto ds = generate(small_gen());
    std::mt19937_64 rng(5);
    const auto b = sample_batch(ds, 24, 3, rng);
    for (int i = 0; i < b.size(); ++i)
        for (int j = i + 1; j < b.size(); ++j) EXPECT_FALSE(b.samples[i] == b.samples[j]);
}

TEST(Sampler, InsufficientData) {
    const auto ds = generate(small_gen());
    std::mt19937_64 rng(6);
    EXPECT_THROW(sample_batch(ds, 128, 4, rng), InsufficientData);  // more classes than exist
    EXPECT_THROW(sample_batch(ds, 128, 0, rng), InsufficientData);
    EXPECT_THROW(sample_batch(ds, 11, 3, rng), InsufficientData);   // below 2 * 3 * 2
    EXPECT_THROW(sample_batch(ds, 60, 3, rng), InsufficientData);   // cells hold only 4 rows
}

TEST(Sampler, DeterministicGivenRngState) {
    const auto ds = generate(GenConfig{});
    std::mt19937_64 a(77);
    std::mt19937_64 b(77);
    EXPECT_TRUE(sample_batch(ds, 128, 8, a) == sample_batch(ds, 128, 8, b));
    EXPECT_TRUE(sample_batch(ds, 64, 5, a) == sample_batch(ds, 64, 5, b));
}
