#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "generators.hpp"
#include "xmodal/gradients.hpp"

using namespace xmodal;

namespace {

const LossSet kFlagSets[] = {LossSet{Loss::CE}, LossSet{Loss::IV}, LossSet{Loss::NS}, LossSet{Loss::IC},
                             LossSet{Loss::CE, Loss::IV, Loss::IC}};

HyperParams default_hp(bool detach) {
    HyperParams hp;
    hp.detach_weight = detach;
    return hp;
}

}  // namespace

TEST(FiniteDiff, DefaultProblemSeedSeven) {
    const auto p = random_problem({}, 7);
    for (const auto& flags : kFlagSets) {
        for (bool detach : {false, true}) {
            const auto r = finite_diff_check(p.params, p.batch, default_hp(detach), flags);
            EXPECT_LT(r.max_rel_err, 1e-4) << flags.to_string() << " detach=" << detach;
            EXPECT_EQ(r.coordinates, parameter_count(p.params));
        }
    }
}

TEST(FiniteDiff, RandomSmallProblems) {
    std::mt19937_64 rng(99);
    for (int k = 0; k < 12; ++k) {
        RandomProblemShape s;
        s.num_classes = gen::uniform_int(2, 5, rng);
        s.num_modalities = gen::uniform_int(1, 3, rng);
        s.batch = gen::uniform_int(2 * s.num_classes, 16, rng);
        s.embed_dim = gen::uniform_int(3, 8, rng);
        s.hidden_width = k % 3 == 0 ? 4 : 0;
        const auto p = random_problem(s, 1000 + k);
        HyperParams hp;
        hp.omega = gen::uniform_real(0.1, 1.0, rng);
        hp.tau = gen::uniform_real(0.1, 2.0, rng);
        for (const auto& flags : kFlagSets) {
            for (bool detach : {false, true}) {
                hp.detach_weight = detach;
                const auto r = finite_diff_check(p.params, p.batch, hp, flags);
                EXPECT_LT(r.max_rel_err, 1e-4) << "problem " << k << ' ' << flags.to_string() << " detach=" << detach;
            }
        }
    }
}

TEST(GradTotal, AbsentModalityEncoderHasZeroGradient) {
    auto p = random_problem({}, 3);
    RawBatch only_first_two;
    for (const auto& s : p.batch.samples)
        if (s.modality != 2) only_first_two.samples.push_back(s);
    const auto g = grad_total(p.params, only_first_two, HyperParams{}, LossSet{Loss::CE, Loss::IV, Loss::IC});
    const auto& enc = g.d_encoders[2];
    EXPECT_TRUE(enc.out_w.isZero(0.0));
    EXPECT_TRUE(enc.out_b.isZero(0.0));
    EXPECT_FALSE(g.d_encoders[0].out_w.isZero(0.0));
}

TEST(GradEmbeddings, RadialComponentVanishesAtClassWeight) {
    const int d = 4;
    const auto w = ClassWeightMatrix::normalized(Mat::Identity(3, d));
    HyperParams hp;
    hp.lambda0 = 0.0;
    LabeledEmbeddings e;
    e.embeddings = 2.5 * w.rows.row(1);
    e.labels = {1};
    e.modalities = {0};
    const auto g = grad_embeddings(e, w, hp, LossSet{Loss::CE, Loss::IV});
    const Vec u = w.rows.row(1).transpose();
    EXPECT_NEAR(g.d_embeddings.row(0).dot(u), 0.0, 1e-10);
}

TEST(GradEmbeddings, RadialComponentVanishesEverywhere) {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 100; ++k) {
        const auto e = gen::embeddings(12, 3, 2, 5, rng);
        const auto w = gen::weights(3, 5, rng);
        const auto g = grad_embeddings(e, w, gen::hyper(rng), LossSet{Loss::CE, Loss::IV, Loss::IC});
        for (int b = 0; b < e.size(); ++b) {
            const Vec u = e.embeddings.row(b).transpose().normalized();
            EXPECT_NEAR(g.d_embeddings.row(b).dot(u), 0.0, 1e-10 * std::max(1.0, g.d_embeddings.row(b).norm()));
        }
    }
}

TEST(GradEmbeddings, IcStationaryAtCollapse) {
    std::mt19937_64 rng(5);
    LabeledEmbeddings e;
    const Vec c = gen::unit_vec(4, rng);
    e.embeddings.resize(5, 4);
    for (int i = 0; i < 3; ++i) e.embeddings.row(i) = (double(i) + 1.0) * c.transpose();
    e.embeddings.row(3) = gen::normal_vec(4, rng).transpose();
    e.embeddings.row(4) = gen::normal_vec(4, rng).transpose();
    e.labels = {0, 0, 0, 1, 1};
    e.modalities = {0, 1, 2, 0, 1};
    const auto g = grad_embeddings(e, gen::weights(2, 4, rng), HyperParams{}, LossSet{Loss::IC});
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(g.d_embeddings.row(i).isZero(1e-15));
}

TEST(GradTotal, LinearInComponents) {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 20; ++k) {
        RandomProblemShape s;
        s.hidden_width = k % 2 ? 3 : 0;
        const auto p = random_problem(s, 50 + k);
        auto hp = gen::hyper(rng);
        hp.detach_weight = k % 4 < 2;
        const auto joint = grad_total(p.params, p.batch, hp, LossSet{Loss::CE, Loss::IV, Loss::IC});
        const auto ce = grad_total(p.params, p.batch, hp, LossSet{Loss::CE});
        const auto iv = grad_total(p.params, p.batch, hp, LossSet{Loss::IV});
        const auto ic = grad_total(p.params, p.batch, hp, LossSet{Loss::IC});
        const auto jb = joint.blocks();
        const auto cb = ce.blocks();
        const auto vb = iv.blocks();
        const auto ib = ic.blocks();
        for (std::size_t b = 0; b < jb.size(); ++b) {
            for (std::size_t i = 0; i < jb[b].size(); ++i) {
                const double sum = cb[b][i] + vb[b][i] + ib[b][i];
                EXPECT_NEAR(jb[b][i], sum, 1e-12 * std::max(1.0, std::abs(sum)));
            }
        }
        EXPECT_NEAR(joint.value, ce.value + iv.value + ic.value, 1e-12 * std::max(1.0, std::abs(joint.value)));
    }
}

TEST(FiniteDiff, CorruptedGradientIsCaught) {
    const auto p = random_problem({}, 7);
    const HyperParams hp;
    const LossSet flags{Loss::CE, Loss::IV, Loss::IC};
    auto g = grad_total(p.params, p.batch, hp, flags);
    // Corrupt the smallest entry, where +1 dominates the true value.
    std::size_t target = 0;
    double smallest = std::numeric_limits<double>::infinity();
    double* slot = nullptr;
    std::size_t coord = 0;
    for (auto& block : g.blocks()) {
        for (auto& x : block) {
            if (std::abs(x) < smallest) {
                smallest = std::abs(x);
                target = coord;
                slot = &x;
            }
            ++coord;
        }
    }
    ASSERT_LE(smallest, 1.0);
    *slot += 1.0;
    const auto r = compare_with_finite_diff(p.params, p.batch, hp, flags, g);
    EXPECT_GE(r.max_rel_err, 0.5);
    EXPECT_EQ(r.worst_coordinate, target);
}

TEST(FiniteDiff, ConstantLossRegionHasZeroError) {
    // Each class is one repeated input, so every in-class distance stays 0
    // under any parameter change and the IC loss is constant.
    auto p = random_problem({}, 8);
    std::mt19937_64 rng(8);
    RawBatch batch;
    for (int c = 0; c < 2; ++c) {
        RawSample s;
        s.label = c;
        s.modality = c;
        s.features = gen::normal_vec(p.params.encoders[c].input_dim(), rng);
        batch.samples.push_back(s);
        batch.samples.push_back(s);
        batch.samples.push_back(s);
    }
    const auto r = finite_diff_check(p.params, batch, HyperParams{}, LossSet{Loss::IC});
    EXPECT_EQ(r.max_rel_err, 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
    const auto p = random_problem({}, 7);
    EXPECT_THROW(finite_diff_check(p.params, p.batch, HyperParams{}, LossSet{Loss::CE}, 0.0), BadArgs);
    EXPECT_THROW(finite_diff_check(p.params, p.batch, HyperParams{}, LossSet{Loss::CE}, -1e-5), BadArgs);
}

TEST(FiniteDiff, NonFiniteProbe) {
    // A denormal temperature overflows every logit.
    const auto p = random_problem({}, 7);
    HyperParams hp;
    hp.omega = 1e-310;
    GradientBundle zero;
    zero.d_weights = Mat::Zero(p.params.weights.rows.rows(), p.params.weights.rows.cols());
    for (const auto& e : p.params.encoders) zero.d_encoders.push_back(e.zeros_like());
    EXPECT_THROW(compare_with_finite_diff(p.params, p.batch, hp, LossSet{Loss::CE}, zero), NonFiniteLoss);
}

TEST(RelativeError, FloorsTheDenominator) {
    EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 0.1);
    EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}
