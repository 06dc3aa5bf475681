// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Optional argument: scratch directory for CLI runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "generators.hpp"
#include "oracles.hpp"
#include "xmodal/cli.hpp"

using namespace xmodal;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradBudgetSeconds = 30.0;
constexpr int kGradConfigs = 24;
constexpr int kInequalityConfigs = 1000;
constexpr double kTauZeroTol = 1e-12;
constexpr double kGammaFloor = 1e-12;
constexpr int kGeodesicSetups = 100;
constexpr int kGeodesicSteps = 10;
constexpr int kRandomApLists = 1000;
constexpr double kMapFloor = 0.95;
constexpr double kTrainBudgetSeconds = 60.0;
constexpr double kMarginFloor = 0.9;

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    const LossSet flag_sets[] = {LossSet{Loss::CE}, LossSet{Loss::IV}, LossSet{Loss::NS}, LossSet{Loss::IC},
                                 LossSet{Loss::CE, Loss::IV, Loss::IC}};
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::string worst_where;
    int checks = 0;
    for (int k = 0; k < kGradConfigs; ++k) {
        RandomProblemShape s;
        s.num_classes = gen::uniform_int(2, 5, rng);
        s.num_modalities = gen::uniform_int(1, 3, rng);
        s.batch = gen::uniform_int(2 * s.num_classes, 16, rng);
        s.embed_dim = gen::uniform_int(3, 8, rng);
        s.hidden_width = k % 4 == 3 ? 4 : 0;
        const auto p = random_problem(s, rng());
        for (const auto& flags : flag_sets) {
            for (bool detach : {false, true}) {
                HyperParams hp;
                hp.detach_weight = detach;
                const auto r = finite_diff_check(p.params, p.batch, hp, flags, kGradStep);
                ++checks;
                if (r.max_rel_err > worst) {
                    worst = r.max_rel_err;
                    worst_where = "config " + std::to_string(k) + " " + flags.to_string() +
                                  (detach ? " detached" : "");
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = worst < kGradTol && secs < kGradBudgetSeconds;
    return {pass, std::to_string(checks) + " checks over " + std::to_string(kGradConfigs) +
                      " configs, max_rel_err=" + fmt(worst) + " (" + worst_where + "), " + fmt(secs) + " s"};
}

Outcome weighting_inequality() {
    std::mt19937_64 rng(7);
    int violations = 0;
    int strict_cases = 0;
    double worst_tau0 = 0.0;
    for (int k = 0; k < kInequalityConfigs; ++k) {
        const int n = gen::uniform_int(2, 6, rng);
        const int d = gen::uniform_int(2, 8, rng);
        const auto e = gen::embeddings(gen::uniform_int(1, 16, rng), n, 3, d, rng);
        const auto w = gen::weights(n, d, rng);
        auto hp = gen::hyper(rng);
        hp.tau = 1.0;
        const double iv = loss_iv(e, w, hp).value;
        const double ns = loss_ns_prime(e, w, hp);
        const auto g = compute_gamma(e, w, hp);
        const bool strict = *std::max_element(g.begin(), g.end()) > kGammaFloor;
        strict_cases += strict;
        if (strict ? !(iv < ns) : !(iv <= ns)) ++violations;
        hp.tau = 0.0;
        worst_tau0 = std::max(worst_tau0, std::abs(loss_iv(e, w, hp).value - loss_ns_prime(e, w, hp)));
    }
    const bool pass = violations == 0 && worst_tau0 <= kTauZeroTol;
    return {pass, std::to_string(kInequalityConfigs) + " configs (" + std::to_string(strict_cases) +
                      " strict), violations=" + std::to_string(violations) +
                      ", max |iv-ns| at tau=0: " + fmt(worst_tau0)};
}

Outcome geodesic_monotonicity() {
    // The rotation plane holds u and w_y; every other class weight is
    // orthogonal to it, so non-target cosines stay fixed along the path.
    std::mt19937_64 rng(99);
    int failures = 0;
    for (int k = 0; k < kGeodesicSetups; ++k) {
        const int d = gen::uniform_int(3, 8, rng);
        const int n = gen::uniform_int(2, 5, rng);
        const int y = gen::uniform_int(0, n - 1, rng);
        const Vec u0 = gen::unit_vec(d, rng);
        const Vec wy = gen::unit_vec(d, rng);
        const Vec v = (wy - wy.dot(u0) * u0).normalized();
        Mat w(n, d);
        for (int j = 0; j < n; ++j) {
            Vec r = gen::normal_vec(d, rng);
            r -= r.dot(u0) * u0 + r.dot(v) * v;
            w.row(j) = (j == y ? wy : r.normalized()).transpose();
        }
        const auto weights = ClassWeightMatrix::normalized(w);
        const HyperParams hp;  // omega 1/30, lambda0 0.35, tau 0.1
        const double theta = std::acos(std::clamp(u0.dot(wy), -1.0, 1.0));
        double prev[3] = {0, 0, 0};
        bool ok = true;
        for (int s = 0; s <= kGeodesicSteps; ++s) {
            const double a = theta * s / kGeodesicSteps;
            LabeledEmbeddings e;
            e.embeddings = (std::cos(a) * u0 + std::sin(a) * v).transpose();
            e.labels = {y};
            e.modalities = {0};
            const double cur[3] = {compute_gamma(e, weights, hp)[0], loss_ns_prime(e, weights, hp),
                                   loss_iv(e, weights, hp).value};
            if (s > 0)
                for (int i = 0; i < 3; ++i) ok = ok && cur[i] < prev[i];
            std::copy(cur, cur + 3, prev);
        }
        failures += !ok;
    }
    return {failures == 0, std::to_string(kGeodesicSetups) + " setups x " + std::to_string(kGeodesicSteps) +
                               " steps, non-decreasing setups=" + std::to_string(failures)};
}

Outcome ap_oracle() {
    long cases = 0;
    long mismatches = 0;
    auto check = [&](const std::vector<std::uint8_t>& rel, std::size_t r) {
        std::size_t t = 0;
        for (std::size_t k = 0; k < r; ++k) t += rel[k];
        ++cases;
        if (average_precision(rel, r, t) != oracle::average_precision(rel, r, t)) ++mismatches;
    };
    for (std::size_t len = 1; len <= 10; ++len) {
        for (unsigned bits = 0; bits < (1u << len); ++bits) {
            std::vector<std::uint8_t> rel(len);
            for (std::size_t k = 0; k < len; ++k) rel[k] = (bits >> k) & 1u;
            for (std::size_t r = 0; r <= len; ++r) check(rel, r);
        }
    }
    std::mt19937_64 rng(12);
    for (int k = 0; k < kRandomApLists; ++k) {
        const int len = gen::uniform_int(11, 300, rng);
        const double density = gen::uniform_real(0.0, 1.0, rng);
        std::vector<std::uint8_t> rel(len);
        for (auto& x : rel) x = gen::uniform_real(0.0, 1.0, rng) < density;
        check(rel, static_cast<std::size_t>(len));
        check(rel, static_cast<std::size_t>(gen::uniform_int(0, len, rng)));
    }
    return {mismatches == 0, std::to_string(cases) + " lists compared exactly, mismatches=" +
                                 std::to_string(mismatches)};
}

struct TrainedModel {
    TrainState state;
    MultiModalDataset data;
    double seconds = 0.0;
};

TrainConfig default_train_config() {
    TrainConfig t;  // 2000 iterations, batch 128, lr 0.01, CE+IV+IC, omega 1/30, lambda0 0.35, tau 0.1
    return t;
}

TrainedModel train_easy() {
    const auto t0 = Clock::now();
    TrainedModel m;
    m.data = generate(GenConfig{});  // N=8, M=3, n 40/10, latent 16, sigma 0.05, overlap 0, seed 42
    m.state = train(m.data, ModelConfig{}, default_train_config());
    m.seconds = seconds_since(t0);
    return m;
}

Outcome end_to_end(const TrainedModel& m) {
    const auto t0 = Clock::now();
    const auto rep = cross_modal_matrix(m.state.params, m.data.test);
    const double secs = m.seconds + seconds_since(t0);
    const double lowest = rep.map_matrix.minCoeff();
    std::ostringstream cells;
    for (Eigen::Index s = 0; s < rep.map_matrix.rows(); ++s)
        for (Eigen::Index t = 0; t < rep.map_matrix.cols(); ++t) cells << (s || t ? " " : "") << fmt(rep.map_matrix(s, t));
    return {lowest >= kMapFloor && secs < kTrainBudgetSeconds,
            "min cell mAP=" + fmt(lowest) + " [" + cells.str() + "], " + fmt(secs) + " s"};
}

Outcome ablation_direction() {
    auto g = GenConfig{};
    g.sigma_intra = 0.3;
    g.overlap = 0.5;
    const auto ds = generate(g);
    auto mean_map = [&](LossSet flags) {
        auto t = default_train_config();
        t.enabled = flags;
        return cross_modal_matrix(train(ds, ModelConfig{}, t).params, ds.test).mean_map();
    };
    const double full = mean_map({Loss::CE, Loss::IV, Loss::IC});
    const double ce_iv = mean_map({Loss::CE, Loss::IV});
    const double ce = mean_map({Loss::CE});
    const double iv = mean_map({Loss::IV});
    const double ns = mean_map({Loss::NS});
    const bool pass = full - ce_iv > 0.0 && ce_iv - ce >= 0.0 && iv - ns >= 0.0;
    return {pass, "ce+iv+ic=" + fmt(full) + " ce+iv=" + fmt(ce_iv) + " ce=" + fmt(ce) + " | iv=" + fmt(iv) +
                      " ns=" + fmt(ns) + " (gaps " + fmt(full - ce_iv) + ", " + fmt(ce_iv - ce) + "; " +
                      fmt(iv - ns) + ")"};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome cli_determinism(const std::filesystem::path& work) {
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);
    std::ostringstream sink;
    auto run = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
    const auto data = (work / "ds.txt").string();
    if (run({"gen", "--out", data}) != 0) return {false, "gen failed: " + sink.str()};
    for (const char* r : {"a", "b"}) {
        const auto dir = work / r;
        if (run({"train", "--data", data, "--out", dir.string()}) != 0) return {false, "train failed: " + sink.str()};
        if (run({"eval", "--checkpoint", (dir / "checkpoint.txt").string(), "--data", data, "--out",
                 (dir / "eval").string(), "--detail"}) != 0)
            return {false, "eval failed: " + sink.str()};
    }
    int same = 0;
    const char* files[] = {"checkpoint.txt", "train_log.csv", "eval/report.csv", "eval/report.txt"};
    for (const char* f : files) same += slurp(work / "a" / f) == slurp(work / "b" / f) && !slurp(work / "a" / f).empty();
    return {same == 4, std::to_string(same) + "/4 output files bit-identical across reruns"};
}

Outcome margin_diagnostic(const TrainedModel& m) {
    const auto e = forward(m.state.params, m.data.test);
    const double frac = margin_satisfaction(e, m.state.params.weights, 0.35);
    return {frac >= kMarginFloor, "test margin satisfaction=" + fmt(frac)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::filesystem::path work =
        argc > 1 ? std::filesystem::path(argv[1]) : std::filesystem::temp_directory_path() / "xmodal_acceptance";
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s criterion %d (%s): %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    };

    report(1, "gradient correctness", gradient_correctness);
    report(2, "weighting inequality", weighting_inequality);
    report(3, "geodesic monotonicity", geodesic_monotonicity);
    report(4, "average precision oracle", ap_oracle);
    std::optional<TrainedModel> easy;
    report(5, "end-to-end training", [&] {
        easy = train_easy();
        return end_to_end(*easy);
    });
    report(6, "ablation direction", ablation_direction);
    report(7, "determinism", [&] { return cli_determinism(work); });
    report(8, "margin diagnostic", [&] {
        if (!easy) return Outcome{false, "no trained model from criterion 5"};
        return margin_diagnostic(*easy);
    });
    std::printf("%d of 8 criteria passed\n", 8 - failed);
    return failed == 0 ? 0 : 1;
}
