#pragma once

// Projected SGD with a step-decay schedule, the joint-loss training loop and
// text checkpoints.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xmodal/data.hpp"
#include "xmodal/gradients.hpp"
#include "xmodal/model.hpp"
#include "xmodal/textio.hpp"

namespace xmodal {

struct TrainConfig {
    double base_lr = 0.01;
    long decay_every = 1000;
    double decay_factor = 0.1;
    long iterations = 2000;
    int batch_size = 128;
    int classes_per_batch = 0;  // 0: every class
    double momentum = 0.0;
    HyperParams hp;
    LossSet enabled{Loss::CE, Loss::IV, Loss::IC};
    std::uint64_t seed = 1;
    long checkpoint_every = 0;  // 0: only the caller decides
    long log_every = 100;

    void validate() const {
        if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw BadConfig("train: base_lr must be > 0");
        if (decay_every < 1) throw BadConfig("train: decay_every must be >= 1");
        if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw BadConfig("train: decay_factor must be in (0, 1]");
        if (iterations < 0) throw BadConfig("train: iterations must be >= 0");
        if (batch_size < 2) throw BadConfig("train: batch_size must be >= 2");
        if (classes_per_batch < 0) throw BadConfig("train: classes_per_batch must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw BadConfig("train: momentum must be in [0, 1)");
        if (checkpoint_every < 0) throw BadConfig("train: checkpoint_every must be >= 0");
        if (log_every < 1) throw BadConfig("train: log_every must be >= 1");
        hp.validate();
        enabled.validate();
    }
};

/// Mean loss components over one logging interval.
struct LogRecord {
    long iteration = 0;  // iterations completed at the end of the interval
    double lr = 0.0;     // learning rate of the last step in the interval
    double ce = 0.0;
    double iv = 0.0;
    double ns_prime = 0.0;
    double ic = 0.0;
    double total = 0.0;
    double skipped_ic_classes = 0.0;
    long steps = 0;

    bool operator==(const LogRecord&) const = default;
};

struct TrainLog {
    std::vector<LogRecord> records;

    bool operator==(const TrainLog&) const = default;
};

struct TrainState {
    ModelParams params;
    long iteration = 0;
    TrainLog log;
    LogRecord pending;  // sums for the interval in progress
    std::optional<GradientBundle> velocity;
};

inline double lr_at(long iter, const TrainConfig& cfg) {
    return cfg.base_lr * std::pow(cfg.decay_factor, static_cast<double>(iter / cfg.decay_every));
}

/// p <- p - lr * g, then every weight row is projected back to the sphere.
inline ModelParams sgd_step(const ModelParams& params, const GradientBundle& grads, double lr) {
    ModelParams out = params;
    auto gb = grads.blocks();
    auto pb = parameter_blocks(out);
    if (gb.size() != pb.size()) throw DimensionMismatch("gradient bundle does not match parameters");
    for (std::size_t k = 0; k < pb.size(); ++k) {
        if (gb[k].size() != pb[k].size()) throw DimensionMismatch("gradient block size mismatch");
        for (std::size_t i = 0; i < pb[k].size(); ++i) pb[k][i] -= lr * gb[k][i];
    }
    for (Eigen::Index j = 0; j < out.weights.rows.rows(); ++j) {
        out.weights.rows.row(j) = normalize(out.weights.rows.row(j).transpose()).transpose();
    }
    return out;
}

/// Heavy-ball variant: v <- mu v + g; p <- p - lr v.
inline ModelParams sgd_step(const ModelParams& params, const GradientBundle& grads, double lr,
                            double momentum, GradientBundle& velocity) {
    auto vb = velocity.blocks();
    auto gb = grads.blocks();
    for (std::size_t k = 0; k < vb.size(); ++k)
        for (std::size_t i = 0; i < vb[k].size(); ++i) vb[k][i] = momentum * vb[k][i] + gb[k][i];
    return sgd_step(params, velocity, lr);
}

struct TrainHooks {
    std::string checkpoint_path;  // written every checkpoint_every iterations when set
    std::function<void(const LogRecord&)> on_log;
};

inline void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path);

namespace detail {

inline std::mt19937_64 step_rng(std::uint64_t seed, long iteration) {
    const auto it = static_cast<std::uint64_t>(iteration);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(it), static_cast<std::uint32_t>(it >> 32)};
    return std::mt19937_64(seq);
}

inline ModelConfig resolve_model_config(ModelConfig cfg, const MultiModalDataset& ds) {
    if (cfg.num_classes == 0) cfg.num_classes = ds.config.num_classes;
    if (cfg.input_dims.empty()) cfg.input_dims = ds.config.dims;
    if (cfg.num_classes != ds.config.num_classes || cfg.input_dims != ds.config.dims) {
        throw BadConfig("model shape does not match the dataset");
    }
    cfg.validate();
    return cfg;
}

}  // namespace detail

inline TrainState init_state(const MultiModalDataset& ds, const ModelConfig& model_cfg,
                             const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.params = init_params(detail::resolve_model_config(model_cfg, ds), cfg.seed);
    return s;
}

/// Continues `state` until cfg.iterations steps have been taken in total.
inline void run_training(const MultiModalDataset& ds, const TrainConfig& cfg, TrainState& state,
                         const TrainHooks& hooks = {}) {
    cfg.validate();
    detail::resolve_model_config(state.params.config, ds);
    const int cpb = cfg.classes_per_batch == 0 ? ds.config.num_classes : cfg.classes_per_batch;
    const BatchSampler sampler(ds, cfg.batch_size, cpb);
    if (cfg.momentum > 0.0 && !state.velocity) {
        GradientBundle v;
        v.d_weights = Mat::Zero(state.params.weights.rows.rows(), state.params.weights.rows.cols());
        for (const auto& e : state.params.encoders) v.d_encoders.push_back(e.zeros_like());
        state.velocity = std::move(v);
    }
    std::string last_checkpoint = "none";

    for (long it = state.iteration; it < cfg.iterations; ++it) {
        auto rng = detail::step_rng(cfg.seed, it);
        const RawBatch batch = sampler.sample(rng);
        const GradientBundle g = grad_total(state.params, batch, cfg.hp, cfg.enabled);
        if (!std::isfinite(g.value)) {
            throw DivergenceDetected("non-finite loss at iteration " + std::to_string(it) +
                                     "; last good checkpoint: " + last_checkpoint);
        }
        const double lr = lr_at(it, cfg);
        state.params = cfg.momentum > 0.0 ? sgd_step(state.params, g, lr, cfg.momentum, *state.velocity)
                                          : sgd_step(state.params, g, lr);
        state.iteration = it + 1;

        auto& p = state.pending;
        const auto& b = g.breakdown;
        p.ce += b.ce;
        p.iv += b.iv;
        p.ns_prime += b.ns_prime;
        p.ic += b.ic;
        p.total += b.total;
        p.skipped_ic_classes += b.skipped_ic_classes;
        p.lr = lr;
        ++p.steps;
        if (state.iteration % cfg.log_every == 0 || state.iteration == cfg.iterations) {
            LogRecord rec = p;
            const double n = static_cast<double>(p.steps);
            rec.iteration = state.iteration;
            rec.ce /= n;
            rec.iv /= n;
            rec.ns_prime /= n;
            rec.ic /= n;
            rec.total /= n;
            rec.skipped_ic_classes /= n;
            state.log.records.push_back(rec);
            state.pending = {};
            if (hooks.on_log) hooks.on_log(rec);
        }
        if (cfg.checkpoint_every > 0 && !hooks.checkpoint_path.empty() &&
            state.iteration % cfg.checkpoint_every == 0) {
            save_checkpoint(state, cfg, hooks.checkpoint_path);
            last_checkpoint = hooks.checkpoint_path + " @" + std::to_string(state.iteration);
        }
    }
}

inline TrainState train(const MultiModalDataset& ds, const ModelConfig& model_cfg,
                        const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    TrainState s = init_state(ds, model_cfg, cfg);
    run_training(ds, cfg, s, hooks);
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    TrainConfig config;
    TrainState state;
};

namespace detail {

inline void write_block(std::ostream& out, const std::string& name, const Mat& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.size(); ++i) out << ' ' << textio::format_double(m.data()[i]);
    out << '\n';
}

inline void write_block(std::ostream& out, const std::string& name, const Vec& v) {
    out << name << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << textio::format_double(v[i]);
    out << '\n';
}

inline Mat read_mat(textio::LineReader& r, const std::string& name) {
    auto toks = r.keyed(name, -1);
    if (toks.size() < 2) r.fail(name + ": missing shape");
    const auto rows = r.to_int<long>(toks[0], name + " rows");
    const auto cols = r.to_int<long>(toks[1], name + " cols");
    if (rows < 0 || cols < 0 || static_cast<long>(toks.size()) != 2 + rows * cols) {
        r.fail(name + ": expected " + std::to_string(rows * cols) + " values");
    }
    Mat m(rows, cols);
    for (long i = 0; i < rows * cols; ++i) m.data()[i] = r.to_double(toks[2 + i], name);
    return m;
}

inline Vec read_vec(textio::LineReader& r, const std::string& name) {
    auto toks = r.keyed(name, -1);
    const auto n = r.to_int<long>(toks[0], name + " size");
    if (n < 0 || static_cast<long>(toks.size()) != 1 + n) r.fail(name + ": expected " + std::to_string(n) + " values");
    Vec v(n);
    for (long i = 0; i < n; ++i) v[i] = r.to_double(toks[1 + i], name);
    return v;
}

inline void write_record(std::ostream& out, const char* tag, const LogRecord& rec) {
    using textio::format_double;
    out << tag << ' ' << rec.iteration << ' ' << format_double(rec.lr) << ' ' << format_double(rec.ce)
        << ' ' << format_double(rec.iv) << ' ' << format_double(rec.ns_prime) << ' '
        << format_double(rec.ic) << ' ' << format_double(rec.total) << ' '
        << format_double(rec.skipped_ic_classes) << ' ' << rec.steps << '\n';
}

inline LogRecord read_record(textio::LineReader& r, const char* tag) {
    auto t = r.keyed(tag, 9);
    LogRecord rec;
    rec.iteration = r.to_int<long>(t[0], "iteration");
    rec.lr = r.to_double(t[1], "lr");
    rec.ce = r.to_double(t[2], "ce");
    rec.iv = r.to_double(t[3], "iv");
    rec.ns_prime = r.to_double(t[4], "ns_prime");
    rec.ic = r.to_double(t[5], "ic");
    rec.total = r.to_double(t[6], "total");
    rec.skipped_ic_classes = r.to_double(t[7], "skipped_ic_classes");
    rec.steps = r.to_int<long>(t[8], "steps");
    return rec;
}

inline void write_encoders(std::ostream& out, const std::string& prefix, const std::vector<Encoder>& encs) {
    for (std::size_t m = 0; m < encs.size(); ++m) {
        const std::string p = prefix + std::to_string(m) + '.';
        write_block(out, p + "hidden_w", encs[m].hidden_w);
        write_block(out, p + "hidden_b", encs[m].hidden_b);
        write_block(out, p + "out_w", encs[m].out_w);
        write_block(out, p + "out_b", encs[m].out_b);
    }
}

inline std::vector<Encoder> read_encoders(textio::LineReader& r, const std::string& prefix, int count) {
    std::vector<Encoder> encs(count);
    for (int m = 0; m < count; ++m) {
        const std::string p = prefix + std::to_string(m) + '.';
        encs[m].hidden_w = read_mat(r, p + "hidden_w");
        encs[m].hidden_b = read_vec(r, p + "hidden_b");
        encs[m].out_w = read_mat(r, p + "out_w");
        encs[m].out_b = read_vec(r, p + "out_b");
    }
    return encs;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
    using textio::format_double;
    const auto& c = ck.config;
    const auto& s = ck.state;
    const auto& mc = s.params.config;
    out << "xmodal-checkpoint " << kCheckpointFormatVersion << '\n';
    out << "iteration " << s.iteration << '\n';
    out << "seed " << c.seed << '\n';
    out << "model.embed_dim " << mc.embed_dim << '\n';
    out << "model.hidden_width " << mc.hidden_width << '\n';
    out << "model.num_classes " << mc.num_classes << '\n';
    out << "model.input_dims";
    for (int d : mc.input_dims) out << ' ' << d;
    out << '\n';
    out << "train.base_lr " << format_double(c.base_lr) << '\n';
    out << "train.decay_every " << c.decay_every << '\n';
    out << "train.decay_factor " << format_double(c.decay_factor) << '\n';
    out << "train.iterations " << c.iterations << '\n';
    out << "train.batch_size " << c.batch_size << '\n';
    out << "train.classes_per_batch " << c.classes_per_batch << '\n';
    out << "train.momentum " << format_double(c.momentum) << '\n';
    out << "train.checkpoint_every " << c.checkpoint_every << '\n';
    out << "train.log_every " << c.log_every << '\n';
    out << "train.loss " << c.enabled.to_string() << '\n';
    out << "train.hp.lambda0 " << format_double(c.hp.lambda0) << '\n';
    out << "train.hp.omega " << format_double(c.hp.omega) << '\n';
    out << "train.hp.tau " << format_double(c.hp.tau) << '\n';
    out << "train.hp.t_rbf " << format_double(c.hp.t_rbf) << '\n';
    out << "train.hp.detach_weight " << (c.hp.detach_weight ? 1 : 0) << '\n';
    detail::write_block(out, "weights", s.params.weights.rows);
    detail::write_encoders(out, "encoder.", s.params.encoders);
    out << "velocity " << (s.velocity ? 1 : 0) << '\n';
    if (s.velocity) {
        detail::write_block(out, "velocity.weights", s.velocity->d_weights);
        detail::write_encoders(out, "velocity.encoder.", s.velocity->d_encoders);
    }
    detail::write_record(out, "pending", s.pending);
    out << "log " << s.log.records.size() << '\n';
    for (const auto& rec : s.log.records) detail::write_record(out, "record", rec);
    out << "end\n";
}

inline void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_checkpoint({cfg, state}, out);
    out.flush();
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
    textio::LineReader r(in, source);
    {
        auto magic = r.next("header");
        if (magic.size() != 2 || magic[0] != "xmodal-checkpoint") r.fail("not an xmodal checkpoint");
        const int version = r.to_int<int>(magic[1], "version");
        if (version != kCheckpointFormatVersion) {
            throw VersionMismatch(source + ": checkpoint format version " + std::to_string(version) +
                                  ", this build reads version " + std::to_string(kCheckpointFormatVersion));
        }
    }
    Checkpoint ck;
    auto& c = ck.config;
    auto& s = ck.state;
    s.iteration = r.to_int<long>(r.keyed("iteration")[0], "iteration");
    c.seed = r.to_int<std::uint64_t>(r.keyed("seed")[0], "seed");
    auto& mc = s.params.config;
    mc.embed_dim = r.to_int<int>(r.keyed("model.embed_dim")[0], "embed_dim");
    mc.hidden_width = r.to_int<int>(r.keyed("model.hidden_width")[0], "hidden_width");
    mc.num_classes = r.to_int<int>(r.keyed("model.num_classes")[0], "num_classes");
    for (auto t : r.keyed("model.input_dims", -1)) mc.input_dims.push_back(r.to_int<int>(t, "input_dims"));
    c.base_lr = r.to_double(r.keyed("train.base_lr")[0], "base_lr");
    c.decay_every = r.to_int<long>(r.keyed("train.decay_every")[0], "decay_every");
    c.decay_factor = r.to_double(r.keyed("train.decay_factor")[0], "decay_factor");
    c.iterations = r.to_int<long>(r.keyed("train.iterations")[0], "iterations");
    c.batch_size = r.to_int<int>(r.keyed("train.batch_size")[0], "batch_size");
    c.classes_per_batch = r.to_int<int>(r.keyed("train.classes_per_batch")[0], "classes_per_batch");
    c.momentum = r.to_double(r.keyed("train.momentum")[0], "momentum");
    c.checkpoint_every = r.to_int<long>(r.keyed("train.checkpoint_every")[0], "checkpoint_every");
    c.log_every = r.to_int<long>(r.keyed("train.log_every")[0], "log_every");
    try {
        c.enabled = LossSet::parse(std::string(r.keyed("train.loss")[0]));
    } catch (const BadConfig& e) {
        r.fail(e.what());
    }
    c.hp.lambda0 = r.to_double(r.keyed("train.hp.lambda0")[0], "lambda0");
    c.hp.omega = r.to_double(r.keyed("train.hp.omega")[0], "omega");
    c.hp.tau = r.to_double(r.keyed("train.hp.tau")[0], "tau");
    c.hp.t_rbf = r.to_double(r.keyed("train.hp.t_rbf")[0], "t_rbf");
    c.hp.detach_weight = r.to_int<int>(r.keyed("train.hp.detach_weight")[0], "detach_weight") != 0;
    try {
        mc.validate();
        c.validate();
    } catch (const Error& e) {
        r.fail(std::string("invalid config echo: ") + e.what());
    }

    s.params.weights.rows = detail::read_mat(r, "weights");
    s.params.encoders = detail::read_encoders(r, "encoder.", mc.num_modalities());
    if (s.params.weights.rows.rows() != mc.num_classes || s.params.weights.rows.cols() != mc.embed_dim) {
        r.fail("weights shape disagrees with the model config");
    }
    for (int m = 0; m < mc.num_modalities(); ++m) {
        const auto& e = s.params.encoders[m];
        const bool ok = e.out_w.rows() == mc.embed_dim && e.out_b.size() == mc.embed_dim &&
                        e.input_dim() == mc.input_dims[m] &&
                        (mc.hidden_width == 0 ? !e.has_hidden()
                                              : e.hidden_w.rows() == mc.hidden_width &&
                                                    e.hidden_b.size() == mc.hidden_width &&
                                                    e.out_w.cols() == mc.hidden_width);
        if (!ok) r.fail("encoder " + std::to_string(m) + " shape disagrees with the model config");
    }
    if (r.to_int<int>(r.keyed("velocity")[0], "velocity") != 0) {
        GradientBundle v;
        v.d_weights = detail::read_mat(r, "velocity.weights");
        v.d_encoders = detail::read_encoders(r, "velocity.encoder.", mc.num_modalities());
        s.velocity = std::move(v);
    }
    s.pending = detail::read_record(r, "pending");
    const auto n = r.to_int<long>(r.keyed("log")[0], "log");
    for (long i = 0; i < n; ++i) s.log.records.push_back(detail::read_record(r, "record"));
    r.keyed("end", 0);
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in, path);
}

}  // namespace xmodal
