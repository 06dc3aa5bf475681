#pragma once

// Subcommands gen, train, gradcheck, eval and ablate. run_cli returns the
// process exit code: 0 success, 1 validation error, 2 runtime failure,
// 3 gradient check failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/gradients.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/training.hpp"

namespace xmodal {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int validation = 1;
inline constexpr int runtime = 2;
inline constexpr int check_failed = 3;
}  // namespace exit_code

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    return out;
}

inline std::string join_dims(const std::vector<int>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
    return s;
}

inline void write_log_csv(const TrainLog& log, std::ostream& out) {
    out << "iteration,lr,ce,iv,ns_prime,ic,total,skipped_ic_classes,steps\n";
    for (const auto& r : log.records) {
        out << r.iteration << ',' << textio::format_double(r.lr) << ',' << textio::format_double(r.ce) << ','
            << textio::format_double(r.iv) << ',' << textio::format_double(r.ns_prime) << ','
            << textio::format_double(r.ic) << ',' << textio::format_double(r.total) << ','
            << textio::format_double(r.skipped_ic_classes) << ',' << r.steps << '\n';
    }
}

inline void print_matrix(const Mat& m, std::ostream& out) {
    out << "source";
    for (Eigen::Index t = 0; t < m.cols(); ++t) out << ' ' << std::setw(8) << modality_name(static_cast<int>(t));
    out << '\n';
    for (Eigen::Index s = 0; s < m.rows(); ++s) {
        out << std::setw(6) << modality_name(static_cast<int>(s));
        for (Eigen::Index t = 0; t < m.cols(); ++t) out << ' ' << std::setw(8) << std::fixed << std::setprecision(4) << m(s, t);
        out << '\n';
    }
    out.unsetf(std::ios::floatfield);
    out << std::setprecision(6);
}

struct CliContext {
    std::string config_path;
    ConfigEntries overrides;

    RunConfig load() const {
        const ConfigEntries file = config_path.empty() ? ConfigEntries{} : read_config_file(config_path);
        return build_run_config(file, overrides);
    }
};

/// Moves "--section.key=value" arguments into overrides.
inline std::vector<std::string> split_overrides(const std::vector<std::string>& args, ConfigEntries& overrides) {
    std::vector<std::string> rest;
    for (const auto& a : args) {
        const auto eq = a.find('=');
        if (a.rfind("--", 0) == 0 && eq != std::string::npos && a.substr(2, eq - 2).find('.') != std::string::npos) {
            overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            rest.push_back(a);
        }
    }
    return rest;
}

inline MultiModalDataset load_or_generate(const std::string& data_path, const RunConfig& cfg) {
    return data_path.empty() ? generate(cfg.gen) : read_dataset(data_path);
}

}  // namespace detail

inline int cmd_gen(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
    const auto ds = generate(cfg.gen);
    if (const auto parent = std::filesystem::path(out_path).parent_path(); !parent.empty()) {
        detail::ensure_dir(parent.string());
    }
    write_dataset(ds, out_path);
    out << "generated N=" << cfg.gen.num_classes << " M=" << cfg.gen.num_modalities
        << " dims=" << detail::join_dims(cfg.gen.dims) << " n_train=" << cfg.gen.n_train
        << " n_test=" << cfg.gen.n_test << " train_rows=" << ds.train.size() << " test_rows=" << ds.test.size()
        << " seed=" << cfg.gen.seed << " -> " << out_path << '\n';
    return exit_code::ok;
}

inline int cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir,
                     const std::string& resume_path, std::ostream& out) {
    const auto ds = read_dataset(data_path);
    detail::ensure_dir(out_dir);
    const auto ck_path = (std::filesystem::path(out_dir) / "checkpoint.txt").string();

    TrainState state;
    if (resume_path.empty()) {
        state = init_state(ds, cfg.model, cfg.train);
    } else {
        auto ck = load_checkpoint(resume_path);
        if (ck.config.seed != cfg.train.seed) throw BadConfig("resume: checkpoint seed differs from train.seed");
        state = std::move(ck.state);
        out << "resumed from " << resume_path << " at iteration " << state.iteration << '\n';
    }
    TrainHooks hooks;
    hooks.checkpoint_path = ck_path;
    hooks.on_log = [&](const LogRecord& r) {
        out << "iter " << r.iteration << " lr=" << textio::format_double(r.lr)
            << " total=" << textio::format_double(r.total) << '\n';
    };
    run_training(ds, cfg.train, state, hooks);
    save_checkpoint(state, cfg.train, ck_path);
    auto log_out = detail::open_out(std::filesystem::path(out_dir) / "train_log.csv");
    detail::write_log_csv(state.log, log_out);

    if (state.log.records.empty()) {
        out << "final iteration=" << state.iteration << " (no steps taken)\n";
    } else {
        const auto& r = state.log.records.back();
        out << "final iteration=" << r.iteration << " loss=" << cfg.train.enabled.to_string()
            << " ce=" << textio::format_double(r.ce) << " iv=" << textio::format_double(r.iv)
            << " ns_prime=" << textio::format_double(r.ns_prime) << " ic=" << textio::format_double(r.ic)
            << " total=" << textio::format_double(r.total) << '\n';
    }
    out << "checkpoint " << ck_path << '\n';
    return exit_code::ok;
}

/// detach: "config", "on", "off" or "both".
inline int cmd_gradcheck(const RunConfig& cfg, const std::string& detach, std::ostream& out) {
    std::vector<bool> settings;
    if (detach == "config") settings = {cfg.train.hp.detach_weight};
    else if (detach == "on" || detach == "true") settings = {true};
    else if (detach == "off" || detach == "false") settings = {false};
    else if (detach == "both") settings = {false, true};
    else throw BadConfig("--detach-weight must be on, off or both");

    const auto problem = random_problem(cfg.gradcheck.shape, cfg.gradcheck.seed);
    bool all_pass = true;
    for (bool d : settings) {
        HyperParams hp = cfg.train.hp;
        hp.detach_weight = d;
        const auto r = finite_diff_check(problem.params, problem.batch, hp, cfg.train.enabled, cfg.gradcheck.h);
        const bool pass = r.max_rel_err < cfg.gradcheck.threshold;
        all_pass = all_pass && pass;
        out << (pass ? "PASS" : "FAIL") << " max_rel_err=" << textio::format_double(r.max_rel_err)
            << " loss=" << cfg.train.enabled.to_string() << " detach_weight=" << (d ? "true" : "false")
            << " coordinates=" << r.coordinates << " worst=" << r.worst_coordinate << '\n';
    }
    return all_pass ? exit_code::ok : exit_code::check_failed;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& data_path,
                    const std::string& out_dir, std::ostream& out) {
    const auto ck = load_checkpoint(checkpoint_path);
    const auto ds = read_dataset(data_path);
    const auto rep = cross_modal_matrix(ck.state.params, ds.test, cfg.eval);
    detail::ensure_dir(out_dir);
    auto csv = detail::open_out(std::filesystem::path(out_dir) / "report.csv");
    write_report_csv(rep, csv);
    auto txt = detail::open_out(std::filesystem::path(out_dir) / "report.txt");
    write_report_text(rep, txt);
    detail::print_matrix(rep.map_matrix, out);
    out << "mean_map=" << textio::format_double(rep.mean_map()) << '\n';
    return exit_code::ok;
}

struct AblationResult {
    std::vector<LossSet> combos;
    std::vector<RetrievalReport> reports;
};

inline AblationResult run_ablation(const MultiModalDataset& ds, const RunConfig& cfg) {
    AblationResult res;
    for (const auto& combo : cfg.ablate_combos) {
        TrainConfig tc = cfg.train;
        tc.enabled = combo;
        const auto state = train(ds, cfg.model, tc);
        res.combos.push_back(combo);
        res.reports.push_back(cross_modal_matrix(state.params, ds.test, cfg.eval));
    }
    return res;
}

/// Rows are source->target tasks plus "mean"; one column per combination.
inline void write_ablation_csv(const AblationResult& res, std::ostream& out) {
    out << "task";
    for (const auto& c : res.combos) out << ',' << c.to_string();
    out << '\n';
    const auto m = res.reports.empty() ? 0 : res.reports.front().map_matrix.rows();
    for (Eigen::Index s = 0; s < m; ++s) {
        for (Eigen::Index t = 0; t < m; ++t) {
            out << modality_name(static_cast<int>(s)) << "->" << modality_name(static_cast<int>(t));
            for (const auto& r : res.reports) out << ',' << textio::format_double(r.map_matrix(s, t));
            out << '\n';
        }
    }
    out << "mean";
    for (const auto& r : res.reports) out << ',' << textio::format_double(r.mean_map());
    out << '\n';
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir,
                      std::ostream& out) {
    const auto ds = detail::load_or_generate(data_path, cfg);
    const auto res = run_ablation(ds, cfg);
    detail::ensure_dir(out_dir);
    auto csv = detail::open_out(std::filesystem::path(out_dir) / "ablation.csv");
    write_ablation_csv(res, csv);
    for (std::size_t k = 0; k < res.combos.size(); ++k) {
        out << std::setw(10) << res.combos[k].to_string() << "  mean_map="
            << textio::format_double(res.reports[k].mean_map()) << '\n';
    }
    return exit_code::ok;
}

/// args excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    detail::CliContext ctx;
    const auto rest = detail::split_overrides(args, ctx.overrides);

    CLI::App app{"Cross-modal embedding training and retrieval"};
    app.set_help_flag("--help", "Print help");  // "-h" stays free for the step option
    app.require_subcommand(1);
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", ctx.config_path, "key = value config file");
    };

    std::string out_path, data_path, resume_path, checkpoint_path, loss, detach, combos;
    std::string seed, h, top_r;
    bool detail_flag = false;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    add_config(gen);
    gen->add_option("--out", out_path, "dataset file")->required();
    gen->add_option("--seed", seed, "generator seed");

    auto* tr = app.add_subcommand("train", "Train encoders and class weights");
    add_config(tr);
    tr->add_option("--data", data_path, "dataset file")->required();
    tr->add_option("--out", out_path, "output directory")->required();
    tr->add_option("--loss", loss, "loss terms, e.g. ce+iv+ic");
    tr->add_option("--seed", seed, "training seed");
    tr->add_option("--resume", resume_path, "checkpoint to continue from");

    auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    add_config(gc);
    gc->add_option("--seed", seed, "problem seed");
    gc->add_option("--h", h, "finite-difference step");
    gc->add_option("--loss", loss, "loss terms");
    gc->add_option("--detach-weight", detach, "on, off or both; bare flag means on")->expected(0, 1);

    auto* ev = app.add_subcommand("eval", "Cross-modal retrieval report");
    add_config(ev);
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    ev->add_option("--data", data_path, "dataset file")->required();
    ev->add_option("--out", out_path, "output directory")->required();
    ev->add_option("--top-R", top_r, "ranking cutoff, 0 for the full gallery");
    ev->add_flag("--detail", detail_flag, "per-query lines in the text report");

    auto* ab = app.add_subcommand("ablate", "Train and evaluate several loss combinations");
    add_config(ab);
    ab->add_option("--data", data_path, "dataset file; generated from gen.* when absent");
    ab->add_option("--out", out_path, "output directory")->required();
    ab->add_option("--combos", combos, "combinations separated by ';'");

    try {
        std::vector<std::string> reversed(rest.rbegin(), rest.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::validation;
    }
    if (gc->count("--detach-weight") == 0) detach = "config";
    else if (detach.empty()) detach = "on";

    try {
        if (!loss.empty()) ctx.overrides.emplace_back("train.loss", loss);
        if (!combos.empty()) ctx.overrides.emplace_back("ablate.combos", combos);
        if (!top_r.empty()) ctx.overrides.emplace_back("eval.top_R", top_r);
        if (detail_flag) ctx.overrides.emplace_back("eval.detail", "true");
        if (!h.empty()) ctx.overrides.emplace_back("gradcheck.h", h);
        if (!seed.empty()) {
            const char* key = gen->parsed() ? "gen.seed" : tr->parsed() ? "train.seed" : "gradcheck.seed";
            ctx.overrides.emplace_back(key, seed);
        }
        const RunConfig cfg = ctx.load();
        if (gen->parsed()) return cmd_gen(cfg, out_path, out);
        if (tr->parsed()) return cmd_train(cfg, data_path, out_path, resume_path, out);
        if (gc->parsed()) return cmd_gradcheck(cfg, detach, out);
        if (ev->parsed()) return cmd_eval(cfg, checkpoint_path, data_path, out_path, out);
        return cmd_ablate(cfg, data_path, out_path, out);
    } catch (const BadConfig& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::validation;
    } catch (const ConflictingFlags& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::validation;
    } catch (const BadArgs& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::validation;
    } catch (const InsufficientData& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::validation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::runtime;
    }
}

}  // namespace xmodal
