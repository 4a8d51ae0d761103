/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "emx/config.hpp"
#include "emx/corpus.hpp"
#include "emx/dsp.hpp"
#include "emx/error.hpp"
#include "emx/io.hpp"
#include "emx/nn/checkpoint.hpp"
#include "emx/pipeline.hpp"
#include "emx/segmenter.hpp"
#include "emx/simulator.hpp"
#include "emx/svg.hpp"
#include "emx/trace.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace emx::cli {

enum ExitCode { ok = 0, usage = 1, data = 2, runtime = 3 };

namespace fs = std::filesystem;

inline RunConfig config_or_default(const std::string &path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

inline void require_parent_dir(const fs::path &out) {
    const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
    if (!fs::is_directory(parent))
        throw Error(Errc::invalid_argument, "output directory '" + parent.string() + "' does not exist");
}

inline std::string fmt(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

// ------------------------------------------------------------ commands ----

struct SimulateArgs {
    std::string corpus, arch, out, config;
    std::uint64_t model_seed = 0, trace_seed = 0;
};

inline int cmd_simulate(const SimulateArgs &a, std::ostream &out) {
    const RunConfig cfg = config_or_default(a.config);
    const auto corpus = sim::load_corpus(a.corpus);
    const auto &d = sim::find_architecture(corpus, a.arch);
    require_parent_dir(a.out);
    const Trace t = sim::simulate_trace(d, cfg.em_model, cfg.sim_config, a.model_seed, a.trace_seed);
    save_trace(a.out, t);
    out << "wrote " << a.out << ": " << d.name << ", " << t.size() << " samples, "
        << fmt(dsp::total_duration_s(t) * 1e3, 4) << " ms\n";
    return ok;
}

struct DatasetArgs {
    std::string corpus, protocol = "desk", out, config;
    std::uint64_t seed = 0;
    std::size_t n_train = 2, n_test = 1, traces_train = 20, traces_test = 10;
    std::size_t window = 0;
    unsigned threads = 0;
};

inline sim::Protocol protocol_by_name(const DatasetArgs &a) {
    if (a.protocol == "full")
        return sim::Protocol::full();
    if (a.protocol == "desk")
        return sim::Protocol::desk();
    if (a.protocol == "custom")
        return {a.n_train, a.n_test, a.traces_train, a.traces_test};
    throw Error(Errc::invalid_argument, "protocol must be full, desk or custom");
}

inline int cmd_dataset(const DatasetArgs &a, std::ostream &out) {
    RunConfig cfg = config_or_default(a.config);
    cfg.sim_config.rng_seed = a.seed;
    const auto protocol = protocol_by_name(a);
    const auto corpus = sim::load_corpus(a.corpus);
    if (fs::exists(a.out) && !fs::is_empty(a.out))
        throw Error(Errc::invalid_argument, "output directory '" + a.out + "' exists and is not empty");
    sim::TraceTransform transform;
    if (a.window > 0) {
        const std::size_t w = a.window;
        transform = [w](Trace t) { return dsp::abs_window_average(t, w); };
    }
    Dataset ds = sim::simulate_dataset(corpus, protocol, cfg.em_model, cfg.sim_config, transform, a.threads);
    ds.provenance["em_model"] = to_json(cfg.em_model);
    ds.provenance["sim_config"] = to_json(cfg.sim_config);
    dataset_save(ds, a.out);
    out << "wrote " << ds.entries.size() << " traces (" << ds.count(Split::test) << " test) for "
        << ds.num_classes() << " classes to " << a.out << "\n";
    return ok;
}

struct PreprocessArgs {
    std::string in, out, normalize = "zscore", pad_policy = "zero_pad_right";
    std::size_t window = 1000, target_len = 0;
};

inline int cmd_preprocess(const PreprocessArgs &a, std::ostream &out) {
    dsp::PreprocessConfig cfg;
    cfg.window = a.window;
    cfg.normalize = dsp::parse_normalize(a.normalize);
    cfg.pad_policy = dsp::parse_pad_policy(a.pad_policy);
    if (a.target_len)
        cfg.target_len = a.target_len;
    cfg.validate();
    const Trace t = load_trace(a.in);
    require_parent_dir(a.out);
    const Trace p = dsp::preprocess(t, cfg);
    save_trace(a.out, p);
    out << "wrote " << a.out << ": " << t.size() << " -> " << p.size() << " samples\n";
    return ok;
}

struct TrainArgs {
    std::string dataset, out, config;
    std::optional<std::size_t> epochs, batch, patience, window;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    std::string normalize;
    double split_ratio = pipeline::kDefaultSplitRatio;
    unsigned threads = 0;
};

inline std::string history_text(const nn::TrainResult &r) {
    std::string s = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
    for (const auto &e : r.history)
        s += std::to_string(e.epoch) + "\t" + fmt(e.train_loss) + "\t" + fmt(e.train_accuracy) + "\t" +
             fmt(e.val_loss) + "\t" + fmt(e.val_accuracy) + "\n";
    s += "# best_epoch " + std::to_string(r.best_epoch) + (r.stopped_early ? " (early stop)" : "") + "\n";
    return s;
}

inline int cmd_train(const TrainArgs &a, std::ostream &out) {
    RunConfig cfg = config_or_default(a.config);
    auto &tc = cfg.train_config;
    if (a.epochs) tc.max_epochs = *a.epochs;
    if (a.batch) tc.batch_size = *a.batch;
    if (a.patience) tc.early_stop_patience = *a.patience;
    if (a.lr) tc.learning_rate = *a.lr;
    if (a.seed) tc.rng_seed = *a.seed;
    tc.threads = a.threads;
    tc.validate();
    if (a.window) cfg.preprocess.window = *a.window;
    if (!a.normalize.empty()) cfg.preprocess.normalize = dsp::parse_normalize(a.normalize);
    cfg.preprocess.validate();
    require_parent_dir(a.out);

    const Dataset raw = dataset_load(a.dataset);
    const Dataset ds = pipeline::build_attack_dataset(raw, cfg.preprocess, a.split_ratio, tc.rng_seed, a.threads);
    out << "train " << ds.count(Split::train) << " / val " << ds.count(Split::val) << " / test "
        << ds.count(Split::test) << ", input length " << ds.entries.front().trace.size() << "\n";
    auto trained = pipeline::train_attack_model(ds, tc, [&out](const nn::EpochStats &e) {
        out << "epoch " << e.epoch << " loss " << fmt(e.train_loss, 4) << " acc " << fmt(e.train_accuracy, 4)
            << " val_loss " << fmt(e.val_loss, 4) << " val_acc " << fmt(e.val_accuracy, 4) << "\n";
    });
    nn::save_checkpoint(a.out, trained.model);
    io::write_text_atomic(a.out + ".history.tsv", history_text(trained.result));
    out << "wrote " << a.out << " (best epoch " << trained.result.best_epoch << ")\n";
    return ok;
}

struct EvalArgs {
    std::string model, dataset, report;
    unsigned threads = 0;
};

/// Preprocesses the test traces exactly as the model's training data was.
inline Dataset test_set_for(const nn::Model &model, const Dataset &raw, unsigned threads) {
    dsp::PreprocessConfig cfg = pipeline::model_preprocess(model);
    cfg.target_len = model.input_len();
    cfg.pad_policy = dsp::PadPolicy::zero_pad_right;
    const auto idx = raw.indices(Split::test);
    std::vector<std::optional<Trace>> pre(idx.size());
    parallel_for(idx.size(), [&](std::size_t i) { pre[i] = dsp::preprocess(raw.entries[idx[i]].trace, cfg); },
                 threads);
    Dataset ds;
    ds.class_names = raw.class_names;
    for (std::size_t i = 0; i < idx.size(); ++i)
        ds.entries.push_back({raw.entries[idx[i]].id, std::move(*pre[i]), raw.entries[idx[i]].label, Split::test});
    return ds;
}

inline int cmd_eval(const EvalArgs &a, std::ostream &out) {
    const nn::Model model = nn::load_checkpoint(a.model);
    const Dataset raw = dataset_load(a.dataset);
    if (raw.class_names != pipeline::model_class_names(model))
        throw Error(Errc::shape_mismatch, "dataset classes differ from the model's classes");
    const auto report = pipeline::evaluate(model, test_set_for(model, raw, a.threads), a.threads);
    fs::create_directories(a.report);
    io::write_text_atomic(fs::path(a.report) / "report.json", report.to_json().dump(2) + "\n");
    io::write_text_atomic(fs::path(a.report) / "confusion.svg",
                          svg::plot_confusion(report.confusion, report.class_names, report.accuracy));
    out << "accuracy " << fmt(report.accuracy, 4) << " on " << report.test_count << " test traces\n";
    for (std::size_t c = 0; c < report.class_names.size(); ++c)
        out << "  " << report.class_names[c] << " " << fmt(report.per_class_accuracy[c], 4) << "\n";
    return ok;
}

struct AttackArgs {
    std::string model, trace;
    std::size_t top = 0;
};

inline int cmd_attack(const AttackArgs &a, std::ostream &out) {
    const nn::Model model = nn::load_checkpoint(a.model);
    const Trace t = load_trace(a.trace);
    const auto id = pipeline::identify(model, t);
    const auto names = pipeline::model_class_names(model);
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return id.probabilities[x] > id.probabilities[y]; });
    const std::size_t shown = a.top ? std::min(a.top, order.size()) : order.size();
    out << "prediction " << id.class_name << (id.low_confidence ? " (low confidence)" : "") << "\n";
    for (std::size_t r = 0; r < shown; ++r)
        out << (r + 1) << "\t" << names[order[r]] << "\t" << fmt(id.probabilities[order[r]]) << "\n";
    return ok;
}

struct SegmentArgs {
    std::string trace, svg, arch, corpus, config, json;
    bool prefix_mode = false;
    std::optional<std::size_t> window, min_gap;
    double threshold = seg::kDefaultGapThresholdRel;
    std::size_t divergence_window = seg::kDefaultDivergenceWindow;
};

inline int cmd_segment(const SegmentArgs &a, std::ostream &out) {
    RunConfig cfg = config_or_default(a.config);
    if (a.window)
        cfg.preprocess.window = *a.window;
    cfg.preprocess.validate();
    if (a.prefix_mode && (a.arch.empty() || a.corpus.empty()))
        throw Error(Errc::invalid_argument, "--prefix-mode needs --arch and --corpus");
    const Trace t = load_trace(a.trace);
    require_parent_dir(a.svg);
    const Trace env = t.meta_or("preproc") == dsp::absavg_tag(cfg.preprocess.window)
                          ? t
                          : dsp::abs_window_average(t, cfg.preprocess.window);
    std::vector<seg::Boundary> bs;
    if (a.prefix_mode) {
        const auto corpus = sim::load_corpus(a.corpus);
        const auto &d = sim::find_architecture(corpus, a.arch);
        bs = seg::profile_by_prefixes(d, cfg.em_model, cfg.sim_config, cfg.preprocess, a.divergence_window,
                                      a.threshold);
    } else {
        const std::size_t min_gap =
            a.min_gap.value_or(seg::default_min_gap_samples(cfg.em_model, cfg.sim_config, cfg.preprocess.window));
        bs = seg::detect_boundaries(env, a.threshold, min_gap);
    }
    svg::PlotStyle style;
    style.title = t.meta_or("arch", a.trace) + " - " + std::to_string(bs.size()) + " boundaries";
    style.x_label = "sample (window " + std::to_string(cfg.preprocess.window) + ")";
    io::write_text_atomic(a.svg, svg::plot_trace(env, style, bs));
    if (!a.json.empty())
        io::write_text_atomic(a.json, nlohmann::json{{"boundaries", seg::to_json(bs)}}.dump(2) + "\n");
    for (const auto &b : bs)
        out << b.index << "\t" << seg::boundary_kind_name(b.kind) << "\t" << fmt(b.confidence, 3) << "\n";
    return ok;
}

struct HeatmapArgs {
    std::string grid, svg, values;
    double freq = 78e6, bw = 1e6;
    std::size_t top = 3;
};

struct Cell {
    std::size_t row, col;
    double power;
};

/// Reads `<row>_<col>.emt` files into a dense grid.
inline std::vector<std::vector<Trace>> load_grid(const fs::path &dir) {
    if (!fs::is_directory(dir))
        throw Error(Errc::missing_file, "grid directory '" + dir.string() + "' does not exist");
    const std::regex name(R"((\d+)_(\d+)\.emt)");
    std::map<std::pair<std::size_t, std::size_t>, fs::path> files;
    std::size_t rows = 0, cols = 0;
    for (const auto &e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string fn = e.path().filename().string();
        if (!e.is_regular_file() || !std::regex_match(fn, m, name))
            continue;
        const std::size_t r = std::stoul(m[1]), c = std::stoul(m[2]);
        files[{r, c}] = e.path();
        rows = std::max(rows, r + 1);
        cols = std::max(cols, c + 1);
    }
    if (files.empty())
        throw Error(Errc::missing_file, "no <row>_<col>.emt files in '" + dir.string() + "'");
    if (files.size() != rows * cols)
        throw Error(Errc::shape_mismatch, "grid is incomplete: " + std::to_string(files.size()) + " of " +
                                              std::to_string(rows * cols) + " cells present");
    std::vector<std::vector<Trace>> grid(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            grid[r].push_back(load_trace(files.at({r, c})));
    return grid;
}

inline std::vector<Cell> ranked_cells(const std::vector<std::vector<double>> &heat) {
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < heat.size(); ++r)
        for (std::size_t c = 0; c < heat[r].size(); ++c)
            cells.push_back({r, c, heat[r][c]});
    std::stable_sort(cells.begin(), cells.end(), [](const Cell &x, const Cell &y) { return x.power > y.power; });
    return cells;
}

inline int cmd_heatmap(const HeatmapArgs &a, std::ostream &out) {
    const auto grid = load_grid(a.grid);
    require_parent_dir(a.svg);
    const auto heat = dsp::band_heatmap(grid, a.freq, a.bw);
    double hi = 0.0;
    for (const auto &row : heat)
        for (double v : row)
            hi = std::max(hi, v);
    std::vector<std::vector<double>> rel = heat;
    for (auto &row : rel)
        for (auto &v : row)
            v = hi > 0 ? v / hi : 0.0;
    std::vector<std::string> rl, cl;
    for (std::size_t r = 0; r < heat.size(); ++r)
        rl.push_back(std::to_string(r));
    for (std::size_t c = 0; c < heat[0].size(); ++c)
        cl.push_back(std::to_string(c));
    io::write_text_atomic(
        a.svg, svg::plot_matrix(rel, rl, cl, "band power at " + fmt(a.freq / 1e6, 3) + " MHz (relative)"));
    if (!a.values.empty())
        io::write_text_atomic(a.values,
                              nlohmann::json{{"center_hz", a.freq}, {"bandwidth_hz", a.bw}, {"values", heat}}.dump(2) +
                                  "\n");
    const auto cells = ranked_cells(heat);
    for (std::size_t i = 0; i < std::min(a.top, cells.size()); ++i)
        out << cells[i].row << "\t" << cells[i].col << "\t" << cells[i].power << "\n";
    return ok;
}

struct PlotArgs {
    std::string trace, svg, boundaries, title;
};

inline int cmd_plot(const PlotArgs &a, std::ostream &out) {
    const Trace t = load_trace(a.trace);
    std::vector<seg::Boundary> bs;
    if (!a.boundaries.empty()) {
        try {
            bs = seg::boundaries_from_json(nlohmann::json::parse(io::read_text_file(a.boundaries)));
        } catch (const nlohmann::json::exception &e) {
            throw Error(Errc::parse_error, a.boundaries + ": " + e.what());
        }
    }
    require_parent_dir(a.svg);
    svg::PlotStyle style;
    style.title = a.title.empty() ? t.meta_or("arch") : a.title;
    io::write_text_atomic(a.svg, svg::plot_trace(t, style, bs));
    out << "wrote " << a.svg << "\n";
    return ok;
}

// ---------------------------------------------------------------- main ----

/// Parses the command line and runs one subcommand. Returns the exit code.
inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    CLI::App app{"EM side-channel architecture fingerprinting toolkit", "emx"};
    app.require_subcommand(1);

    SimulateArgs sa;
    auto *sim_cmd = app.add_subcommand("simulate", "simulate one inference trace");
    sim_cmd->add_option("--corpus", sa.corpus, "descriptor file or directory")->required();
    sim_cmd->add_option("--arch", sa.arch, "architecture name")->required();
    sim_cmd->add_option("--model-seed", sa.model_seed)->required();
    sim_cmd->add_option("--trace-seed", sa.trace_seed)->required();
    sim_cmd->add_option("--out", sa.out, "output EMT1 file")->required();
    sim_cmd->add_option("--config", sa.config, "JSON config");

    DatasetArgs da;
    auto *ds_cmd = app.add_subcommand("dataset", "simulate a labeled dataset");
    ds_cmd->add_option("--corpus", da.corpus)->required();
    ds_cmd->add_option("--protocol", da.protocol, "full, desk or custom")->check(CLI::IsMember({"full", "desk", "custom"}));
    ds_cmd->add_option("--out", da.out, "output directory")->required();
    ds_cmd->add_option("--seed", da.seed);
    ds_cmd->add_option("--config", da.config);
    ds_cmd->add_option("--n-train", da.n_train, "custom: train models per class");
    ds_cmd->add_option("--n-test", da.n_test, "custom: test models per class");
    ds_cmd->add_option("--traces-train", da.traces_train, "custom: traces per train model");
    ds_cmd->add_option("--traces-test", da.traces_test, "custom: traces per test model");
    ds_cmd->add_option("--window", da.window, "store envelopes of this window instead of raw traces");
    ds_cmd->add_option("--threads", da.threads);

    PreprocessArgs pa;
    auto *pre_cmd = app.add_subcommand("preprocess", "envelope + normalize one trace");
    pre_cmd->add_option("--in", pa.in)->required();
    pre_cmd->add_option("--out", pa.out)->required();
    pre_cmd->add_option("--window", pa.window);
    pre_cmd->add_option("--normalize", pa.normalize)->check(CLI::IsMember({"none", "zscore", "maxabs"}));
    pre_cmd->add_option("--target-len", pa.target_len);
    pre_cmd->add_option("--pad-policy", pa.pad_policy)->check(CLI::IsMember({"zero_pad_right", "truncate_right"}));

    TrainArgs ta;
    auto *train_cmd = app.add_subcommand("train", "train the classifier on a dataset");
    train_cmd->add_option("--dataset", ta.dataset)->required();
    train_cmd->add_option("--out", ta.out, "checkpoint file")->required();
    train_cmd->add_option("--config", ta.config);
    train_cmd->add_option("--epochs", ta.epochs);
    train_cmd->add_option("--lr", ta.lr);
    train_cmd->add_option("--batch", ta.batch);
    train_cmd->add_option("--patience", ta.patience);
    train_cmd->add_option("--seed", ta.seed);
    train_cmd->add_option("--window", ta.window);
    train_cmd->add_option("--normalize", ta.normalize)->check(CLI::IsMember({"none", "zscore", "maxabs"}));
    train_cmd->add_option("--split-ratio", ta.split_ratio);
    train_cmd->add_option("--threads", ta.threads);

    EvalArgs ea;
    auto *eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
    eval_cmd->add_option("--model", ea.model)->required();
    eval_cmd->add_option("--dataset", ea.dataset)->required();
    eval_cmd->add_option("--report", ea.report, "output directory")->required();
    eval_cmd->add_option("--threads", ea.threads);

    AttackArgs aa;
    auto *attack_cmd = app.add_subcommand("attack", "identify the architecture behind one trace");
    attack_cmd->add_option("--model", aa.model)->required();
    attack_cmd->add_option("--trace", aa.trace)->required();
    attack_cmd->add_option("--top", aa.top, "show only the top N classes");

    SegmentArgs ga;
    auto *seg_cmd = app.add_subcommand("segment", "locate layer boundaries");
    seg_cmd->add_option("--trace", ga.trace)->required();
    seg_cmd->add_option("--svg", ga.svg)->required();
    seg_cmd->add_flag("--prefix-mode", ga.prefix_mode, "use simulated prefix networks");
    seg_cmd->add_option("--arch", ga.arch);
    seg_cmd->add_option("--corpus", ga.corpus);
    seg_cmd->add_option("--config", ga.config);
    seg_cmd->add_option("--window", ga.window);
    seg_cmd->add_option("--threshold", ga.threshold);
    seg_cmd->add_option("--min-gap", ga.min_gap);
    seg_cmd->add_option("--divergence-window", ga.divergence_window);
    seg_cmd->add_option("--json", ga.json, "write boundaries as JSON");

    HeatmapArgs ha;
    auto *heat_cmd = app.add_subcommand("heatmap", "band-power map over a probe grid");
    heat_cmd->add_option("--grid", ha.grid, "directory of <row>_<col>.emt files")->required();
    heat_cmd->add_option("--freq", ha.freq);
    heat_cmd->add_option("--bw", ha.bw);
    heat_cmd->add_option("--svg", ha.svg)->required();
    heat_cmd->add_option("--values", ha.values, "write raw band powers as JSON");
    heat_cmd->add_option("--top", ha.top, "number of strongest cells to print");

    PlotArgs la;
    auto *plot_cmd = app.add_subcommand("plot", "render a trace as SVG");
    plot_cmd->add_option("--trace", la.trace)->required();
    plot_cmd->add_option("--svg", la.svg)->required();
    plot_cmd->add_option("--boundaries", la.boundaries, "boundary JSON to overlay");
    plot_cmd->add_option("--title", la.title);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage;
    }

    try {
        if (*sim_cmd) return cmd_simulate(sa, out);
        if (*ds_cmd) return cmd_dataset(da, out);
        if (*pre_cmd) return cmd_preprocess(pa, out);
        if (*train_cmd) return cmd_train(ta, out);
        if (*eval_cmd) return cmd_eval(ea, out);
        if (*attack_cmd) return cmd_attack(aa, out);
        if (*seg_cmd) return cmd_segment(ga, out);
        if (*heat_cmd) return cmd_heatmap(ha, out);
        if (*plot_cmd) return cmd_plot(la, out);
    } catch (const Error &e) {
        err << "emx: " << e.what() << "\n";
        if (e.code() == Errc::invalid_argument)
            return usage;
        return e.is_data_error() ? data : runtime;
    } catch (const std::exception &e) {
        err << "emx: " << e.what() << "\n";
        return runtime;
    }
    return usage;
}

inline int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    std::vector<const char *> argv{"emx"};
    for (const auto &a : args)
        argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace emx::cli
