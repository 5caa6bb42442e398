// skiplab: detached skip-link fusion laboratory CLI.
//
// Subcommands: train, dynamics, ablate, lrsweep, probe, theory, plot.
// A single JSON config document configures any suite; every field is
// overridable from the command line. Exit codes: 0 success, 2 config
// error, 3 numeric failure, 4 IO error.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "skiplab/runlab.hpp"
#include "skiplab/theory.hpp"

using namespace skiplab;

namespace {

std::string resolve_out(const std::string& out_dir) {
    const char* root = std::getenv("SKIPLAB_OUT");
    if (root && *root && !std::filesystem::path(out_dir).is_absolute())
        return (std::filesystem::path(root) / out_dir).string();
    return out_dir;
}

ExperimentSpec load_spec(const std::string& config_path) {
    ExperimentSpec spec;
    if (config_path.empty()) return spec;
    std::ifstream in(config_path);
    if (!in) throw io_error("cannot open config " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error("config parse error in " + config_path + ": " + e.what());
    }
    try {
        spec = j.get<ExperimentSpec>();
    } catch (const json::exception& e) {
        throw config_error("config schema error in " + config_path + ": " + e.what());
    }
    return spec;
}

// Timestamps are confined to this sidecar so metric files stay
// byte-reproducible.
void write_meta(const std::string& dir, const std::string& suite) {
    auto now = std::chrono::system_clock::now().time_since_epoch();
    long long ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    JsonlWriter meta(dir + "/meta.json");
    JsonLine l;
    l.text("suite", suite).integer("wallclock_ms_epoch", ms);
    meta.line(l);
}

void echo_spec(const ExperimentSpec& spec, const std::string& dir) {
    ensure_parent_dir(dir + "/spec.json");
    std::ofstream out(dir + "/spec.json");
    if (!out) throw io_error("cannot open " + dir + "/spec.json for writing");
    json j = spec;
    out << j.dump(2) << "\n";
}

std::vector<double> parse_doubles(const std::vector<std::string>& raw) {
    std::vector<double> out;
    for (const auto& s : raw) out.push_back(std::stod(s));
    return out;
}

int run_train(ExperimentSpec spec, int export_attn_block) {
    spec.suite = "train";
    std::string dir = resolve_out(spec.out_dir) + "/train";
    std::vector<TrainingRun> runs(spec.seeds.size());
    run_parallel(static_cast<int>(spec.seeds.size()),
                 [&](int i) { runs[i] = run_training(spec, spec.seeds[i]); });
    emit_training(spec, runs, dir);
    echo_spec(spec, dir);
    write_meta(dir, "train");

    if (export_attn_block > 0) {
        Rng init_rng = Rng(spec.seeds[0]).derive("init");
        FusionModel model(spec.fusion, init_rng);
        Rng rng = Rng(spec.seeds[0]).derive("attn");
        std::vector<Tensor> images;
        std::vector<std::vector<int>> labels;
        downstream_task_batch(detail::run_dataset(spec, spec.seeds[0]), 1, 0, images, labels);
        AttentionMap map = attention_map_export(model, images[0], export_attn_block, rng);
        write_pgm(dir + "/attn_block" + std::to_string(export_attn_block) + ".pgm",
                  attention_map_image(map, spec.fusion.image_size));
        write_pgm(dir + "/attn_input.pgm", images[0]);
    }

    bool aborted = false;
    for (const auto& r : runs)
        if (r.aborted) {
            aborted = true;
            std::cerr << "run seed " << r.seed << " aborted: " << r.abort_reason << "\n";
        }
    for (const auto& r : runs)
        if (!r.losses.empty())
            std::cout << "seed " << r.seed << ": first " << fmt17(r.losses.front()) << " final "
                      << fmt17(r.final_loss()) << "\n";
    return aborted ? 3 : 0;
}

int run_dynamics(ExperimentSpec spec) {
    spec.suite = "dynamics";
    std::string dir = resolve_out(spec.out_dir) + "/dynamics";
    std::vector<DynamicsRun> runs(spec.seeds.size());
    run_parallel(static_cast<int>(spec.seeds.size()),
                 [&](int i) { runs[i] = run_grad_dynamics(spec, spec.seeds[i]); });
    for (const auto& run : runs) emit_dynamics(spec, run, dir);
    echo_spec(spec, dir);
    write_meta(dir, "dynamics");

    JsonlWriter summary(dir + "/summary.jsonl");
    for (const auto& run : runs) {
        JsonLine l;
        l.integer("seed", static_cast<long long>(run.seed))
            .text("group", run.group)
            .opt_int("t_trans", run.transition.t_trans)
            .integer("window", spec.window)
            .integer("consecutive", spec.consecutive)
            .integer("ma_horizon", spec.ma_horizon);
        if (run.early_assumption) {
            const auto& a = *run.early_assumption;
            l.opt_num("c_hat", a.c_hat)
                .opt_num("rho_hat", a.rho_hat)
                .num("delta_hat", a.delta_hat)
                .num("mean_inner", a.mean_inner)
                .num("cos_means", a.cos_means);
        }
        summary.line(l);
        std::cout << "seed " << run.seed << ": t_trans "
                  << (run.transition.t_trans ? std::to_string(*run.transition.t_trans) : "/") << "\n";
    }
    return 0;
}

int run_ablate(ExperimentSpec spec, const std::vector<int>& strides, const std::vector<int>& detaches) {
    spec.suite = "ablate";
    std::string dir = resolve_out(spec.out_dir) + "/ablate";
    GridReport report = run_ablation_grid(spec, strides, detaches);
    emit_grid(report, dir);
    echo_spec(spec, dir);
    write_meta(dir, "ablate");
    std::cout << "baseline " << fmt17(report.baseline_loss) << " no-fusion "
              << fmt17(report.nofusion_loss) << "\n";
    for (const auto& c : report.cells)
        if (c.valid)
            std::cout << "S=" << c.stride << " D=" << c.detach << " loss " << fmt17(c.mean_final_loss)
                      << " delta " << fmt17(c.delta_vs_baseline) << "\n";
        else
            std::cout << "S=" << c.stride << " D=" << c.detach << " skipped (" << c.skip_reason << ")\n";
    return 0;
}

int run_sweep(ExperimentSpec spec, const std::vector<double>& lrs) {
    spec.suite = "lrsweep";
    std::string dir = resolve_out(spec.out_dir) + "/lrsweep";
    auto rows = run_lr_sweep(spec, lrs);
    emit_lr_sweep(rows, dir);
    echo_spec(spec, dir);
    write_meta(dir, "lrsweep");
    for (const auto& r : rows)
        std::cout << "lr " << fmt17(r.lr) << " seed " << r.seed << " t_trans "
                  << (r.t_trans ? std::to_string(*r.t_trans) : "/") << " median cos "
                  << fmt17(r.median_cos) << " median delta " << fmt17(r.median_delta) << "\n";
    return 0;
}

int run_probe_suite(ExperimentSpec spec) {
    spec.suite = "probe";
    std::string dir = resolve_out(spec.out_dir) + "/probe";
    std::vector<ReconSample> samples;
    for (int i = 0; i < spec.dataset.count; ++i) samples.push_back(probe_sample(spec.dataset, i));

    Rng enc_rng = Rng(spec.seeds[0]).derive("probe-encoder");
    ProbeEncoderConfig ecfg;
    ecfg.image_size = spec.dataset.image_size;
    ProbeEncoder encoder(ecfg, enc_rng);
    int merged_dim = 4 * ecfg.hidden_dim;

    // modality ablation, per seed
    CsvWriter modality(dir + "/modality.csv",
                       {"seed", "setting", "mask_image", "drop_text", "final_loss", "steps_to_tau"});
    JsonlWriter losses(dir + "/probe_losses.jsonl");
    const char* names[4] = {"masked_notext", "masked_text", "full_notext", "full_text"};
    for (uint64_t seed : spec.seeds) {
        ProbeAdapter identity = ProbeAdapter::identity(merged_dim);
        auto cells = modality_ablation(encoder, identity, samples, spec.probe, seed);
        for (size_t i = 0; i < cells.size(); ++i) {
            modality.row({std::to_string(seed), names[i], cells[i].mask_image ? "1" : "0",
                          cells[i].drop_text ? "1" : "0", fmt17(cells[i].final_loss),
                          cells[i].run.steps_to_tau ? std::to_string(*cells[i].run.steps_to_tau) : "/"});
            std::string run_id = "seed" + std::to_string(seed) + "-" + names[i];
            for (size_t s = 0; s < cells[i].run.losses.size(); ++s) {
                JsonLine l;
                l.text("run_id", run_id)
                    .integer("step", static_cast<long long>(s))
                    .num("mse", cells[i].run.losses[s]);
                losses.line(l);
            }
        }
    }

    // adapter sensitivity on the first seed
    Rng ad_rng = Rng(spec.seeds[0]).derive("adapters");
    std::vector<ProbeAdapter> adapters = {
        ProbeAdapter::identity(merged_dim), ProbeAdapter::bottleneck(merged_dim, 1, merged_dim, ad_rng),
        ProbeAdapter::bottleneck(merged_dim, 4, merged_dim, ad_rng),
        ProbeAdapter::bottleneck(merged_dim, 16, merged_dim, ad_rng)};
    auto ranked = adapter_sensitivity(encoder, adapters, samples, spec.probe, spec.seeds[0]);
    CsvWriter ad_csv(dir + "/adapters.csv", {"rank", "adapter", "width", "final_loss", "steps_to_tau"});
    for (size_t i = 0; i < ranked.size(); ++i)
        ad_csv.row({std::to_string(i + 1), ranked[i].name, std::to_string(ranked[i].width),
                    fmt17(ranked[i].final_loss),
                    ranked[i].steps_to_tau ? std::to_string(*ranked[i].steps_to_tau) : "/"});

    // reconstruction images: retrain briefly with the identity adapter and
    // export prediction next to the target
    {
        ProbeAdapter identity = ProbeAdapter::identity(merged_dim);
        ProbeConfig pcfg = spec.probe;
        Rng dec_rng(spec.seeds[0]);
        PreparedSample prep = prepare_sample(encoder, identity, samples[0], pcfg);
        ProbeDecoder dec(pcfg, 64, dec_rng);
        AdamWConfig ocfg;
        ocfg.lr = pcfg.lr;
        ocfg.weight_decay = pcfg.weight_decay;
        AdamW opt(ocfg);
        std::vector<PreparedSample> preps;
        for (int i = 0; i < std::min<int>(8, static_cast<int>(samples.size())); ++i)
            preps.push_back(prepare_sample(encoder, identity, samples[i], pcfg));
        for (int step = 0; step < pcfg.steps; ++step) {
            std::vector<const PreparedSample*> batch;
            for (int b = 0; b < pcfg.batch; ++b)
                batch.push_back(&preps[(step * pcfg.batch + b) % preps.size()]);
            probe_step(dec, opt, batch, false, false);
        }
        Tape t;
        ParamBind bind;
        Tensor pred;
        probe_sample_loss(t, bind, dec, prep, false, false, &pred);
        int cell_px = ecfg.patch_size * 2;
        write_pgm(dir + "/recon_sample0.pgm",
                  assemble_region(prep.layout, pred, ecfg.grid_side() / 2, cell_px));
        write_pgm(dir + "/target_sample0.pgm",
                  assemble_region(prep.layout, prep.target_pixels, ecfg.grid_side() / 2, cell_px));
    }

    echo_spec(spec, dir);
    write_meta(dir, "probe");
    std::cout << "probe reports written to " << dir << "\n";
    return 0;
}

int run_theory(ExperimentSpec spec) {
    spec.suite = "theory";
    std::string dir = resolve_out(spec.out_dir) + "/theory";
    JsonlWriter reports(dir + "/checks.jsonl");
    int failures = 0;
    auto report = [&](const std::string& check, const std::string& params, double target,
                      double estimate, double stderr_v, bool pass) {
        JsonLine l;
        l.text("check", check)
            .text("params", params)
            .num("target", target)
            .num("estimate", estimate)
            .num("stderr", stderr_v)
            .boolean("pass", pass);
        reports.line(l);
        if (!pass) ++failures;
    };

    uint64_t seed = spec.seeds[0];
    Rng rng(seed);

    // Bayes-risk gap: Monte-Carlo vs closed form over random models
    for (int i = 0; i < 20; ++i) {
        GaussianTriplet m;
        m.alpha = rng.normal();
        m.beta = rng.normal();
        m.corr_ab = 1.8 * rng.uniform() - 0.9;
        m.sigma_noise = rng.uniform() * 2.0;
        double target = bayes_gap_analytic(m);
        BayesGapEstimate est = bayes_gap_monte_carlo(m, 200000, Rng(seed).derive("mc:bayes:" + std::to_string(i)).next_u64());
        bool pass = std::abs(est.risk_diff - target) <= 3.0 * est.risk_diff_se + 1e-12 &&
                    est.forms_agree && est.risk_diff >= -3.0 * est.risk_diff_se;
        char params[128];
        std::snprintf(params, sizeof(params), "alpha=%.3f beta=%.3f corr=%.3f sigma=%.3f", m.alpha,
                      m.beta, m.corr_ab, m.sigma_noise);
        report("bayes_gap", params, target, est.risk_diff, est.risk_diff_se, pass);
    }

    // second-moment identity over random joint models
    for (int i = 0; i < 20; ++i) {
        PathGradModel m = random_path_model(3, rng);
        SecondMomentReport rep = second_moment_check(m, 100000, Rng(seed).derive("mc:moment:" + std::to_string(i)).next_u64());
        report("second_moment", "random psd d=3", rep.target, rep.empirical, rep.se, rep.pass);
    }

    // one-step bound: exact quadratic and noisy estimators
    {
        QuadraticProblem prob;
        prob.smoothness = 1.0;
        prob.theta0 = {1.0, 1.0};
        GradEstimator exact{prob.grad(prob.theta0), SquareMatrix(2)};
        OneStepReport rep = one_step_check(prob, exact, 0.1, 1, seed);
        report("one_step_exact", "L=1 |theta0|^2=2 gamma=0.1", rep.rhs_bound, rep.lhs_mean, 0.0,
               rep.abs_gap < 1e-12);
        GradEstimator noisy{prob.grad(prob.theta0), SquareMatrix::identity(2)};
        OneStepReport rep2 = one_step_check(prob, noisy, 0.2, 100000, seed + 1);
        report("one_step_noisy", "unit isotropic noise gamma=0.2", rep2.rhs_bound, rep2.lhs_mean,
               rep2.lhs_se, rep2.pass);
    }

    // detach decision tournament on margin-filtered tight quadratics
    {
        int agree = 0, checked = 0, attempts = 0;
        while (checked < 50 && attempts < 600) {
            ++attempts;
            PathGradModel m = random_path_model(3, rng);
            QuadraticProblem prob;
            prob.smoothness = 1.0;
            prob.theta0 = m.m;
            DetachConditionReport rep =
                detach_condition_check(prob, m, 0.3, 400000, Rng(seed).derive("mc:detach:" + std::to_string(attempts)).next_u64());
            if (rep.relative_margin <= 0.05 || !rep.decisive) continue;
            ++checked;
            if (rep.agree) ++agree;
        }
        report("detach_condition_tournament", "50 margin-filtered tight quadratics",
               static_cast<double>(checked), static_cast<double>(agree), 0.0,
               checked == 50 && agree == checked);
    }

    echo_spec(spec, dir);
    write_meta(dir, "theory");
    std::cout << (failures == 0 ? "all theory checks passed" : "THEORY CHECK FAILURES") << " ("
              << failures << " failures)\n";
    return 0;
}

int run_plot(const std::string& in_path, const std::string& out_path, const std::string& x_field,
             std::vector<std::string> y_fields) {
    std::ifstream in(in_path);
    if (!in) throw io_error("cannot open " + in_path);
    if (y_fields.empty()) y_fields = {"loss"};
    SvgPanel panel{in_path, x_field, "value", {}};
    std::vector<SvgSeries> series(y_fields.size());
    for (size_t i = 0; i < y_fields.size(); ++i) series[i].name = y_fields[i];
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw config_error("bad JSONL line in " + in_path + ": " + e.what());
        }
        if (!j.contains(x_field)) continue;
        for (size_t i = 0; i < y_fields.size(); ++i) {
            if (!j.contains(y_fields[i]) || j[y_fields[i]].is_null()) continue;
            series[i].xs.push_back(j[x_field].get<double>());
            series[i].ys.push_back(j[y_fields[i]].get<double>());
        }
    }
    for (const auto& s : series)
        if (!s.xs.empty()) panel.series.push_back(s);
    if (panel.series.empty()) throw config_error("no plottable records in " + in_path);
    emit_svg_plot(out_path, {panel});
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"detached skip-link fusion laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed_override;
    std::optional<int> steps_override;
    std::optional<std::string> out_override;
    app.add_option("--config", config_path, "JSON config file (ExperimentSpec document)");
    app.add_option("--seed", seed_override, "replace the seed list with a single seed");
    app.add_option("--steps", steps_override, "override step count");
    app.add_option("--out", out_override, "override output directory");

    auto* train = app.add_subcommand("train", "dense glyph-task training");
    int export_attn = 0;
    train->add_option("--export-attn", export_attn, "export an attention map PGM for this block");

    auto* dynamics = app.add_subcommand("dynamics", "pathwise gradient dynamics capture");

    auto* ablate = app.add_subcommand("ablate", "stride x detach ablation grid");
    std::vector<int> strides = {2, 4, 8};
    std::vector<int> detaches = {0, 1, 2};
    ablate->add_option("--strides", strides, "stride values")->delimiter(',');
    ablate->add_option("--detach-counts", detaches, "detach counts")->delimiter(',');

    auto* lrsweep = app.add_subcommand("lrsweep", "learning-rate robustness sweep");
    std::vector<std::string> lr_strings = {"2e-3", "6e-3", "2e-2"};
    lrsweep->add_option("--lrs", lr_strings, "learning rates")->delimiter(',');

    auto* probe_cmd = app.add_subcommand("probe", "reconstruction probe suites");
    auto* theory = app.add_subcommand("theory", "numerical verification battery");

    auto* plot = app.add_subcommand("plot", "render a metrics JSONL to SVG");
    std::string plot_in, plot_out = "plot.svg", plot_x = "step";
    std::vector<std::string> plot_fields;
    plot->add_option("--in", plot_in, "input metrics JSONL")->required();
    plot->add_option("--out-file", plot_out, "output SVG path");
    plot->add_option("--x", plot_x, "x field");
    plot->add_option("--fields", plot_fields, "y fields to plot")->delimiter(',');

    // fusion overrides shared by the experiment suites
    std::optional<int> opt_stride, opt_detach, opt_blocks;
    std::optional<double> opt_skip_scale, opt_lr, opt_dropout;
    for (auto* cmd : {train, dynamics, ablate, lrsweep}) {
        cmd->add_option("--stride", opt_stride, "tap stride S");
        cmd->add_option("--detach", opt_detach, "detach count D");
        cmd->add_option("--blocks", opt_blocks, "encoder depth K");
        cmd->add_option("--skip-scale", opt_skip_scale, "skip feature multiplier");
        cmd->add_option("--lr", opt_lr, "learning rate");
        cmd->add_option("--dropout", opt_dropout, "encoder dropout probability");
    }

    for (auto* cmd : {train, dynamics, ablate, lrsweep, probe_cmd, theory, plot}) cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentSpec spec = load_spec(config_path);
        if (seed_override) spec.seeds = {*seed_override};
        if (steps_override) spec.steps = *steps_override;
        if (out_override) spec.out_dir = *out_override;
        if (opt_stride) spec.fusion.stride = *opt_stride;
        if (opt_detach) spec.fusion.detach_count = *opt_detach;
        if (opt_blocks) spec.fusion.total_blocks = *opt_blocks;
        if (opt_skip_scale) spec.fusion.skip_scale = *opt_skip_scale;
        if (opt_lr) spec.optim.lr = *opt_lr;
        if (opt_dropout) spec.fusion.dropout_p = *opt_dropout;

        if (train->parsed()) return run_train(spec, export_attn);
        if (dynamics->parsed()) return run_dynamics(spec);
        if (ablate->parsed()) return run_ablate(spec, strides, detaches);
        if (lrsweep->parsed()) return run_sweep(spec, parse_doubles(lr_strings));
        if (probe_cmd->parsed()) return run_probe_suite(spec);
        if (theory->parsed()) return run_theory(spec);
        if (plot->parsed()) return run_plot(plot_in, plot_out, plot_x, plot_fields);
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
