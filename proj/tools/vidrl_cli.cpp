// Command-line front end: pretrain / align / eval / sweep / extend / plot.
// Exit codes: 0 success, 1 config error, 2 runtime error, 3 failed trend
// assertion under `sweep --assert`.

#include <CLI11.hpp>
#include <iostream>

#include "vidrl/experiments.hpp"

using Real = float;  // production runs use 32-bit scalars

namespace {

vidrl::Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    vidrl::Config cfg = vidrl::parse_config_file(path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw vidrl::ConfigError("--set expects key=value, got '" + kv + "'");
        vidrl::config_set(cfg, vidrl::detail::trim(kv.substr(0, eq)),
                          vidrl::detail::trim(kv.substr(eq + 1)), "--set " + kv);
    }
    vidrl::config_validate(cfg, path);
    return cfg;
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)")
        ->required();
    cmd->add_option("--set", opts.overrides, "override config keys as key=value")
        ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy video diffusion alignment workbench"};
    app.require_subcommand(1);

    CommonOpts pre_o, align_o, eval_o, sweep_o, extend_o;
    bool sweep_assert = false;
    std::string plot_csv, plot_out;
    std::string eval_model;

    auto* pre = app.add_subcommand("pretrain", "train discriminators and the base denoiser");
    add_common(pre, pre_o);
    auto* al = app.add_subcommand("align", "fine-tune the base model against a reward");
    add_common(al, align_o);
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the configured reward");
    add_common(ev, eval_o);
    ev->add_option("--model", eval_model, "checkpoint to evaluate (default: base checkpoint)");
    auto* sw = app.add_subcommand("sweep", "run the efficiency or resolution sweep");
    add_common(sw, sweep_o);
    sw->add_flag("--assert", sweep_assert, "exit 3 when the expected trend does not hold");
    auto* ex = app.add_subcommand("extend", "long-horizon autoregressive fine-tuning");
    add_common(ex, extend_o);
    auto* pl = app.add_subcommand("plot", "render a metrics CSV as a plaintext chart");
    pl->add_option("--csv", plot_csv, "metrics CSV to plot")->required();
    pl->add_option("--out", plot_out, "output plot path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 1 : 0;
    }

    try {
        if (pre->parsed()) {
            vidrl::Config cfg = load_config(pre_o.config_path, pre_o.overrides);
            vidrl::run_pretrain<Real>(cfg);
        } else if (al->parsed()) {
            vidrl::Config cfg = load_config(align_o.config_path, align_o.overrides);
            vidrl::run_align<Real>(cfg);
        } else if (ev->parsed()) {
            vidrl::Config cfg = load_config(eval_o.config_path, eval_o.overrides);
            vidrl::EvalStat e = vidrl::run_eval<Real>(cfg, eval_model);
            std::cout << "mean_reward " << e.mean_reward << " std_reward " << e.std_reward
                      << " samples " << e.samples << "\n";
        } else if (sw->parsed()) {
            vidrl::Config cfg = load_config(sweep_o.config_path, sweep_o.overrides);
            if (cfg.experiment == "sweep-efficiency") {
                auto sum = vidrl::run_efficiency_sweep<Real>(cfg);
                std::cout << "vader_best " << (sum.vader_best ? "yes" : "no")
                          << " vader_half_fast " << (sum.vader_half_fast ? "yes" : "no") << "\n";
                if (sweep_assert && !(sum.vader_best && sum.vader_half_fast)) {
                    std::cerr << "trend assertion failed: see " << cfg.outdir
                              << "/efficiency_summary.txt\n";
                    return 3;
                }
            } else if (cfg.experiment == "sweep-resolution") {
                auto sum = vidrl::run_resolution_sweep<Real>(cfg);
                std::cout << "gap_slope " << sum.slope << "\n";
                if (sweep_assert && !(sum.slope >= 0)) {
                    std::cerr << "trend assertion failed: gap slope " << sum.slope << " < 0\n";
                    return 3;
                }
            } else if (cfg.experiment == "generalize") {
                auto sum = vidrl::run_generalization<Real>(cfg);
                bool ok = true;
                const auto& base = sum.table.at("base");
                const auto& vader = sum.table.at("vader");
                ok = vader.first > base.first && vader.second > base.second;
                std::cout << "vader_beats_base " << (ok ? "yes" : "no") << "\n";
                if (sweep_assert && !ok) {
                    std::cerr << "trend assertion failed: see " << cfg.outdir
                              << "/generalization_table.txt\n";
                    return 3;
                }
            } else {
                throw vidrl::ConfigError(
                    "sweep requires experiment = sweep-efficiency, sweep-resolution, or "
                    "generalize");
            }
        } else if (ex->parsed()) {
            vidrl::Config cfg = load_config(extend_o.config_path, extend_o.overrides);
            auto sum = vidrl::run_extend<Real>(cfg);
            std::cout << "all_improved " << (sum.all_improved ? "yes" : "no") << "\n";
        } else if (pl->parsed()) {
            vidrl::run_plot(plot_csv, plot_out);
        }
    } catch (const vidrl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
