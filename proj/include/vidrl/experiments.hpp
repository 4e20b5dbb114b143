#pragma once

#include <filesystem>

#include "vidrl/metrics.hpp"

namespace vidrl {

// ---------------------------------------------------------------------------
// Config -> domain object adapters
// ---------------------------------------------------------------------------

inline ToyWorldSpec world_from(const Config& cfg) {
    ToyWorldSpec spec;
    spec.frames = cfg.frames;
    spec.channels = cfg.channels;
    spec.height = cfg.height;
    spec.width = cfg.width;
    spec.velocity = cfg.velocity;
    return spec;
}

template <class Real>
SamplerConfig<Real> sampler_from(const Config& cfg) {
    SamplerConfig<Real> s;
    s.kind = cfg.sampler == "ddpm" ? SamplerConfig<Real>::Kind::DDPM
                                   : SamplerConfig<Real>::Kind::DDIM;
    s.eta = static_cast<Real>(cfg.eta);
    s.steps = cfg.steps;
    return s;
}

template <class Real>
AlignConfig<Real> align_from(const Config& cfg) {
    AlignConfig<Real> a;
    a.grad_cutoff_K = cfg.truncate_backprop_one_step ? 1 : cfg.K;
    a.lr = static_cast<Real>(cfg.lr);
    a.grad_clip = static_cast<Real>(cfg.grad_clip);
    a.batch = cfg.batch;
    a.steps = cfg.align_steps;
    a.subsample_m = cfg.subsample_m == 0 ? cfg.frames / 2 : cfg.subsample_m;
    a.budget_queries = cfg.budget_queries;
    a.clip_eps = static_cast<Real>(cfg.clip_eps);
    a.ppo_epochs = cfg.ppo_epochs;
    a.dpo_beta = static_cast<Real>(cfg.dpo_beta);
    a.pairs_per_step = cfg.pairs;
    return a;
}

template <class Real>
RewardSuite<Real> suite_from(const Config& cfg, std::shared_ptr<const RewardHeads<Real>> heads) {
    RewardSuite<Real> suite;
    suite.spec = world_from(cfg);
    for (std::size_t i = 0; i < cfg.reward.size(); ++i) {
        RewardModel<Real> m;
        m.kind = reward_kind_from(cfg.reward[i]);
        m.heads = heads;
        m.target = cfg.target;
        m.mask_ratio = cfg.mask_ratio;
        m.agg_sum = cfg.reward_agg == "sum";
        if (m.kind != RewardKind::Brightness && !heads)
            throw ConfigError("reward '" + cfg.reward[i] + "' needs trained discriminators");
        suite.models.push_back(std::move(m));
        suite.weights.push_back(i < cfg.reward_weights.size()
                                    ? static_cast<Real>(cfg.reward_weights[i])
                                    : Real(1));
    }
    return suite;
}

// ---------------------------------------------------------------------------
// Output layout
// ---------------------------------------------------------------------------

inline std::string res_tag(std::size_t h, std::size_t w) {
    return std::to_string(h) + "x" + std::to_string(w);
}
inline std::string base_ckpt_path(const Config& cfg, std::size_t h, std::size_t w) {
    return cfg.outdir + "/base_" + res_tag(h, w) +
           (cfg.conditioning == "first_frame" ? "_ff" : "") + ".ckpt";
}
inline std::string heads_ckpt_path(const Config& cfg, std::size_t h, std::size_t w) {
    return cfg.outdir + "/heads_" + res_tag(h, w) + ".ckpt";
}

inline void prepare_outdir(const Config& cfg) {
    std::filesystem::create_directories(cfg.outdir);
    std::ofstream echo(cfg.outdir + "/config_echo.cfg", std::ios::trunc);
    if (!echo) throw ConfigError("cannot write config echo under '" + cfg.outdir + "'");
    echo << serialize_config(cfg);
}

// ---------------------------------------------------------------------------
// pretrain: dataset -> discriminators + denoising-pretrained base model
// ---------------------------------------------------------------------------

template <class Real>
void run_pretrain(const Config& cfg) {
    prepare_outdir(cfg);
    const ToyWorldSpec spec = world_from(cfg);
    const CondMode mode =
        cfg.conditioning == "first_frame" ? CondMode::FirstFrame : CondMode::ClassLabel;
    Rng rng(static_cast<std::uint64_t>(cfg.seeds[0]));
    auto dataset = gen_toy_dataset<Real>(spec, cfg.dataset_size, rng, mode);
    auto heads = train_discriminators<Real>(dataset, spec, rng, cfg.disc_steps);
    save_heads(heads_ckpt_path(cfg, spec.height, spec.width), heads);

    auto model = DenoiserModel<Real>::create(spec.frames, spec.frame_dim(), spec.vocab(), mode,
                                             cfg.hidden, rng);
    model.grad_checkpoint = cfg.grad_checkpoint;
    auto sched = default_schedule<Real>(cfg.T);
    detail::Stopwatch clock;
    auto curve = pretrain(dataset, model, static_cast<Real>(cfg.pretrain_lr), cfg.pretrain_steps,
                          cfg.batch, sched, rng);
    save_model(base_ckpt_path(cfg, spec.height, spec.width), model);

    MetricsSink sink(cfg.outdir + "/pretrain_" + res_tag(spec.height, spec.width) + ".csv");
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (i % 10 && i + 1 != curve.size()) continue;
        MetricsRow r;
        r.experiment = cfg.experiment;
        r.algo = "pretrain";
        r.seed = cfg.seeds[0];
        r.resolution = spec.height;
        r.step = i;
        r.reward_queries = 0;
        r.wallclock_s = clock.seconds();
        r.mean_reward = double(curve[i]);  // denoising loss for this experiment
        r.std_reward = 0;
        sink.write(r);
    }
}

// ---------------------------------------------------------------------------
// Single alignment run (one algo, one seed) with periodic evaluation
// ---------------------------------------------------------------------------

template <class Real>
struct AlignedRun {
    DenoiserModel<Real> model;
    TrainResult<Real> result;
    std::vector<std::pair<std::size_t, EvalStat>> evals;  // (reward_queries, stat)
    EvalStat base_eval;
};

/// Train one aligned model from the base checkpoint. Writes training rows and
/// `-eval` rows (fixed-seed evaluation on `eval_prompts`) to `sink` when it is
/// non-null.
template <class Real>
AlignedRun<Real> run_alignment(const Config& cfg, const std::string& algo,
                               const DenoiserModel<Real>& base, const RewardSuite<Real>& suite,
                               const std::vector<Conditioning<Real>>& train_prompts,
                               const std::vector<Conditioning<Real>>& eval_prompts, long seed,
                               MetricsSink* sink) {
    auto sched = default_schedule<Real>(cfg.T);
    const auto eval_scfg = sampler_from<Real>(cfg);  // shared eval protocol
    auto scfg = eval_scfg;
    if (algo == "ddpo") scfg.kind = SamplerConfig<Real>::Kind::DDPM;  // needs stochastic chain
    AlignConfig<Real> acfg = align_from<Real>(cfg);

    AlignedRun<Real> run{base.clone(), {}, {}, {}};
    Rng lrng(static_cast<std::uint64_t>(seed) * 0x9e3779b97f4a7c15ull + 1);
    lora_attach(run.model, cfg.lora_rank, DenoiserModel<Real>::affine_layer_names(), lrng);

    const std::uint64_t eval_seed = 0xe7a1u + static_cast<std::uint64_t>(seed);
    auto do_eval = [&](std::size_t step, std::size_t queries) {
        EvalStat e = evaluate(run.model, suite, eval_prompts, sched, eval_scfg, cfg.eval_samples,
                              eval_seed);
        run.evals.emplace_back(queries, e);
        if (sink) {
            MetricsRow r;
            r.experiment = cfg.experiment + "-eval";
            r.algo = algo;
            r.seed = seed;
            r.resolution = cfg.height;
            r.step = step;
            r.reward_queries = queries;
            r.wallclock_s = 0;
            r.mean_reward = e.mean_reward;
            r.std_reward = e.std_reward;
            sink->write(r);
        }
        return e;
    };
    run.base_eval = do_eval(0, 0);

    detail::Stopwatch clock;
    const std::size_t eval_every = std::max<std::size_t>(1, cfg.eval_every);
    acfg.on_update = [&](std::size_t step, std::size_t queries) {
        if ((step + 1) % eval_every == 0) do_eval(step + 1, queries);
    };

    Rng rng(static_cast<std::uint64_t>(seed));
    if (algo == "vader") {
        run.result = train_reward_gradient(run.model, suite, train_prompts, sched, scfg, acfg, rng);
    } else if (algo == "ddpo") {
        run.result = train_policy_gradient(run.model, suite, train_prompts, sched, scfg, acfg, rng);
    } else if (algo == "dpo") {
        run.result = train_preference(run.model, suite, train_prompts, sched, scfg, acfg, rng);
    } else {
        throw ConfigError("unknown algo '" + algo + "'");
    }
    if (sink) {
        for (const auto& st : run.result.trace) {
            MetricsRow r;
            r.experiment = cfg.experiment;
            r.algo = algo;
            r.seed = seed;
            r.resolution = cfg.height;
            r.step = st.step;
            r.reward_queries = st.reward_queries;
            r.wallclock_s = st.wallclock_s;
            r.mean_reward = st.mean_reward;
            r.std_reward = st.std_reward;
            sink->write(r);
        }
    }
    // final evaluation if the last update was not already evaluated
    if (run.evals.empty() || run.evals.back().first != run.result.reward_queries)
        do_eval(run.result.trace.size(), run.result.reward_queries);
    return run;
}

/// Load the pretrained artifacts for the configured resolution.
template <class Real>
std::pair<DenoiserModel<Real>, std::shared_ptr<const RewardHeads<Real>>> load_base(
    const Config& cfg) {
    const std::string mp = base_ckpt_path(cfg, cfg.height, cfg.width);
    const std::string hp = heads_ckpt_path(cfg, cfg.height, cfg.width);
    if (!std::filesystem::exists(mp))
        throw ConfigError("missing base checkpoint '" + mp + "'; run the pretrain experiment first");
    if (!std::filesystem::exists(hp))
        throw ConfigError("missing discriminator checkpoint '" + hp + "'");
    auto model = load_model<Real>(mp);
    auto heads = std::make_shared<const RewardHeads<Real>>(load_heads<Real>(hp));
    return {std::move(model), std::move(heads)};
}

template <class Real>
std::vector<Conditioning<Real>> all_class_prompts(const ToyWorldSpec& spec) {
    std::vector<Conditioning<Real>> out;
    for (std::size_t c = 0; c < spec.vocab(); ++c) {
        Conditioning<Real> p;
        p.kind = CondMode::ClassLabel;
        p.class_index = c;
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// align: one algorithm, all seeds
// ---------------------------------------------------------------------------

template <class Real>
void run_align(const Config& cfg) {
    prepare_outdir(cfg);
    auto [base, heads] = load_base<Real>(cfg);
    auto suite = suite_from<Real>(cfg, heads);
    auto prompts = all_class_prompts<Real>(world_from(cfg));
    for (long seed : cfg.seeds) {
        MetricsSink sink(cfg.outdir + "/align_" + cfg.algo + "_seed" + std::to_string(seed) +
                         ".csv");
        auto run = run_alignment(cfg, cfg.algo, base, suite, prompts, prompts, seed, &sink);
        save_model(cfg.outdir + "/aligned_" + cfg.algo + "_seed" + std::to_string(seed) + ".ckpt",
                   run.model);
        for (const auto& w : run.result.warnings)
            std::ofstream(cfg.outdir + "/warnings.txt", std::ios::app) << w << "\n";
    }
}

// ---------------------------------------------------------------------------
// Shard merging and simple statistics
// ---------------------------------------------------------------------------

inline void merge_shards(const std::vector<std::string>& shard_paths, const std::string& merged) {
    MetricsSink out(merged);
    for (const auto& p : shard_paths)
        for (const auto& r : read_metrics(p)) out.write(r);
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw TrainError("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw TrainError("least_squares_slope: need >= 2 matching points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(x.size());
    my /= double(x.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    if (den == 0) throw TrainError("least_squares_slope: degenerate x values");
    return num / den;
}

// ---------------------------------------------------------------------------
// sweep-efficiency: reward vs queries under a shared budget
// ---------------------------------------------------------------------------

struct EfficiencySummary {
    std::map<std::string, double> median_final;           // algo -> median final eval reward
    std::map<std::string, std::size_t> median_queries_to_half;  // algo -> queries to half-improvement
    double base_reward = 0;
    std::size_t budget = 0;
    std::map<std::string, std::size_t> total_queries;  // per algo per seed parity check
    bool vader_best = false;
    bool vader_half_fast = false;
};

template <class Real>
EfficiencySummary run_efficiency_sweep(const Config& cfg_in) {
    Config cfg = cfg_in;
    if (cfg.budget_queries == 0) cfg.budget_queries = 5000;
    // the budget, not the step count, terminates each run
    cfg.align_steps = std::numeric_limits<std::size_t>::max();
    prepare_outdir(cfg);
    auto [base, heads] = load_base<Real>(cfg);
    auto suite = suite_from<Real>(cfg, heads);
    auto prompts = all_class_prompts<Real>(world_from(cfg));

    const std::vector<std::string> algos = {"vader", "ddpo", "dpo"};
    std::map<std::string, std::vector<double>> finals;
    std::map<std::string, std::vector<double>> to_half;  // per-seed queries-to-half
    std::map<std::string, std::map<long, std::vector<std::pair<std::size_t, double>>>> curves;
    std::vector<double> base_rewards;
    std::vector<std::string> shards;
    EfficiencySummary sum;
    sum.budget = cfg.budget_queries;

    for (const auto& algo : algos) {
        for (long seed : cfg.seeds) {
            const std::string shard =
                cfg.outdir + "/eff_" + algo + "_seed" + std::to_string(seed) + ".csv";
            MetricsSink sink(shard);
            auto run = run_alignment(cfg, algo, base, suite, prompts, prompts, seed, &sink);
            shards.push_back(shard);
            finals[algo].push_back(run.evals.back().second.mean_reward);
            base_rewards.push_back(run.base_eval.mean_reward);
            for (const auto& [q, e] : run.evals)
                curves[algo][seed].emplace_back(q, e.mean_reward);
            sum.total_queries[algo + "/seed" + std::to_string(seed)] = run.result.reward_queries;
        }
    }
    merge_shards(shards, cfg.outdir + "/efficiency.csv");

    sum.base_reward = median(base_rewards);
    for (const auto& algo : algos) sum.median_final[algo] = median(finals[algo]);
    const double target =
        sum.base_reward + 0.5 * (sum.median_final["vader"] - sum.base_reward);
    for (const auto& algo : algos) {
        std::vector<double> qs;
        for (long seed : cfg.seeds) {
            std::size_t q_reach = cfg.budget_queries;  // never reached -> full budget
            for (const auto& [q, r] : curves[algo][seed]) {
                if (r >= target) {
                    q_reach = q;
                    break;
                }
            }
            qs.push_back(double(q_reach));
        }
        sum.median_queries_to_half[algo] = static_cast<std::size_t>(median(qs));
    }
    sum.vader_best = sum.median_final["vader"] >= sum.median_final["ddpo"] &&
                     sum.median_final["vader"] >= sum.median_final["dpo"];
    sum.vader_half_fast =
        2 * sum.median_queries_to_half["vader"] <= sum.median_queries_to_half["ddpo"];

    // reward-vs-queries plot over the merged eval rows
    std::vector<PlotSeries> series;
    for (const auto& algo : algos) {
        PlotSeries s;
        s.label = algo + " (eval reward vs queries)";
        for (long seed : cfg.seeds)
            for (const auto& [q, r] : curves[algo][seed]) {
                s.x.push_back(double(q));
                s.y.push_back(r);
            }
        series.push_back(std::move(s));
    }
    std::ofstream plot(cfg.outdir + "/efficiency_plot.txt", std::ios::trunc);
    plot << render_ascii_plot(series, "eval reward vs reward queries", "queries", "reward");

    std::ofstream summary(cfg.outdir + "/efficiency_summary.txt", std::ios::trunc);
    summary << "budget " << sum.budget << "\nbase " << sum.base_reward << "\n";
    for (const auto& algo : algos)
        summary << algo << " final(median) " << sum.median_final[algo] << " queries_to_half "
                << sum.median_queries_to_half[algo] << "\n";
    summary << "vader_best " << (sum.vader_best ? "yes" : "no") << "\nvader_half_fast "
            << (sum.vader_half_fast ? "yes" : "no") << "\n";
    return sum;
}

// ---------------------------------------------------------------------------
// sweep-resolution: reward gap between the two arms across resolutions
// ---------------------------------------------------------------------------

struct ResolutionSummary {
    std::vector<std::size_t> resolutions;
    std::vector<double> median_gap;  // arm A reward - arm B reward
    double slope = 0;
    bool nondecreasing_ends = false;  // gap(last) >= gap(first)
};

template <class Real>
ResolutionSummary run_resolution_sweep(const Config& cfg_in, const std::string& arm_a = "vader",
                                       const std::string& arm_b = "ddpo",
                                       std::vector<std::size_t> resolutions = {8, 16, 32}) {
    Config cfg = cfg_in;
    prepare_outdir(cfg);
    ResolutionSummary sum;
    sum.resolutions = resolutions;
    std::vector<std::string> shards;
    for (std::size_t res : resolutions) {
        Config rcfg = cfg;
        rcfg.height = rcfg.width = res;
        auto [base, heads] = load_base<Real>(rcfg);
        auto suite = suite_from<Real>(rcfg, heads);
        auto prompts = all_class_prompts<Real>(world_from(rcfg));
        std::vector<double> gaps;
        for (long seed : rcfg.seeds) {
            const std::string shard = cfg.outdir + "/res_" + std::to_string(res) + "_seed" +
                                      std::to_string(seed) + ".csv";
            MetricsSink sink(shard);
            auto ra = run_alignment(rcfg, arm_a, base, suite, prompts, prompts, seed, &sink);
            auto rb = run_alignment(rcfg, arm_b, base, suite, prompts, prompts, seed, &sink);
            gaps.push_back(ra.evals.back().second.mean_reward -
                           rb.evals.back().second.mean_reward);
            shards.push_back(shard);
        }
        sum.median_gap.push_back(median(gaps));
    }
    merge_shards(shards, cfg.outdir + "/resolution.csv");
    std::vector<double> xs;
    for (std::size_t r : resolutions) xs.push_back(double(r));
    sum.slope = least_squares_slope(xs, sum.median_gap);
    sum.nondecreasing_ends = sum.median_gap.back() >= sum.median_gap.front();

    PlotSeries s;
    s.label = arm_a + " - " + arm_b + " reward gap";
    s.x = xs;
    s.y = sum.median_gap;
    std::ofstream plot(cfg.outdir + "/resolution_plot.txt", std::ios::trunc);
    plot << render_ascii_plot({s}, "reward gap vs resolution", "resolution", "gap");

    std::ofstream summary(cfg.outdir + "/resolution_summary.txt", std::ios::trunc);
    for (std::size_t i = 0; i < resolutions.size(); ++i)
        summary << resolutions[i] << " gap(median) " << sum.median_gap[i] << "\n";
    summary << "slope " << sum.slope << "\n";
    return sum;
}

// ---------------------------------------------------------------------------
// generalize: train on a disjoint prompt split, report train/test rewards
// ---------------------------------------------------------------------------

struct GeneralizationSummary {
    // algo ("base", "vader", "ddpo", "dpo") -> {train reward, test reward}
    std::map<std::string, std::pair<double, double>> table;
};

template <class Real>
GeneralizationSummary run_generalization(const Config& cfg) {
    prepare_outdir(cfg);
    auto [base, heads] = load_base<Real>(cfg);
    auto suite = suite_from<Real>(cfg, heads);
    const ToyWorldSpec spec = world_from(cfg);
    Rng split_rng(static_cast<std::uint64_t>(cfg.seeds[0]) + 0x5eedu);
    auto split = make_prompt_split<Real>(spec, std::max<std::size_t>(1, spec.vocab() / 4),
                                         split_rng);
    verify_disjoint(split);

    auto sched = default_schedule<Real>(cfg.T);
    auto scfg = sampler_from<Real>(cfg);
    const std::uint64_t eval_seed = 0xea1u;
    GeneralizationSummary sum;
    {
        EvalStat tr = evaluate(base, suite, split.train, sched, scfg, cfg.eval_samples, eval_seed);
        EvalStat te = evaluate(base, suite, split.test, sched, scfg, cfg.eval_samples, eval_seed);
        sum.table["base"] = {tr.mean_reward, te.mean_reward};
    }
    MetricsSink sink(cfg.outdir + "/generalization.csv");
    for (const std::string algo : {"vader", "ddpo", "dpo"}) {
        auto run = run_alignment(cfg, algo, base, suite, split.train, split.train, cfg.seeds[0],
                                 &sink);
        EvalStat tr =
            evaluate(run.model, suite, split.train, sched, scfg, cfg.eval_samples, eval_seed);
        EvalStat te =
            evaluate(run.model, suite, split.test, sched, scfg, cfg.eval_samples, eval_seed);
        sum.table[algo] = {tr.mean_reward, te.mean_reward};
    }
    std::ofstream table(cfg.outdir + "/generalization_table.txt", std::ios::trunc);
    table << "algo,train_reward,test_reward\n";
    for (const auto& [algo, row] : sum.table)
        table << algo << ',' << detail::fmt_metric(row.first) << ','
              << detail::fmt_metric(row.second) << "\n";
    return sum;
}

// ---------------------------------------------------------------------------
// extend: long-horizon autoregressive fine-tuning
// ---------------------------------------------------------------------------

struct ExtendSummary {
    std::vector<double> base_scores, tuned_scores;  // per seed
    bool all_improved = false;
};

template <class Real>
ExtendSummary run_extend(const Config& cfg_in) {
    Config cfg = cfg_in;
    cfg.conditioning = "first_frame";
    prepare_outdir(cfg);
    auto [base, heads_c] = load_base<Real>(cfg);
    const RewardHeads<Real>& heads = *heads_c;
    if (base.cond_mode != CondMode::FirstFrame)
        throw ConfigError("extend: base checkpoint is not frame-conditioned; pretrain with "
                          "conditioning = first_frame");
    const ToyWorldSpec spec = world_from(cfg);
    auto sched = default_schedule<Real>(cfg.T);
    auto scfg = sampler_from<Real>(cfg);
    ExtendSummary sum;
    MetricsSink sink(cfg.outdir + "/extend.csv");
    for (long seed : cfg.seeds) {
        Rng rng(static_cast<std::uint64_t>(seed));
        auto dataset = gen_toy_dataset<Real>(spec, 64, rng, CondMode::FirstFrame);
        const std::uint64_t eval_seed = 0xe8u + static_cast<std::uint64_t>(seed);
        EvalStat before = evaluate_extension(base, heads, dataset, cfg.rounds, sched, scfg,
                                             cfg.eval_samples, eval_seed);
        auto model = base.clone();
        Rng lrng(static_cast<std::uint64_t>(seed) + 0x10ad);
        lora_attach(model, cfg.lora_rank, DenoiserModel<Real>::affine_layer_names(), lrng);
        AlignConfig<Real> acfg = align_from<Real>(cfg);
        auto result = train_extension(model, heads, dataset, cfg.rounds, sched, scfg, acfg, rng);
        EvalStat after = evaluate_extension(model, heads, dataset, cfg.rounds, sched, scfg,
                                            cfg.eval_samples, eval_seed);
        sum.base_scores.push_back(before.mean_reward);
        sum.tuned_scores.push_back(after.mean_reward);
        for (const auto& st : result.trace) {
            MetricsRow r;
            r.experiment = cfg.experiment;
            r.algo = "vader";
            r.seed = seed;
            r.resolution = cfg.height;
            r.step = st.step;
            r.reward_queries = st.reward_queries;
            r.wallclock_s = st.wallclock_s;
            r.mean_reward = st.mean_reward;
            r.std_reward = st.std_reward;
            sink.write(r);
        }
        MetricsRow r;
        r.experiment = cfg.experiment + "-eval";
        r.algo = "vader";
        r.seed = seed;
        r.resolution = cfg.height;
        r.step = result.trace.size();
        r.reward_queries = result.reward_queries;
        r.wallclock_s = 0;
        r.mean_reward = after.mean_reward;
        r.std_reward = after.std_reward;
        sink.write(r);
        save_model(cfg.outdir + "/extended_seed" + std::to_string(seed) + ".ckpt", model);
    }
    sum.all_improved = true;
    for (std::size_t i = 0; i < sum.base_scores.size(); ++i)
        if (!(sum.tuned_scores[i] > sum.base_scores[i])) sum.all_improved = false;
    std::ofstream summary(cfg.outdir + "/extend_summary.txt", std::ios::trunc);
    for (std::size_t i = 0; i < sum.base_scores.size(); ++i)
        summary << "seed " << cfg.seeds[i] << " base " << sum.base_scores[i] << " tuned "
                << sum.tuned_scores[i] << "\n";
    summary << "all_improved " << (sum.all_improved ? "yes" : "no") << "\n";
    return sum;
}

// ---------------------------------------------------------------------------
// eval: score an existing checkpoint
// ---------------------------------------------------------------------------

template <class Real>
EvalStat run_eval(const Config& cfg, const std::string& model_path = "") {
    prepare_outdir(cfg);
    const std::string mp =
        model_path.empty() ? base_ckpt_path(cfg, cfg.height, cfg.width) : model_path;
    if (!std::filesystem::exists(mp)) throw ConfigError("missing checkpoint '" + mp + "'");
    auto model = load_model<Real>(mp);
    auto heads = std::make_shared<const RewardHeads<Real>>(
        load_heads<Real>(heads_ckpt_path(cfg, cfg.height, cfg.width)));
    auto suite = suite_from<Real>(cfg, heads);
    auto prompts = all_class_prompts<Real>(world_from(cfg));
    auto sched = default_schedule<Real>(cfg.T);
    auto scfg = sampler_from<Real>(cfg);
    EvalStat e = evaluate(model, suite, prompts, sched, scfg, cfg.eval_samples,
                          static_cast<std::uint64_t>(cfg.seeds[0]));
    MetricsSink sink(cfg.outdir + "/eval.csv");
    MetricsRow r;
    r.experiment = cfg.experiment;
    r.algo = cfg.algo;
    r.seed = cfg.seeds[0];
    r.resolution = cfg.height;
    r.step = 0;
    r.reward_queries = 0;
    r.wallclock_s = 0;
    r.mean_reward = e.mean_reward;
    r.std_reward = e.std_reward;
    sink.write(r);
    return e;
}

// ---------------------------------------------------------------------------
// plot: render an existing metrics CSV
// ---------------------------------------------------------------------------

inline void run_plot(const std::string& csv_path, const std::string& out_path) {
    auto rows = read_metrics(csv_path);
    std::map<std::string, PlotSeries> by_algo;
    for (const auto& r : rows) {
        auto& s = by_algo[r.algo];
        s.label = r.algo;
        s.x.push_back(double(r.reward_queries));
        s.y.push_back(r.mean_reward);
    }
    std::vector<PlotSeries> series;
    for (auto& [_, s] : by_algo) series.push_back(std::move(s));
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write plot file '" + out_path + "'");
    out << render_ascii_plot(series, "mean reward vs reward queries", "queries", "reward");
}

}  // namespace vidrl
