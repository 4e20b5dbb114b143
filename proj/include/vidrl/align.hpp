#pragma once

#include <chrono>

#include "vidrl/rewards.hpp"

namespace vidrl {

// ---------------------------------------------------------------------------
// Shared trainer plumbing
// ---------------------------------------------------------------------------

/// One row of the training trace: reward statistics of the clips generated
/// (and scored) at this update, plus the cumulative reward-query count.
struct StepStat {
    std::size_t step = 0;
    std::size_t reward_queries = 0;
    double wallclock_s = 0;
    double mean_reward = 0;
    double std_reward = 0;
};

struct EvalStat {
    double mean_reward = 0;
    double std_reward = 0;
    std::size_t samples = 0;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    sd = 0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Score every clip of a sampled batch under the reward suite. `x` is
/// [B*N, frame_dim]; returns one scalar tensor per clip. Frame-level rewards
/// see only `subsample_m` randomly chosen frames when 0 < m < N.
template <class Real>
std::vector<Tensor<Real>> score_clips(const Tensor<Real>& x,
                                      const std::vector<Conditioning<Real>>& conds,
                                      const RewardSuite<Real>& suite, std::size_t frames,
                                      std::size_t subsample_m, Rng& rng) {
    const std::size_t B = conds.size();
    std::vector<Tensor<Real>> out;
    out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        Tensor<Real> clip = slice_rows(x, b * frames, (b + 1) * frames);
        std::vector<std::size_t> idx;
        if (subsample_m > 0 && subsample_m < frames)
            idx = subsample_frames(frames, subsample_m, rng);
        out.push_back(suite.evaluate(clip, conds[b], idx, &rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reward-gradient trainer (backprop through the last K sampler steps)
// ---------------------------------------------------------------------------

template <class Real>
struct AlignConfig {
    std::size_t grad_cutoff_K = 10;
    Real lr = static_cast<Real>(1e-4);
    Real grad_clip = Real(10);
    std::size_t batch = 8;
    std::size_t steps = 100;
    std::size_t subsample_m = 0;  // 0 = use all frames
    std::size_t budget_queries = 0;  // 0 = unlimited
    // PPO-specific
    Real clip_eps = static_cast<Real>(0.2);
    std::size_t ppo_epochs = 1;
    // DPO-specific
    Real dpo_beta = Real(500);
    std::size_t pairs_per_step = 4;
    std::size_t pair_refresh = 10;  // updates between preference-pair regenerations
    /// Invoked after every optimizer update (e.g. for periodic evaluation).
    std::function<void(std::size_t step, std::size_t reward_queries)> on_update;
};

template <class Real>
struct TrainResult {
    std::vector<StepStat> trace;
    std::size_t reward_queries = 0;
    std::vector<std::string> warnings;
};

/// Gradient-ascent alignment: sample with a K-step gradient window, score,
/// and ascend the reward directly through the sampler.
template <class Real>
TrainResult<Real> train_reward_gradient(DenoiserModel<Real>& model, const RewardSuite<Real>& suite,
                                        const std::vector<Conditioning<Real>>& prompts,
                                        const NoiseSchedule<Real>& sched,
                                        const SamplerConfig<Real>& scfg,
                                        const AlignConfig<Real>& cfg, Rng& rng) {
    if (prompts.empty()) throw TrainError("align: empty prompt set");
    if (cfg.grad_cutoff_K < 1)
        throw ConfigError("align: gradient cutoff K must be >= 1");
    Adam<Real> opt(cfg.lr);
    TrainResult<Real> res;
    detail::Stopwatch clock;
    bool warned_zero_grad = false;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cfg.budget_queries && res.reward_queries + cfg.batch > cfg.budget_queries) break;
        std::vector<Conditioning<Real>> conds(cfg.batch);
        for (auto& c : conds) c = prompts[rng.index(prompts.size())];
        Tape<Real> tape;
        std::vector<double> rewards;
        {
            TapeScope<Real> scope(tape);
            model.params.zero_grads();
            CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
            Tensor<Real> x = sample(model, cb, sched, scfg, rng, cfg.grad_cutoff_K);
            auto scores = score_clips(x, conds, suite, model.frames, cfg.subsample_m, rng);
            for (const auto& s : scores) rewards.push_back(double(s.scalar()));
            Tensor<Real> loss = scalar_mul(reduce_mean(concat(scores, 0)), Real(-1));
            if (!std::isfinite(double(loss.scalar())))
                throw TrainError("align: loss diverged at step " + std::to_string(step));
            tape.backward_from(loss.node());
        }
        res.reward_queries += cfg.batch;
        double gnorm = double(clip_grad_norm(model.params, cfg.grad_clip));
        if (gnorm == 0.0 && !warned_zero_grad) {
            res.warnings.push_back(
                "align: zero gradient at step " + std::to_string(step) +
                " despite K >= 1; the reward may be disconnected from the sampler output");
            warned_zero_grad = true;
        }
        opt.step(model.params);
        StepStat st;
        st.step = step;
        st.reward_queries = res.reward_queries;
        st.wallclock_s = clock.seconds();
        detail::mean_std(rewards, st.mean_reward, st.std_reward);
        res.trace.push_back(st);
        if (cfg.on_update) cfg.on_update(step, res.reward_queries);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Policy-gradient baseline (clipped importance-weighted updates over the
// denoising chain, no value function)
// ---------------------------------------------------------------------------

template <class Real>
struct DenoiseTransition {
    std::vector<Real> x_t, x_prev;
    long sub_t = 0;  // index into the sampler sub-schedule
    Real sigma = Real(0);
    Real old_logp = Real(0);
};

template <class Real>
struct Rollout {
    Conditioning<Real> cond;
    std::vector<DenoiseTransition<Real>> transitions;
    double reward = 0;
    double advantage = 0;
};

namespace detail {

template <class Real>
Real gaussian_logp(const std::vector<Real>& x, const std::vector<Real>& mean, Real sigma) {
    const double s2 = double(sigma) * double(sigma);
    double acc = -0.5 * double(x.size()) * (std::log(2.0 * 3.14159265358979323846) + std::log(s2));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = double(x[i]) - double(mean[i]);
        acc -= 0.5 * d * d / s2;
    }
    return static_cast<Real>(acc);
}

}  // namespace detail

/// Sample one clip per prompt with an all-stochastic ancestral sampler and
/// record every reverse transition. Noise is drawn at every step (including
/// the last) so each transition has a proper Gaussian density.
template <class Real>
std::vector<Rollout<Real>> collect_rollouts(const DenoiserModel<Real>& model,
                                            const RewardSuite<Real>& suite,
                                            const std::vector<Conditioning<Real>>& conds,
                                            const NoiseSchedule<Real>& sched, std::size_t steps,
                                            Rng& rng) {
    NoGradScope<Real> ng;
    const std::size_t B = conds.size();
    const std::size_t N = model.frames, D = model.frame_dim;
    const auto ts = timestep_sequence(sched.T, steps);
    NoiseSchedule<Real> ssched = make_subschedule(sched, ts);
    CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
    Tensor<Real> x = Tensor<Real>::randn({B * N, D}, rng);
    std::vector<Rollout<Real>> rolls(B);
    for (std::size_t b = 0; b < B; ++b) rolls[b].cond = conds[b];
    std::vector<long> t_per_clip(B);
    for (std::size_t i = 0; i < steps; ++i) {
        std::fill(t_per_clip.begin(), t_per_clip.end(), ts[i]);
        Tensor<Real> pred = denoiser_forward(model, x, t_per_clip, cb);
        const long si = static_cast<long>(steps - 1 - i);
        Tensor<Real> mean = ddpm_mean(pred, si, x, ssched);
        Tensor<Real> z = Tensor<Real>::randn(x.shape(), rng);
        const Real sigma = std::max(ssched.sigma[static_cast<std::size_t>(si)],
                                    static_cast<Real>(1e-4));
        Tensor<Real> x_prev = add(mean, scalar_mul(z, sigma));
        for (std::size_t b = 0; b < B; ++b) {
            DenoiseTransition<Real> tr;
            const auto lo = x.values().begin() + static_cast<long>(b * N * D);
            tr.x_t.assign(lo, lo + static_cast<long>(N * D));
            const auto pl = x_prev.values().begin() + static_cast<long>(b * N * D);
            tr.x_prev.assign(pl, pl + static_cast<long>(N * D));
            std::vector<Real> mu(mean.values().begin() + static_cast<long>(b * N * D),
                                 mean.values().begin() + static_cast<long>((b + 1) * N * D));
            tr.sub_t = si;
            tr.sigma = sigma;
            tr.old_logp = detail::gaussian_logp(tr.x_prev, mu, sigma);
            rolls[b].transitions.push_back(std::move(tr));
        }
        x = x_prev;
    }
    Rng score_rng = rng.fork(0x5c03e);
    auto scores = score_clips(x, conds, suite, N, /*subsample_m=*/0, score_rng);
    for (std::size_t b = 0; b < B; ++b) rolls[b].reward = double(scores[b].scalar());
    return rolls;
}

/// Advantages centered within each prompt group, then scaled by the global
/// standard deviation.
template <class Real>
void compute_advantages(std::vector<Rollout<Real>>& rolls) {
    std::map<std::size_t, std::pair<double, std::size_t>> by_class;
    double gmean = 0;
    for (const auto& r : rolls) {
        auto& e = by_class[r.cond.class_index];
        e.first += r.reward;
        ++e.second;
        gmean += r.reward;
    }
    gmean /= double(rolls.size());
    double var = 0;
    for (const auto& r : rolls) var += (r.reward - gmean) * (r.reward - gmean);
    const double sd = std::sqrt(var / double(rolls.size())) + 1e-8;
    for (auto& r : rolls) {
        const auto& e = by_class[r.cond.class_index];
        const double center = e.second > 1 ? e.first / double(e.second) : gmean;
        r.advantage = (r.reward - center) / sd;
    }
}

/// One clipped-surrogate policy update over the recorded transitions.
/// Returns the number of transitions whose importance ratio overflowed and
/// was clamped.
template <class Real>
std::size_t ppo_update(DenoiserModel<Real>& model, Adam<Real>& opt,
                       const std::vector<Rollout<Real>>& rolls, const NoiseSchedule<Real>& sched,
                       std::size_t steps, const AlignConfig<Real>& cfg, Rng& rng) {
    const std::size_t N = model.frames, D = model.frame_dim;
    const auto ts = timestep_sequence(sched.T, steps);
    NoiseSchedule<Real> ssched = make_subschedule(sched, ts);
    struct Item {
        const Rollout<Real>* roll;
        const DenoiseTransition<Real>* tr;
    };
    std::vector<Item> items;
    for (const auto& r : rolls)
        for (const auto& tr : r.transitions) items.push_back({&r, &tr});
    std::size_t clamped = 0;
    for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
        for (std::size_t i = items.size(); i > 1; --i)
            std::swap(items[i - 1], items[rng.index(i)]);
        for (std::size_t base = 0; base < items.size(); base += cfg.batch) {
            const std::size_t Bm = std::min(cfg.batch, items.size() - base);
            Tape<Real> tape;
            {
                TapeScope<Real> scope(tape);
                model.params.zero_grads();
                std::vector<Real> xt;
                std::vector<long> t_model(Bm);
                std::vector<Conditioning<Real>> conds(Bm);
                for (std::size_t b = 0; b < Bm; ++b) {
                    const Item& it = items[base + b];
                    xt.insert(xt.end(), it.tr->x_t.begin(), it.tr->x_t.end());
                    t_model[b] = ts[steps - 1 - static_cast<std::size_t>(it.tr->sub_t)];
                    conds[b] = it.roll->cond;
                }
                Tensor<Real> x({Bm * N, D}, std::move(xt));
                CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
                Tensor<Real> pred = denoiser_forward(model, x, t_model, cb);
                std::vector<Tensor<Real>> surrs;
                for (std::size_t b = 0; b < Bm; ++b) {
                    const Item& it = items[base + b];
                    const std::size_t si = static_cast<std::size_t>(it.tr->sub_t);
                    const Real inv_sqrt_alpha =
                        static_cast<Real>(1.0 / std::sqrt(double(ssched.alpha[si])));
                    const Real coef = ssched.beta[si] / static_cast<Real>(std::sqrt(
                                                         double(Real(1) - ssched.alpha_bar[si])));
                    Tensor<Real> xb = slice_rows(x, b * N, (b + 1) * N);
                    Tensor<Real> pb = slice_rows(pred, b * N, (b + 1) * N);
                    Tensor<Real> mean = scalar_mul(sub(xb, scalar_mul(pb, coef)), inv_sqrt_alpha);
                    Tensor<Real> xprev({N, D}, it.tr->x_prev);
                    const Real s2 = it.tr->sigma * it.tr->sigma;
                    // log-density up to the sigma-dependent constant, which
                    // matches old_logp's constant and cancels in the ratio
                    Tensor<Real> quad = scalar_mul(reduce_sum(square(sub(xprev, mean))),
                                                   Real(-0.5) / s2);
                    const Real old_quad =
                        it.tr->old_logp +
                        static_cast<Real>(0.5 * double(N * D) *
                                          (std::log(2.0 * 3.14159265358979323846) +
                                           2.0 * std::log(double(it.tr->sigma))));
                    Tensor<Real> dlog = scalar_add(quad, -old_quad);
                    const auto& dv = dlog.values();
                    if (std::abs(double(dv[0])) > 30.0) ++clamped;
                    Tensor<Real> ratio = vexp(clamp(dlog, Real(-30), Real(30)));
                    const Real adv = static_cast<Real>(it.roll->advantage);
                    Tensor<Real> surr =
                        minimum(scalar_mul(ratio, adv),
                                scalar_mul(clamp(ratio, Real(1) - cfg.clip_eps,
                                                 Real(1) + cfg.clip_eps),
                                           adv));
                    surrs.push_back(surr);
                }
                Tensor<Real> loss = scalar_mul(reduce_mean(concat(surrs, 0)), Real(-1));
                tape.backward_from(loss.node());
            }
            clip_grad_norm(model.params, cfg.grad_clip);
            opt.step(model.params);
        }
    }
    return clamped;
}

/// Policy-gradient alignment loop: rollouts, per-prompt advantages, clipped
/// surrogate updates.
template <class Real>
TrainResult<Real> train_policy_gradient(DenoiserModel<Real>& model, const RewardSuite<Real>& suite,
                                        const std::vector<Conditioning<Real>>& prompts,
                                        const NoiseSchedule<Real>& sched,
                                        const SamplerConfig<Real>& scfg,
                                        const AlignConfig<Real>& cfg, Rng& rng) {
    if (prompts.empty()) throw TrainError("align: empty prompt set");
    Adam<Real> opt(cfg.lr);
    TrainResult<Real> res;
    detail::Stopwatch clock;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cfg.budget_queries && res.reward_queries + cfg.batch > cfg.budget_queries) break;
        std::vector<Conditioning<Real>> conds(cfg.batch);
        for (auto& c : conds) c = prompts[rng.index(prompts.size())];
        auto rolls = collect_rollouts(model, suite, conds, sched, scfg.steps, rng);
        res.reward_queries += cfg.batch;
        compute_advantages(rolls);
        ppo_update(model, opt, rolls, sched, scfg.steps, cfg, rng);
        StepStat st;
        st.step = step;
        st.reward_queries = res.reward_queries;
        st.wallclock_s = clock.seconds();
        std::vector<double> rewards;
        for (const auto& r : rolls) rewards.push_back(r.reward);
        detail::mean_std(rewards, st.mean_reward, st.std_reward);
        res.trace.push_back(st);
        if (cfg.on_update) cfg.on_update(step, res.reward_queries);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Preference-pair baseline
// ---------------------------------------------------------------------------

template <class Real>
struct PreferencePair {
    Conditioning<Real> cond;
    std::vector<Real> winner, loser;  // clip pixels, frames * frame_dim
    double reward_w = 0, reward_l = 0;
};

/// Generate preference pairs by sampling the reference model twice per prompt
/// and ranking with the reward. Ties are discarded. Counts two reward queries
/// per attempted pair.
template <class Real>
std::vector<PreferencePair<Real>> make_preference_pairs(
    const DenoiserModel<Real>& ref_model, const RewardSuite<Real>& suite,
    const std::vector<Conditioning<Real>>& prompts, const NoiseSchedule<Real>& sched,
    const SamplerConfig<Real>& scfg, std::size_t count, Rng& rng, std::size_t& reward_queries) {
    NoGradScope<Real> ng;
    std::vector<PreferencePair<Real>> pairs;
    const std::size_t N = ref_model.frames;
    std::size_t attempts = 0;
    while (pairs.size() < count && attempts < count * 4) {
        ++attempts;
        Conditioning<Real> c = prompts[rng.index(prompts.size())];
        std::vector<Conditioning<Real>> conds = {c, c};
        CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
        Tensor<Real> x = sample(ref_model, cb, sched, scfg, rng, /*K=*/0);
        Rng score_rng = rng.fork(0xd9);
        auto scores = score_clips(x, conds, suite, N, 0, score_rng);
        reward_queries += 2;
        const double r0 = double(scores[0].scalar()), r1 = double(scores[1].scalar());
        if (r0 == r1) continue;
        PreferencePair<Real> p;
        p.cond = c;
        const auto& v = x.values();
        const std::size_t E = N * ref_model.frame_dim;
        const std::size_t w = r0 > r1 ? 0 : 1, l = 1 - w;
        p.winner.assign(v.begin() + static_cast<long>(w * E),
                        v.begin() + static_cast<long>((w + 1) * E));
        p.loser.assign(v.begin() + static_cast<long>(l * E),
                       v.begin() + static_cast<long>((l + 1) * E));
        p.reward_w = std::max(r0, r1);
        p.reward_l = std::min(r0, r1);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

/// Preference loss over one batch of pairs: softplus of the scaled difference
/// of denoising-error margins against the frozen reference. Exactly log(2)
/// when the policy equals the reference.
template <class Real>
Tensor<Real> dpo_loss(const std::vector<PreferencePair<Real>>& pairs,
                      const DenoiserModel<Real>& model, const DenoiserModel<Real>& ref_model,
                      const NoiseSchedule<Real>& sched, Real beta, Rng& rng) {
    if (pairs.empty()) throw TrainError("dpo_loss: empty pair batch");
    const std::size_t P = pairs.size();
    const std::size_t N = model.frames, D = model.frame_dim;
    const std::size_t E = N * D;
    // one shared (t, eps) per pair, applied to winner and loser alike
    std::vector<Real> xt(2 * P * E), eps(2 * P * E);
    std::vector<long> ts(2 * P);
    std::vector<Conditioning<Real>> conds(2 * P);
    for (std::size_t p = 0; p < P; ++p) {
        const long t = static_cast<long>(rng.index(sched.T));
        const Real abar = sched.alpha_bar[static_cast<std::size_t>(t)];
        const Real sa = static_cast<Real>(std::sqrt(double(abar)));
        const Real sb = static_cast<Real>(std::sqrt(double(Real(1) - abar)));
        ts[2 * p] = ts[2 * p + 1] = t;
        conds[2 * p] = conds[2 * p + 1] = pairs[p].cond;
        for (std::size_t i = 0; i < E; ++i) {
            const Real e = static_cast<Real>(rng.normal());
            eps[2 * p * E + i] = e;
            eps[(2 * p + 1) * E + i] = e;
            xt[2 * p * E + i] = sa * pairs[p].winner[i] + sb * e;
            xt[(2 * p + 1) * E + i] = sa * pairs[p].loser[i] + sb * e;
        }
    }
    Tensor<Real> x({2 * P * N, D}, std::move(xt));
    Tensor<Real> eps_t({2 * P * N, D}, std::move(eps));
    CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
    Tensor<Real> pred = denoiser_forward(model, x, ts, cb);
    Tensor<Real> ref_pred;
    {
        NoGradScope<Real> ng;
        ref_pred = denoiser_forward(ref_model, x, ts, cb);
        ref_pred = stop_grad(ref_pred);
    }
    std::vector<Tensor<Real>> losses;
    for (std::size_t p = 0; p < P; ++p) {
        auto err = [&](const Tensor<Real>& pr, std::size_t clip) {
            Tensor<Real> d = sub(slice_rows(pr, clip * N, (clip + 1) * N),
                                 slice_rows(eps_t, clip * N, (clip + 1) * N));
            return reduce_mean(square(d));
        };
        Tensor<Real> h = sub(sub(err(pred, 2 * p), err(ref_pred, 2 * p)),
                             sub(err(pred, 2 * p + 1), err(ref_pred, 2 * p + 1)));
        Tensor<Real> bh = clamp(scalar_mul(h, beta), Real(-30), Real(30));
        losses.push_back(vlog(scalar_add(vexp(bh), Real(1))));  // softplus
    }
    return reduce_mean(concat(losses, 0));
}

/// Preference-pair alignment loop against a frozen reference copy.
template <class Real>
TrainResult<Real> train_preference(DenoiserModel<Real>& model, const RewardSuite<Real>& suite,
                                   const std::vector<Conditioning<Real>>& prompts,
                                   const NoiseSchedule<Real>& sched,
                                   const SamplerConfig<Real>& scfg, const AlignConfig<Real>& cfg,
                                   Rng& rng) {
    if (prompts.empty()) throw TrainError("align: empty prompt set");
    DenoiserModel<Real> ref_model = model.clone();
    for (auto& p : ref_model.params.all()) {
        p.trainable = false;
        p.tensor.set_requires_grad(false);
    }
    Adam<Real> opt(cfg.lr);
    TrainResult<Real> res;
    detail::Stopwatch clock;
    std::vector<PreferencePair<Real>> pairs;
    const std::size_t refresh = std::max<std::size_t>(1, cfg.pair_refresh);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (step % refresh == 0) {
            if (cfg.budget_queries &&
                res.reward_queries + 2 * cfg.pairs_per_step > cfg.budget_queries)
                break;
            pairs = make_preference_pairs(ref_model, suite, prompts, sched, scfg,
                                          cfg.pairs_per_step, rng, res.reward_queries);
        }
        if (pairs.empty()) {
            res.warnings.push_back("dpo: no usable pairs at step " + std::to_string(step) +
                                   " (all ties)");
            continue;
        }
        Tape<Real> tape;
        std::vector<double> rewards;
        for (const auto& p : pairs) {
            rewards.push_back(p.reward_w);
            rewards.push_back(p.reward_l);
        }
        {
            TapeScope<Real> scope(tape);
            model.params.zero_grads();
            Tensor<Real> loss = dpo_loss(pairs, model, ref_model, sched, cfg.dpo_beta, rng);
            tape.backward_from(loss.node());
        }
        clip_grad_norm(model.params, cfg.grad_clip);
        opt.step(model.params);
        StepStat st;
        st.step = step;
        st.reward_queries = res.reward_queries;
        st.wallclock_s = clock.seconds();
        detail::mean_std(rewards, st.mean_reward, st.std_reward);
        res.trace.push_back(st);
        if (cfg.on_update) cfg.on_update(step, res.reward_queries);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Mean/std reward of fresh samples over a prompt set with a fixed seed.
/// Never updates weights and never counts against a training budget.
template <class Real>
EvalStat evaluate(const DenoiserModel<Real>& model, const RewardSuite<Real>& suite,
                  const std::vector<Conditioning<Real>>& prompts,
                  const NoiseSchedule<Real>& sched, const SamplerConfig<Real>& scfg,
                  std::size_t samples, std::uint64_t seed) {
    if (prompts.empty()) throw TrainError("evaluate: empty prompt set");
    NoGradScope<Real> ng;
    Rng rng(seed);
    std::vector<double> rewards;
    const std::size_t batch = 8;
    std::size_t next_prompt = 0;
    while (rewards.size() < samples) {
        const std::size_t B = std::min(batch, samples - rewards.size());
        std::vector<Conditioning<Real>> conds(B);
        for (auto& c : conds) c = prompts[next_prompt++ % prompts.size()];
        CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
        Tensor<Real> x = sample(model, cb, sched, scfg, rng, /*K=*/0);
        auto scores = score_clips(x, conds, suite, model.frames, 0, rng);
        for (const auto& s : scores) rewards.push_back(double(s.scalar()));
    }
    EvalStat e;
    e.samples = rewards.size();
    detail::mean_std(rewards, e.mean_reward, e.std_reward);
    return e;
}

// ---------------------------------------------------------------------------
// Autoregressive long-horizon extension
// ---------------------------------------------------------------------------

/// Chain `rounds` generations, each conditioned on the previous round's last
/// frame. Gradient flows through the conditioning frame from round to round.
/// Returns the concatenated clip [rounds*N, frame_dim].
template <class Real>
Tensor<Real> autoregressive_extend(const DenoiserModel<Real>& model, const Tensor<Real>& first_frame,
                                   std::size_t rounds, const NoiseSchedule<Real>& sched,
                                   const SamplerConfig<Real>& scfg, Rng& rng,
                                   std::size_t grad_cutoff_K) {
    if (model.cond_mode != CondMode::FirstFrame)
        throw ConfigError("autoregressive_extend: model must be frame-conditioned");
    if (rounds < 1) throw ConfigError("autoregressive_extend: rounds must be >= 1");
    if (first_frame.shape() != Shape{1, model.frame_dim})
        throw ShapeError("autoregressive_extend: conditioning frame must be [1, frame_dim]");
    Tensor<Real> ref = first_frame;
    std::vector<Tensor<Real>> clips;
    for (std::size_t r = 0; r < rounds; ++r) {
        CondBatch<Real> cb = CondBatch<Real>::from_frames(ref);
        Tensor<Real> x = sample(model, cb, sched, scfg, rng, grad_cutoff_K);
        ref = slice_rows(x, model.frames - 1, model.frames);
        clips.push_back(std::move(x));
    }
    return concat(clips, 0);
}

/// Mean masked-consistency over N-frame windows that straddle the round
/// boundaries of an extended clip.
template <class Real>
Tensor<Real> extension_consistency(const Tensor<Real>& extended, const MlpHead<Real>& predictor,
                                   const ToyWorldSpec& spec, std::size_t rounds, Rng& mask_rng,
                                   double mask_ratio = 0.5) {
    const std::size_t N = spec.frames;
    if (extended.shape()[0] != rounds * N)
        throw ShapeError("extension_consistency: expected " + std::to_string(rounds * N) +
                         " frames, got " + shape_str(extended.shape()));
    if (rounds < 2) throw ConfigError("extension_consistency: need >= 2 rounds");
    std::vector<Tensor<Real>> scores;
    for (std::size_t r = 1; r < rounds; ++r) {
        // window centered on the boundary between rounds r-1 and r
        const std::size_t start = r * N - N / 2;
        Tensor<Real> window = slice_rows(extended, start, start + N);
        scores.push_back(
            reward_masked_consistency(window, predictor, spec, mask_rng, mask_ratio));
    }
    return reduce_mean(concat(scores, 0));
}

/// Fine-tune a frame-conditioned model so multi-round extensions score higher
/// on cross-boundary masked consistency.
template <class Real>
TrainResult<Real> train_extension(DenoiserModel<Real>& model, const RewardHeads<Real>& heads,
                                  const std::vector<ClipExample<Real>>& dataset,
                                  std::size_t rounds, const NoiseSchedule<Real>& sched,
                                  const SamplerConfig<Real>& scfg, const AlignConfig<Real>& cfg,
                                  Rng& rng) {
    if (dataset.empty()) throw TrainError("train_extension: empty dataset");
    Adam<Real> opt(cfg.lr);
    TrainResult<Real> res;
    detail::Stopwatch clock;
    const std::size_t D = model.frame_dim;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tape<Real> tape;
        std::vector<double> rewards;
        {
            TapeScope<Real> scope(tape);
            model.params.zero_grads();
            std::vector<Tensor<Real>> scores;
            for (std::size_t b = 0; b < cfg.batch; ++b) {
                const auto& ex = dataset[rng.index(dataset.size())];
                Tensor<Real> f0({1, D}, std::vector<Real>(ex.pixels.begin(),
                                                          ex.pixels.begin() +
                                                              static_cast<long>(D)));
                Tensor<Real> ext = autoregressive_extend(model, f0, rounds, sched, scfg, rng,
                                                         cfg.grad_cutoff_K);
                Tensor<Real> sc =
                    extension_consistency(ext, heads.masked_pred, heads.spec, rounds, rng);
                rewards.push_back(double(sc.scalar()));
                scores.push_back(sc);
            }
            res.reward_queries += cfg.batch;
            Tensor<Real> loss = scalar_mul(reduce_mean(concat(scores, 0)), Real(-1));
            tape.backward_from(loss.node());
        }
        clip_grad_norm(model.params, cfg.grad_clip);
        opt.step(model.params);
        StepStat st;
        st.step = step;
        st.reward_queries = res.reward_queries;
        st.wallclock_s = clock.seconds();
        detail::mean_std(rewards, st.mean_reward, st.std_reward);
        res.trace.push_back(st);
        if (cfg.on_update) cfg.on_update(step, res.reward_queries);
    }
    return res;
}

/// Evaluate mean cross-boundary consistency of extensions with fixed seeds.
template <class Real>
EvalStat evaluate_extension(const DenoiserModel<Real>& model, const RewardHeads<Real>& heads,
                            const std::vector<ClipExample<Real>>& dataset, std::size_t rounds,
                            const NoiseSchedule<Real>& sched, const SamplerConfig<Real>& scfg,
                            std::size_t samples, std::uint64_t seed) {
    NoGradScope<Real> ng;
    Rng rng(seed);
    const std::size_t D = heads.spec.frame_dim();
    std::vector<double> rewards;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto& ex = dataset[rng.index(dataset.size())];
        Tensor<Real> f0({1, D}, std::vector<Real>(ex.pixels.begin(),
                                                  ex.pixels.begin() + static_cast<long>(D)));
        Tensor<Real> ext = autoregressive_extend(model, f0, rounds, sched, scfg, rng, 0);
        Tensor<Real> sc = extension_consistency(ext, heads.masked_pred, heads.spec, rounds, rng);
        rewards.push_back(double(sc.scalar()));
    }
    EvalStat e;
    e.samples = rewards.size();
    detail::mean_std(rewards, e.mean_reward, e.std_reward);
    return e;
}

}  // namespace vidrl
