#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "helpers.hpp"
#include "vidrl/align.hpp"

using namespace vidrl;
using T = Tensor<double>;

namespace {

constexpr std::size_t kFrames = 2, kDim = 6, kVocab = 4, kHidden = 12;

DenoiserModel<double> small_model(std::uint64_t seed,
                                  CondMode mode = CondMode::ClassLabel) {
    Rng rng(seed);
    return DenoiserModel<double>::create(kFrames, kDim, kVocab, mode, kHidden, rng);
}

std::vector<Conditioning<double>> class_prompts(std::initializer_list<std::size_t> classes) {
    std::vector<Conditioning<double>> out;
    for (std::size_t c : classes) {
        Conditioning<double> cond;
        cond.kind = CondMode::ClassLabel;
        cond.class_index = c;
        out.push_back(cond);
    }
    return out;
}

RewardSuite<double> brightness_suite(double weight = 1.0) {
    RewardSuite<double> suite;
    RewardModel<double> m;
    m.kind = RewardKind::Brightness;
    suite.models = {m};
    suite.weights = {weight};
    return suite;
}

std::vector<std::vector<double>> snapshot(const ParamStore<double>& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params.all()) out.push_back(p.tensor.values());
    return out;
}

}  // namespace

TEST_CASE("rollouts carry exact transition densities") {
    auto model = small_model(3);
    auto sched = default_schedule<double>(20);
    const std::size_t steps = 4;
    auto suite = brightness_suite();
    auto conds = class_prompts({0, 2, 3});
    Rng rng(11);
    auto rolls = collect_rollouts(model, suite, conds, sched, steps, rng);
    REQUIRE(rolls.size() == 3);

    const auto ts = timestep_sequence(sched.T, steps);
    auto ssched = make_subschedule(sched, ts);
    NoGradScope<double> ng;
    for (const auto& r : rolls) {
        REQUIRE(r.transitions.size() == steps);
        for (const auto& tr : r.transitions) {
            CHECK(tr.sigma >= 1e-4);
            // recompute the transition mean from the recorded state; the
            // stored log-density must match, making the importance ratio 1
            // at collection time
            T x_t({kFrames, kDim}, tr.x_t);
            std::vector<long> tm = {ts[steps - 1 - std::size_t(tr.sub_t)]};
            std::vector<Conditioning<double>> c1 = {r.cond};
            CondBatch<double> cb = CondBatch<double>::from_conditionings(c1);
            T pred = denoiser_forward(model, x_t, tm, cb);
            T mean = ddpm_mean(pred, tr.sub_t, x_t, ssched);
            const double logp =
                detail::gaussian_logp<double>(tr.x_prev, mean.values(), tr.sigma);
            CHECK(logp == doctest::Approx(tr.old_logp).epsilon(1e-9));
        }
    }
}

TEST_CASE("advantages are centered within each prompt group") {
    std::vector<Rollout<double>> rolls(6);
    const std::size_t classes[] = {0, 0, 0, 1, 1, 2};
    const double rewards[] = {1.0, 2.0, 6.0, -1.0, 3.0, 0.5};
    for (std::size_t i = 0; i < 6; ++i) {
        rolls[i].cond.class_index = classes[i];
        rolls[i].reward = rewards[i];
    }
    compute_advantages(rolls);
    std::map<std::size_t, double> sums;
    for (const auto& r : rolls) sums[r.cond.class_index] += r.advantage;
    CHECK(sums[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(sums[1] == doctest::Approx(0.0).epsilon(1e-9));
    // singleton groups center on the global mean instead of their own reward
    const double gmean = (1 + 2 + 6 - 1 + 3 + 0.5) / 6.0;
    double var = 0;
    for (double r : rewards) var += (r - gmean) * (r - gmean);
    const double sd = std::sqrt(var / 6.0) + 1e-8;
    CHECK(rolls[5].advantage == doctest::Approx((0.5 - gmean) / sd));
    // equal rewards leave all advantages finite (zero)
    std::vector<Rollout<double>> flat(4);
    for (auto& r : flat) r.reward = 2.0;
    compute_advantages(flat);
    for (const auto& r : flat) CHECK(r.advantage == doctest::Approx(0.0));
}

TEST_CASE("policy-gradient update respects a zero learning rate") {
    auto model = small_model(5);
    auto sched = default_schedule<double>(20);
    auto suite = brightness_suite();
    auto conds = class_prompts({0, 1, 2, 3});
    Rng rng(7);
    auto rolls = collect_rollouts(model, suite, conds, sched, 4, rng);
    compute_advantages(rolls);
    AlignConfig<double> cfg;
    cfg.lr = 0.0;
    cfg.batch = 64;  // single mini-batch
    Adam<double> opt(cfg.lr);
    const auto before = snapshot(model.params);
    std::size_t clamped = ppo_update(model, opt, rolls, sched, 4, cfg, rng);
    CHECK(clamped == 0);  // at collection the log-ratio is exactly 0
    CHECK(snapshot(model.params) == before);
}

TEST_CASE("preference pairs: ranking, tie discard, query accounting") {
    auto model = small_model(9);
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    auto prompts = class_prompts({0, 1});
    // informative reward: winners strictly outscore losers
    {
        Rng rng(3);
        std::size_t queries = 0;
        auto suite = brightness_suite();
        auto pairs = make_preference_pairs(model, suite, prompts, sched, scfg, 6, rng, queries);
        REQUIRE(pairs.size() == 6);
        CHECK(queries == 12);  // no ties under a continuous reward
        for (const auto& p : pairs) {
            CHECK(p.reward_w > p.reward_l);
            CHECK(p.winner.size() == kFrames * kDim);
            CHECK(p.loser.size() == kFrames * kDim);
        }
    }
    // constant reward: every attempt ties, pairs stay empty, attempts capped
    {
        Rng rng(3);
        std::size_t queries = 0;
        auto zero = brightness_suite(0.0);
        auto pairs = make_preference_pairs(model, zero, prompts, sched, scfg, 6, rng, queries);
        CHECK(pairs.empty());
        CHECK(queries == 2 * 6 * 4);
    }
}

TEST_CASE("preference loss is log(2) at the reference point") {
    auto model = small_model(13);
    auto ref = model.clone();
    auto sched = default_schedule<double>(20);
    Rng prng(21);
    std::vector<PreferencePair<double>> pairs(3);
    for (auto& p : pairs) {
        p.cond.kind = CondMode::ClassLabel;
        p.cond.class_index = prng.index(kVocab);
        p.winner.resize(kFrames * kDim);
        p.loser.resize(kFrames * kDim);
        for (auto& v : p.winner) v = prng.uniform();
        for (auto& v : p.loser) v = prng.uniform();
    }
    {
        Rng rng(5);
        NoGradScope<double> ng;
        CHECK(dpo_loss(pairs, model, ref, sched, 500.0, rng).scalar() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }
    // beta = 0 also gives log(2), with an exactly-zero gradient
    {
        auto m2 = small_model(14);
        Rng rng(5);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        m2.params.zero_grads();
        T loss = dpo_loss(pairs, m2, ref, sched, 0.0, rng);
        CHECK(loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
        tape.backward_from(loss.node());
        for (const auto& p : m2.params.all())
            for (double g : p.tensor.grad()) CHECK(g == 0.0);
    }
    std::vector<PreferencePair<double>> none;
    Rng rng(5);
    CHECK_THROWS_AS(dpo_loss(none, model, ref, sched, 1.0, rng), TrainError);
}

TEST_CASE("preference training reduces the loss on fixed pairs") {
    auto model = small_model(17);
    auto ref = model.clone();
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    Rng rng(23);
    std::size_t queries = 0;
    auto pairs = make_preference_pairs(model, brightness_suite(), class_prompts({0, 1, 2}),
                                       sched, scfg, 8, rng, queries);
    REQUIRE(pairs.size() == 8);
    Adam<double> opt(1e-3);
    std::vector<double> losses;
    for (int it = 0; it < 60; ++it) {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        model.params.zero_grads();
        T loss = dpo_loss(pairs, model, ref, sched, 50.0, rng);
        losses.push_back(loss.scalar());
        tape.backward_from(loss.node());
        opt.step(model.params);
    }
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
        head += losses[std::size_t(i)];
        tail += losses[losses.size() - 1 - std::size_t(i)];
    }
    CHECK(tail < head);
}

TEST_CASE("training loops account for every reward query") {
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    auto prompts = class_prompts({0, 1, 2, 3});
    auto suite = brightness_suite();

    AlignConfig<double> cfg;
    cfg.batch = 4;
    cfg.steps = 6;
    cfg.grad_cutoff_K = 2;
    cfg.lr = 1e-4;
    {
        auto model = small_model(31);
        Rng rng(1);
        auto res = train_reward_gradient(model, suite, prompts, sched, scfg, cfg, rng);
        CHECK(res.reward_queries == cfg.batch * cfg.steps);
        CHECK(res.trace.size() == cfg.steps);
        CHECK(res.warnings.empty());  // brightness is connected to the sampler
        for (std::size_t i = 0; i < res.trace.size(); ++i) CHECK(res.trace[i].step == i);
    }
    {
        auto model = small_model(31);
        Rng rng(1);
        auto res = train_policy_gradient(model, suite, prompts, sched, scfg, cfg, rng);
        CHECK(res.reward_queries == cfg.batch * cfg.steps);
        CHECK(res.trace.size() == cfg.steps);
    }
    {
        auto model = small_model(31);
        Rng rng(1);
        AlignConfig<double> dcfg = cfg;
        dcfg.pairs_per_step = 3;
        dcfg.pair_refresh = 2;  // 3 refreshes over 6 steps
        auto res = train_preference(model, suite, prompts, sched, scfg, dcfg, rng);
        CHECK(res.reward_queries == 2 * dcfg.pairs_per_step * 3);
        CHECK(res.trace.size() == cfg.steps);
    }
    // budget stops training before the next batch would exceed it
    {
        auto model = small_model(31);
        Rng rng(1);
        AlignConfig<double> bcfg = cfg;
        bcfg.budget_queries = 10;  // room for 2 batches of 4
        auto res = train_reward_gradient(model, suite, prompts, sched, scfg, bcfg, rng);
        CHECK(res.reward_queries == 8);
        CHECK(res.trace.size() == 2);
    }
    // a constant reward triggers the zero-gradient warning
    {
        auto model = small_model(31);
        Rng rng(1);
        AlignConfig<double> wcfg = cfg;
        wcfg.steps = 1;
        auto res =
            train_reward_gradient(model, brightness_suite(0.0), prompts, sched, scfg, wcfg, rng);
        REQUIRE(res.warnings.size() == 1);
    }
    auto model = small_model(31);
    Rng rng(1);
    CHECK_THROWS_AS(train_reward_gradient(model, suite, {}, sched, scfg, cfg, rng), TrainError);
    AlignConfig<double> bad = cfg;
    bad.grad_cutoff_K = 0;
    CHECK_THROWS_AS(train_reward_gradient(model, suite, prompts, sched, scfg, bad, rng),
                    ConfigError);
}

TEST_CASE("reward-gradient training with zero learning rate leaves weights alone") {
    auto model = small_model(37);
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    AlignConfig<double> cfg;
    cfg.lr = 0.0;
    cfg.batch = 4;
    cfg.steps = 3;
    cfg.grad_cutoff_K = 2;
    const auto before = snapshot(model.params);
    Rng rng(2);
    auto res = train_reward_gradient(model, brightness_suite(), class_prompts({0, 1}), sched,
                                     scfg, cfg, rng);
    CHECK(snapshot(model.params) == before);
    CHECK(res.reward_queries == 12);
}

TEST_CASE("evaluation is deterministic and side-effect free") {
    auto model = small_model(41);
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    auto prompts = class_prompts({0, 3});
    auto suite = brightness_suite();
    const auto before = snapshot(model.params);
    auto e1 = evaluate(model, suite, prompts, sched, scfg, 12, 99);
    auto e2 = evaluate(model, suite, prompts, sched, scfg, 12, 99);
    auto e3 = evaluate(model, suite, prompts, sched, scfg, 12, 100);
    CHECK(snapshot(model.params) == before);
    CHECK(e1.samples == 12);
    CHECK(e1.mean_reward == e2.mean_reward);
    CHECK(e1.std_reward == e2.std_reward);
    CHECK(e1.mean_reward != e3.mean_reward);
    CHECK_THROWS_AS(evaluate(model, suite, {}, sched, scfg, 4, 1), TrainError);
}

TEST_CASE("autoregressive extension chains rounds through the last frame") {
    auto model = small_model(43, CondMode::FirstFrame);
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 4;
    Rng frng(6);
    T f0 = T::randn({1, kDim}, frng);
    {
        NoGradScope<double> ng;
        Rng r1(8);
        T ext = autoregressive_extend(model, f0, 3, sched, scfg, r1, 0);
        CHECK(ext.shape() == Shape{3 * kFrames, kDim});
        // one round is exactly a plain conditioned sample
        Rng r2(8), r3(8);
        T one = autoregressive_extend(model, f0, 1, sched, scfg, r2, 0);
        CondBatch<double> cb = CondBatch<double>::from_frames(f0);
        T plain = sample(model, cb, sched, scfg, r3, 0);
        CHECK(one.values() == plain.values());
    }
    Rng r(1);
    CHECK_THROWS_AS(autoregressive_extend(model, f0, 0, sched, scfg, r, 0), ConfigError);
    T wrong = T::zeros({2, kDim});
    CHECK_THROWS_AS(autoregressive_extend(model, wrong, 2, sched, scfg, r, 0), ShapeError);
    auto cls_model = small_model(44);
    CHECK_THROWS_AS(autoregressive_extend(cls_model, f0, 2, sched, scfg, r, 0), ConfigError);
}

TEST_CASE("cross-boundary consistency windows straddle round seams") {
    ToyWorldSpec spec;
    spec.frames = 4;
    spec.height = 8;
    spec.width = 8;
    Rng rng(3);
    MlpHead<double> pred =
        MlpHead<double>::create(spec.frames * spec.frame_dim(), 16, spec.frames * spec.frame_dim(),
                                rng);
    T ext = T::randn({3 * spec.frames, spec.frame_dim()}, rng, 0.3);
    Rng mrng(9);
    NoGradScope<double> ng;
    T score = extension_consistency(ext, pred, spec, 3, mrng);
    CHECK(score.scalar() <= 0.0);
    T bad = T::randn({5, spec.frame_dim()}, rng);
    CHECK_THROWS_AS(extension_consistency(bad, pred, spec, 3, mrng), ShapeError);
    T one = T::randn({spec.frames, spec.frame_dim()}, rng);
    CHECK_THROWS_AS(extension_consistency(one, pred, spec, 1, mrng), ConfigError);
}

TEST_CASE("frame subsampling reaches only frame-level rewards during scoring") {
    Rng rng(51);
    T x = T::randn({2 * kFrames, kDim}, rng);
    auto conds = class_prompts({0, 1});
    auto suite = brightness_suite();
    suite.spec.frames = kFrames;
    NoGradScope<double> ng;
    // m = frames disables subsampling entirely
    Rng r1(4), r2(5);
    auto full = score_clips(x, conds, suite, kFrames, kFrames, r1);
    auto full2 = score_clips(x, conds, suite, kFrames, 0, r2);
    REQUIRE(full.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(full[i].scalar() == doctest::Approx(full2[i].scalar()));
    // m = 1 scores a single frame of each clip
    Rng r3(4);
    auto one = score_clips(x, conds, suite, kFrames, 1, r3);
    Rng r4(4);
    for (std::size_t b = 0; b < 2; ++b) {
        auto idx = subsample_frames(kFrames, 1, r4);
        T clip = slice_rows(x, b * kFrames, (b + 1) * kFrames);
        T picked = gather_rows(clip, idx);
        CHECK(one[b].scalar() == doctest::Approx(reduce_mean(picked).scalar()));
    }
}
