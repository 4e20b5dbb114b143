// Acceptance checks for the alignment workbench. Each invocation runs one
// numbered criterion and prints a single PASS/FAIL line for it; diagnostic
// detail goes to stderr. Numeric criteria (1-4, 9) run at 64-bit precision,
// end-to-end experiment criteria (5-8, 10) run the production 32-bit path.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "helpers.hpp"
#include "vidrl/experiments.hpp"

using namespace vidrl;
namespace fs = std::filesystem;
using testutil::FDInput;
using testutil::LossBuilder;
using testutil::max_grad_rel_err;
using testutil::weighted_sum;

namespace {

using D = Tensor<double>;
using F = Tensor<float>;

// ---------------------------------------------------------------------------
// shared small helpers
// ---------------------------------------------------------------------------

const char* kWorkDir = "acceptance_work";

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-300);
}

RewardSuite<double> brightness_suite_d() {
    RewardSuite<double> suite;
    RewardModel<double> m;
    m.kind = RewardKind::Brightness;
    suite.models = {m};
    suite.weights = {1.0};
    return suite;
}

/// Shared experiment settings for the 32-bit criteria. Checkpoints are cached
/// in kWorkDir and reused across criteria at the same resolution.
Config tuned_config() {
    Config cfg;
    cfg.experiment = "pretrain";
    cfg.outdir = kWorkDir;
    cfg.seeds = {1, 2, 3};
    cfg.frames = 4;
    cfg.height = cfg.width = 8;
    cfg.dataset_size = 800;
    cfg.disc_steps = 4000;
    cfg.T = 50;
    cfg.sampler = "ddim";
    cfg.steps = 10;
    cfg.hidden = 128;
    cfg.pretrain_steps = 20000;
    cfg.pretrain_lr = 1e-3;
    cfg.batch = 32;
    return cfg;
}

void ensure_pretrained(Config cfg) {
    cfg.experiment = "pretrain";
    if (fs::exists(base_ckpt_path(cfg, cfg.height, cfg.width)) &&
        fs::exists(heads_ckpt_path(cfg, cfg.height, cfg.width)))
        return;
    std::cerr << "[pretrain] " << res_tag(cfg.height, cfg.width)
              << (cfg.conditioning == "first_frame" ? " first_frame" : "") << "\n";
    run_pretrain<float>(cfg);
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference correctness of ops and rewards
// ---------------------------------------------------------------------------

bool criterion1() {
    double worst_op = 0, worst_reward = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        auto chk = [&](const std::vector<FDInput>& specs, const LossBuilder& f) {
            worst_op = std::max(worst_op, max_grad_rel_err(specs, f, rng));
        };
        const FDInput m34{{3, 4}};
        // fixed-seed weights: the builder must be a pure function of its leaves
        auto ws = [seed](const D& t) {
            Rng wr(0xab5d + seed);
            return weighted_sum(t, wr);
        };
        chk({m34, m34}, [&](const std::vector<D>& a) { return ws(add(a[0], a[1])); });
        chk({m34, m34}, [&](const std::vector<D>& a) { return ws(sub(a[0], a[1])); });
        chk({m34, m34}, [&](const std::vector<D>& a) { return ws(mul(a[0], a[1])); });
        chk({{{3, 4}, -1.0, -0.1}, {{3, 4}, 0.1, 1.0}},
            [&](const std::vector<D>& a) { return ws(minimum(a[0], a[1])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(scalar_mul(a[0], 2.5)); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(scalar_add(a[0], -1.2)); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(vtanh(a[0])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(silu(a[0])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(vexp(a[0])); });
        chk({{{3, 4}, 0.2, 2.0}}, [&](const std::vector<D>& a) { return ws(vlog(a[0])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(square(a[0])); });
        chk({{{3, 4}, 0.2, 2.0}}, [&](const std::vector<D>& a) { return ws(vsqrt(a[0])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(sigmoid(a[0])); });
        chk({{{3, 4}, -0.5, 0.5}},
            [&](const std::vector<D>& a) { return ws(clamp(a[0], -0.9, 0.9)); });
        chk({{{3, 4}, 1.5, 2.5}},  // fully clipped region: exactly zero slope
            [&](const std::vector<D>& a) { return ws(clamp(a[0], -0.9, 0.9)); });
        chk({m34}, [&](const std::vector<D>& a) { return reduce_sum(a[0]); });
        chk({m34}, [&](const std::vector<D>& a) { return reduce_mean(a[0]); });
        chk({m34, {{4, 2}}}, [&](const std::vector<D>& a) { return ws(matmul(a[0], a[1])); });
        chk({m34, {{4, 2}}, {{2}}},
            [&](const std::vector<D>& a) { return ws(affine(a[0], a[1], a[2])); });
        chk({{{1, 4}}},
            [&](const std::vector<D>& a) { return ws(broadcast(a[0], {3, 4})); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(reshape(a[0], {2, 6})); });
        chk({{{4, 3}}}, [&](const std::vector<D>& a) { return ws(slice_rows(a[0], 1, 3)); });
        chk({{{2, 3}}, {{2, 3}}},
            [&](const std::vector<D>& a) { return ws(concat<double>({a[0], a[1]}, 0)); });
        chk({{{2, 3}}, {{2, 2}}},
            [&](const std::vector<D>& a) { return ws(concat<double>({a[0], a[1]}, 1)); });
        chk({{{4, 3}}}, [&](const std::vector<D>& a) {
            return ws(gather_rows(a[0], std::vector<std::size_t>{2, 0, 3, 2}));
        });
        chk({m34}, [&](const std::vector<D>& a) {
            return ws(take(a[0], std::vector<std::size_t>{0, 5, 11}));
        });
        chk({m34}, [&](const std::vector<D>& a) { return ws(softmax(a[0])); });
        chk({m34}, [&](const std::vector<D>& a) { return ws(log_softmax(a[0])); });
        chk({{{2, 2}}, {{4, 3}}},
            [&](const std::vector<D>& a) { return ws(frame_mix(a[0], a[1], 2)); });
        chk({m34, {{4, 2}}}, [&](const std::vector<D>& a) {
            std::function<D(const std::vector<D>&)> seg = [](const std::vector<D>& in) {
                return vtanh(matmul(in[0], in[1]));
            };
            return ws(checkpoint<double>(seg, {a[0], a[1]}));
        });
    }

    // the five reward families against a fixed set of frozen heads
    ToyWorldSpec spec;
    spec.frames = 4;
    spec.height = 8;
    spec.width = 8;
    const std::size_t dim = spec.frame_dim();
    Rng hr(13);
    MlpHead<double> frame_clf = MlpHead<double>::create(dim, 24, spec.num_shapes, hr);
    MlpHead<double> video_clf = MlpHead<double>::create(spec.frames * dim, 24, spec.num_motions, hr);
    MlpHead<double> detector = MlpHead<double>::create(dim, 24, spec.num_shapes, hr);
    MlpHead<double> masked_pred =
        MlpHead<double>::create(spec.frames * dim, 24, spec.frames * dim, hr);
    const FDInput clip_in{{spec.frames, dim}, 0.05, 0.95};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(100 + seed);
        auto chk = [&](const LossBuilder& f) {
            worst_reward = std::max(worst_reward, max_grad_rel_err({clip_in}, f, rng));
        };
        chk([&](const std::vector<D>& a) { return reward_brightness(a[0]); });
        chk([&](const std::vector<D>& a) { return reward_text_sim(a[0], 1, frame_clf); });
        chk([&](const std::vector<D>& a) { return reward_video_action(a[0], 2, video_clf); });
        chk([&](const std::vector<D>& a) { return reward_object_absence(a[0], 0, detector); });
        chk([&](const std::vector<D>& a) {
            Rng mask_rng(42 + seed);
            return reward_masked_consistency(a[0], masked_pred, spec, mask_rng);
        });
    }
    std::cerr << "[c1] worst op rel err " << worst_op << ", worst reward rel err "
              << worst_reward << "\n";
    return worst_op < 1e-4 && worst_reward < 1e-3;
}

// ---------------------------------------------------------------------------
// criterion 2: sampler identities
// ---------------------------------------------------------------------------

bool criterion2() {
    bool ok = true;
    auto expect = [&](double got, double want, double tol, const char* what) {
        if (std::abs(got - want) > tol) {
            std::cerr << "[c2] " << what << ": got " << got << ", want " << want << "\n";
            ok = false;
        }
    };
    // hand-checked two-step schedule: beta {0.1, 0.2}, alpha_bar {0.9, 0.72}
    auto s = make_schedule<double>(2, 0.1, 0.2);
    D x = D::full({2, 3}, 1.0);
    D ones = D::full({2, 3}, 1.0);
    D zero = D::zeros({2, 3});
    D x_t = forward_noise(x, 1, ones, s);
    expect(x_t.values()[0], 1.377678, 1e-5, "forward noising");
    D stepped = ddpm_step(ones, 1, x_t, s, zero);
    expect(stepped.values()[0], 1.117716, 1e-5, "stochastic reverse step (z=0)");
    D det = ddim_step(ones, 1, 0, x_t, s, 0.0, zero);
    expect(det.values()[0], 1.264911, 1e-5, "deterministic reverse step");

    // eta = 0 with the true noise as the prediction inverts forward noising
    // exactly at every timestep
    auto big = default_schedule<double>(50);
    Rng rng(4);
    D x0 = D::randn({4, 5}, rng);
    for (long t = 0; t < 50; ++t) {
        D eps = D::randn({4, 5}, rng);
        D noised = forward_noise(x0, t, eps, big);
        D back = ddim_step(eps, t, -1, noised, big, 0.0, D::zeros({4, 5}));
        for (std::size_t i = 0; i < x0.size(); ++i) {
            if (std::abs(back.values()[i] - x0.values()[i]) > 1e-9) {
                std::cerr << "[c2] round trip broke at t=" << t << "\n";
                ok = false;
                t = 50;
                break;
            }
        }
    }

    // gradient-checkpointed denoising: identical loss, matching gradients
    {
        ToyWorldSpec spec;
        spec.frames = 2;
        spec.height = 4;
        spec.width = 4;
        Rng mr(9);
        auto model = DenoiserModel<double>::create(spec.frames, spec.frame_dim(), spec.vocab(),
                                                   CondMode::ClassLabel, 16, mr);
        Rng dr(5);
        auto data = gen_toy_dataset<double>(spec, 4, dr);
        std::vector<const ClipExample<double>*> batch;
        for (const auto& ex : data) batch.push_back(&ex);
        auto sched = default_schedule<double>(10);
        auto run = [&](bool ck) {
            auto m = model.clone();
            m.grad_checkpoint = ck;
            Rng lr(3);
            Tape<double> tape;
            TapeScope<double> scope(tape);
            m.params.zero_grads();
            D loss = diffusion_loss(batch, m, sched, lr);
            const double lv = loss.scalar();
            tape.backward_from(loss.node());
            std::vector<std::vector<double>> grads;
            for (const auto& p : m.params.all()) {
                auto g = p.tensor.grad();
                if (g.empty()) g.assign(p.tensor.size(), 0.0);
                grads.push_back(std::move(g));
            }
            return std::make_pair(lv, grads);
        };
        auto plain = run(false), ck = run(true);
        if (plain.first != ck.first) {
            std::cerr << "[c2] checkpointed loss differs\n";
            ok = false;
        }
        for (std::size_t i = 0; i < plain.second.size() && ok; ++i)
            for (std::size_t j = 0; j < plain.second[i].size(); ++j) {
                const double a = plain.second[i][j], b = ck.second[i][j];
                if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a))) {
                    std::cerr << "[c2] checkpointed gradient differs\n";
                    ok = false;
                    break;
                }
            }
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: gradient truncation
// ---------------------------------------------------------------------------

bool criterion3() {
    bool ok = true;
    Rng mr(11);
    auto model = DenoiserModel<double>::create(2, 6, 3, CondMode::ClassLabel, 16, mr);
    auto sched = default_schedule<double>(20);
    SamplerConfig<double> scfg;
    scfg.steps = 5;
    CondBatch<double> cond = CondBatch<double>::from_classes({0, 2});

    auto grad_norm = [&](DenoiserModel<double>& m, std::size_t K, std::uint64_t seed) {
        Rng r(seed);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        m.params.zero_grads();
        D x = sample(m, cond, sched, scfg, r, K);
        tape.backward_from(reduce_sum(x).node());
        double total = 0;
        for (const auto& p : m.params.all())
            for (double g : p.tensor.grad()) total += g * g;
        return std::sqrt(total);
    };
    // K = 0: fully detached chain, exactly zero parameter gradients
    if (grad_norm(model, 0, 7) != 0.0) {
        std::cerr << "[c3] K=0 produced nonzero gradients\n";
        ok = false;
    }
    if (grad_norm(model, scfg.steps, 7) == 0.0) {
        std::cerr << "[c3] full-window gradients vanished\n";
        ok = false;
    }
    // the cutoff is gradient-only: sampled values are bitwise identical for
    // every K, both sampler kinds
    for (auto kind : {SamplerConfig<double>::Kind::DDIM, SamplerConfig<double>::Kind::DDPM}) {
        scfg.kind = kind;
        std::vector<double> ref;
        for (std::size_t K : {std::size_t(0), std::size_t(2), scfg.steps}) {
            Rng r(21);
            Tape<double> tape;
            TapeScope<double> scope(tape);
            D x = sample(model, cond, sched, scfg, r, K);
            if (ref.empty())
                ref = x.values();
            else if (x.values() != ref) {
                std::cerr << "[c3] cutoff K changed sampled values\n";
                ok = false;
            }
        }
    }
    scfg.kind = SamplerConfig<double>::Kind::DDIM;

    // locality: a parameter that only acts at timesteps outside the gradient
    // window receives exactly zero gradient; inside the window it does not
    const auto ts = timestep_sequence(sched.T, scfg.steps);
    const std::size_t K = 2;
    auto gate_grad = [&](long threshold) {
        auto m = model.clone();
        Rng gr(5);
        m.attach_step_gate(threshold, gr);
        Rng r(9);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        m.params.zero_grads();
        D x = sample(m, cond, sched, scfg, r, K);
        tape.backward_from(reduce_sum(x).node());
        const auto& g = m.params.at("gate.g").tensor.grad();
        return g.empty() ? 0.0 : std::abs(g[0]);
    };
    const long window_first = ts[scfg.steps - K];  // earliest in-window timestep
    if (gate_grad(window_first) != 0.0) {
        std::cerr << "[c3] gate active only at detached steps still got gradient\n";
        ok = false;
    }
    if (gate_grad(window_first - 1) == 0.0) {
        std::cerr << "[c3] gate active inside the window got zero gradient\n";
        ok = false;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 4: baseline identities and the policy-gradient oracle
// ---------------------------------------------------------------------------

bool criterion4() {
    bool ok = true;
    // (a) importance ratio is exactly 1 at collection time
    {
        Rng mr(3);
        auto model = DenoiserModel<double>::create(2, 6, 4, CondMode::ClassLabel, 12, mr);
        auto sched = default_schedule<double>(20);
        const std::size_t steps = 4;
        std::vector<Conditioning<double>> conds(3);
        for (std::size_t i = 0; i < 3; ++i) {
            conds[i].kind = CondMode::ClassLabel;
            conds[i].class_index = i;
        }
        Rng rng(11);
        auto rolls = collect_rollouts(model, brightness_suite_d(), conds, sched, steps, rng);
        const auto ts = timestep_sequence(sched.T, steps);
        auto ssched = make_subschedule(sched, ts);
        NoGradScope<double> ng;
        for (const auto& r : rolls)
            for (const auto& tr : r.transitions) {
                D x_t({2, 6}, tr.x_t);
                std::vector<long> tm = {ts[steps - 1 - std::size_t(tr.sub_t)]};
                std::vector<Conditioning<double>> c1 = {r.cond};
                CondBatch<double> cb = CondBatch<double>::from_conditionings(c1);
                D mean = ddpm_mean(denoiser_forward(model, x_t, tm, cb), tr.sub_t, x_t, ssched);
                const double lp = detail::gaussian_logp<double>(tr.x_prev, mean.values(), tr.sigma);
                if (std::abs(lp - tr.old_logp) > 1e-9 * std::max(1.0, std::abs(lp))) {
                    std::cerr << "[c4] collection-time ratio != 1\n";
                    ok = false;
                }
            }
    }
    // (b) preference loss is exactly log 2 when the policy equals the reference
    {
        Rng mr(13);
        auto model = DenoiserModel<double>::create(2, 6, 4, CondMode::ClassLabel, 12, mr);
        auto ref = model.clone();
        auto sched = default_schedule<double>(20);
        Rng pr(21);
        std::vector<PreferencePair<double>> pairs(4);
        for (auto& p : pairs) {
            p.cond.kind = CondMode::ClassLabel;
            p.cond.class_index = pr.index(4);
            p.winner.resize(12);
            p.loser.resize(12);
            for (auto& v : p.winner) v = pr.uniform();
            for (auto& v : p.loser) v = pr.uniform();
        }
        Rng rng(5);
        NoGradScope<double> ng;
        const double l = dpo_loss(pairs, model, ref, sched, 500.0, rng).scalar();
        if (std::abs(l - std::log(2.0)) > 1e-9) {
            std::cerr << "[c4] reference-point preference loss " << l << " != log 2\n";
            ok = false;
        }
    }
    // (c) policy-gradient direction vs a common-random-numbers Monte-Carlo
    // oracle on a one-step scalar problem
    {
        const std::size_t hidden = 4;
        auto sched = default_schedule<double>(1);
        Rng mr(1);
        auto model = DenoiserModel<double>::create(1, 1, 1, CondMode::ClassLabel, hidden, mr);
        std::vector<std::string> free_names = {"out.w", "out.b"};
        for (auto& p : model.params.all()) {
            const bool keep = std::find(free_names.begin(), free_names.end(), p.name) !=
                              free_names.end();
            if (!keep) {
                p.trainable = false;
                p.tensor.set_requires_grad(false);
            }
        }
        auto suite = brightness_suite_d();
        // surrogate gradient averaged over fresh rollout batches; lr = 0 and
        // grad_clip = 0 make each update a pure gradient computation
        AlignConfig<double> cfg;
        cfg.lr = 0.0;
        cfg.grad_clip = 0.0;
        cfg.ppo_epochs = 1;
        cfg.batch = 1u << 14;  // one mini-batch covers every transition
        Adam<double> opt(0.0);
        std::vector<double> est(hidden + 1, 0.0);
        const std::size_t B = 8192, reps = 16;
        std::vector<Conditioning<double>> conds(B);
        for (auto& c : conds) {
            c.kind = CondMode::ClassLabel;
            c.class_index = 0;
        }
        Rng rng(77);
        for (std::size_t rep = 0; rep < reps; ++rep) {
            auto rolls = collect_rollouts(model, suite, conds, sched, 1, rng);
            compute_advantages(rolls);
            ppo_update(model, opt, rolls, sched, 1, cfg, rng);
            const auto& gw = model.params.at("out.w").tensor.grad();
            const auto& gb = model.params.at("out.b").tensor.grad();
            for (std::size_t j = 0; j < hidden; ++j) est[j] += -gw[j];  // ascent direction
            est[hidden] += -gb[0];
        }
        for (auto& v : est) v /= double(reps);

        // oracle: d/dtheta of E[brightness(x_0)] over 10^6 fixed noise draws.
        // One reverse step from x_1 ~ N(0,1): x_0 = (x_1 - coef*eps_hat)/sqrt(alpha)
        // + sigma*z, and the z term is theta-free with zero mean, so it drops out.
        const std::size_t M = 1000000, chunk = 4096;
        std::vector<double> x1(M);
        Rng nr(123);
        for (auto& v : x1) v = nr.normal();
        const auto ts = timestep_sequence(1, 1);
        auto ssched = make_subschedule(sched, ts);
        const double coef =
            ssched.beta[0] / std::sqrt(1.0 - ssched.alpha_bar[0]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(ssched.alpha[0]);
        auto J = [&]() {
            NoGradScope<double> ng;
            double acc = 0;
            for (std::size_t base = 0; base < M; base += chunk) {
                const std::size_t n = std::min(chunk, M - base);
                std::vector<double> xv(x1.begin() + long(base), x1.begin() + long(base + n));
                D x({n, 1}, std::move(xv));
                std::vector<long> tm(n, ts[0]);
                std::vector<std::size_t> cls(n, 0);
                const auto pred = model.forward(x, tm, cls).values();
                for (std::size_t i = 0; i < n; ++i)
                    acc += (x1[base + i] - coef * pred[i]) * inv_sqrt_alpha;
            }
            return acc / double(M);
        };
        std::vector<double> oracle(hidden + 1, 0.0);
        auto fd = [&](double& theta) {
            const double h = 1e-4 * std::max(1.0, std::abs(theta));
            const double orig = theta;
            theta = orig + h;
            const double jp = J();
            theta = orig - h;
            const double jm = J();
            theta = orig;
            return (jp - jm) / (2 * h);
        };
        auto& wv = model.params.at("out.w").tensor.mutable_values();
        auto& bv = model.params.at("out.b").tensor.mutable_values();
        for (std::size_t j = 0; j < hidden; ++j) oracle[j] = fd(wv[j]);
        oracle[hidden] = fd(bv[0]);

        const double cos = cosine(est, oracle);
        std::cerr << "[c4] surrogate/oracle cosine " << cos << "\n";
        if (!(cos > 0.9)) ok = false;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 9: unbiased frame subsampling
// ---------------------------------------------------------------------------

bool criterion9() {
    ToyWorldSpec spec;
    spec.frames = 8;
    spec.height = 8;
    spec.width = 8;
    Rng rng(31);
    D clip = D::randn({spec.frames, spec.frame_dim()}, rng, 1.0);
    NoGradScope<double> ng;
    const double full = reduce_mean(clip).scalar();
    const std::size_t draws = 10000;
    double acc = 0;
    for (std::size_t i = 0; i < draws; ++i) {
        auto idx = subsample_frames(spec.frames, 3, rng);
        acc += reduce_mean(gather_rows(clip, idx)).scalar();
    }
    const double err = std::abs(acc / double(draws) - full);
    std::cerr << "[c9] estimator bias " << err << " (limit 0.01)\n";
    return err < 0.01;
}

// ---------------------------------------------------------------------------
// criterion 5: query-efficiency trend under a shared budget
// ---------------------------------------------------------------------------

bool criterion5() {
    Config cfg = tuned_config();
    ensure_pretrained(cfg);
    cfg.experiment = "sweep-efficiency";
    cfg.reward = {"frame_classifier"};
    cfg.budget_queries = 5000;
    cfg.lr = 2e-3;
    cfg.batch = 8;
    cfg.eval_every = 10;
    cfg.eval_samples = 24;
    auto sum = run_efficiency_sweep<float>(cfg);
    std::cerr << "[c5] base " << sum.base_reward;
    for (const auto& [algo, v] : sum.median_final)
        std::cerr << " | " << algo << " final " << v << " half@"
                  << sum.median_queries_to_half.at(algo);
    std::cerr << "\n";
    return sum.vader_best && sum.vader_half_fast;
}

// ---------------------------------------------------------------------------
// criterion 6: reward gap grows with resolution
// ---------------------------------------------------------------------------

bool criterion6() {
    Config cfg = tuned_config();
    for (std::size_t res : {std::size_t(8), std::size_t(16), std::size_t(32)}) {
        Config p = cfg;
        p.height = p.width = res;
        // larger grids cost proportionally more per step; a lighter base keeps
        // the sweep inside its wall-clock budget without affecting the gap trend
        if (res > 8) p.pretrain_steps = 5000;
        // at 32x32 the video discriminator needs more data to clear its
        // held-out accuracy gate
        if (res > 16) {
            p.dataset_size = 2000;
            p.disc_steps = 8000;
        }
        ensure_pretrained(p);
    }
    cfg.experiment = "sweep-resolution";
    cfg.reward = {"frame_classifier"};
    cfg.align_steps = 100;
    cfg.lr = 2e-3;
    cfg.batch = 8;
    cfg.eval_every = 100;  // final evaluation decides the gap
    auto sum = run_resolution_sweep<float>(cfg);
    std::cerr << "[c6] gaps";
    for (std::size_t i = 0; i < sum.resolutions.size(); ++i)
        std::cerr << " " << sum.resolutions[i] << ":" << sum.median_gap[i];
    std::cerr << " slope " << sum.slope << "\n";
    return sum.slope >= 0;
}

// ---------------------------------------------------------------------------
// criterion 7: generalization to held-out prompts for >= 3 reward kinds
// ---------------------------------------------------------------------------

bool criterion7() {
    Config base = tuned_config();
    ensure_pretrained(base);
    bool ok = true;
    struct Knobs {
        const char* reward;
        double lr;
        std::size_t steps;
    };
    // per-family step sizes: probability-shaped rewards need longer, gentler
    // runs than log-likelihood ones
    const Knobs knobs[] = {{"frame_classifier", 2e-3, 80},
                           {"brightness", 2e-4, 60},
                           {"video_action", 5e-4, 100}};
    for (const Knobs& k : knobs) {
        const std::string reward = k.reward;
        Config cfg = base;
        cfg.experiment = "generalize";
        cfg.outdir = std::string(kWorkDir) + "/gen_" + reward;
        fs::create_directories(cfg.outdir);
        // reuse the shared pretrained checkpoints
        fs::copy_file(base_ckpt_path(base, base.height, base.width),
                      base_ckpt_path(cfg, cfg.height, cfg.width),
                      fs::copy_options::overwrite_existing);
        fs::copy_file(heads_ckpt_path(base, base.height, base.width),
                      heads_ckpt_path(cfg, cfg.height, cfg.width),
                      fs::copy_options::overwrite_existing);
        cfg.reward = {reward};
        cfg.lr = k.lr;
        cfg.batch = 8;
        cfg.align_steps = k.steps;
        cfg.eval_every = k.steps;
        cfg.eval_samples = 64;
        auto sum = run_generalization<float>(cfg);
        const auto& b = sum.table.at("base");
        const auto& v = sum.table.at("vader");
        std::cerr << "[c7] " << reward << " base(" << b.first << "," << b.second << ") vader("
                  << v.first << "," << v.second << ") ddpo/dpo rows "
                  << sum.table.count("ddpo") << "/" << sum.table.count("dpo") << "\n";
        if (!(v.first > b.first && v.second > b.second)) ok = false;
        if (!sum.table.count("ddpo") || !sum.table.count("dpo")) ok = false;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 8: long-horizon extension improves after fine-tuning
// ---------------------------------------------------------------------------

bool criterion8() {
    Config cfg = tuned_config();
    cfg.conditioning = "first_frame";
    ensure_pretrained(cfg);
    cfg.experiment = "extend";
    cfg.outdir = std::string(kWorkDir) + "/extend";
    fs::create_directories(cfg.outdir);
    Config shared = tuned_config();
    shared.conditioning = "first_frame";
    fs::copy_file(base_ckpt_path(shared, shared.height, shared.width),
                  base_ckpt_path(cfg, cfg.height, cfg.width),
                  fs::copy_options::overwrite_existing);
    fs::copy_file(heads_ckpt_path(shared, shared.height, shared.width),
                  heads_ckpt_path(cfg, cfg.height, cfg.width),
                  fs::copy_options::overwrite_existing);
    cfg.rounds = 3;
    cfg.align_steps = 60;
    cfg.lr = 2e-3;
    cfg.batch = 16;
    cfg.eval_samples = 16;
    auto sum = run_extend<float>(cfg);
    std::cerr << "[c8]";
    for (std::size_t i = 0; i < sum.base_scores.size(); ++i)
        std::cerr << " seed" << cfg.seeds[i] << " " << sum.base_scores[i] << "->"
                  << sum.tuned_scores[i];
    std::cerr << "\n";
    return sum.all_improved;
}

// ---------------------------------------------------------------------------
// criterion 10: reproducibility and persistence
// ---------------------------------------------------------------------------

std::vector<MetricsRow> rows_sans_wallclock(const std::string& path) {
    auto rows = read_metrics(path);
    for (auto& r : rows) r.wallclock_s = 0;
    return rows;
}

bool same_rows(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (format_row(a[i]) != format_row(b[i])) return false;
    return true;
}

bool criterion10() {
    bool ok = true;
    Config base = tuned_config();
    ensure_pretrained(base);

    Config cfg = base;
    cfg.experiment = "align";
    cfg.algo = "vader";
    cfg.seeds = {5};
    cfg.align_steps = 5;
    cfg.eval_every = 2;
    cfg.eval_samples = 8;
    cfg.lr = 1e-3;
    auto run_once = [&](const std::string& outdir) {
        Config c = cfg;
        c.outdir = outdir;
        fs::create_directories(outdir);
        fs::copy_file(base_ckpt_path(base, base.height, base.width),
                      base_ckpt_path(c, c.height, c.width),
                      fs::copy_options::overwrite_existing);
        fs::copy_file(heads_ckpt_path(base, base.height, base.width),
                      heads_ckpt_path(c, c.height, c.width),
                      fs::copy_options::overwrite_existing);
        run_align<float>(c);
        return outdir + "/align_vader_seed5.csv";
    };
    const std::string csv_a = run_once(std::string(kWorkDir) + "/repro_a");
    const std::string csv_b = run_once(std::string(kWorkDir) + "/repro_b");
    if (!same_rows(rows_sans_wallclock(csv_a), rows_sans_wallclock(csv_b))) {
        std::cerr << "[c10] identical (config, seed) runs produced different metrics\n";
        ok = false;
    }
    // different seed must actually change the results
    Config c2 = cfg;
    c2.seeds = {6};
    cfg.seeds = {6};
    const std::string csv_c = [&] {
        Config c = cfg;
        c.outdir = std::string(kWorkDir) + "/repro_c";
        fs::create_directories(c.outdir);
        fs::copy_file(base_ckpt_path(base, base.height, base.width),
                      base_ckpt_path(c, c.height, c.width),
                      fs::copy_options::overwrite_existing);
        fs::copy_file(heads_ckpt_path(base, base.height, base.width),
                      heads_ckpt_path(c, c.height, c.width),
                      fs::copy_options::overwrite_existing);
        run_align<float>(c);
        return c.outdir + "/align_vader_seed6.csv";
    }();
    if (same_rows(rows_sans_wallclock(csv_a), rows_sans_wallclock(csv_c))) {
        std::cerr << "[c10] different seeds produced identical metrics\n";
        ok = false;
    }

    // checkpoint round trip is bitwise at storage precision
    const std::string mp = std::string(kWorkDir) + "/repro_a/aligned_vader_seed5.ckpt";
    auto m1 = load_model<float>(mp);
    const std::string mp2 = std::string(kWorkDir) + "/roundtrip.ckpt";
    save_model(mp2, m1);
    auto m2 = load_model<float>(mp2);
    for (const auto& p : m1.params.all())
        if (m2.params.at(p.name).tensor.values() != p.tensor.values()) {
            std::cerr << "[c10] checkpoint round trip changed parameter " << p.name << "\n";
            ok = false;
        }
    // corruption is detected
    {
        std::ifstream f(mp2, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x10);
        const std::string bad = std::string(kWorkDir) + "/corrupt.ckpt";
        std::ofstream o(bad, std::ios::binary | std::ios::trunc);
        o.write(bytes.data(), std::streamsize(bytes.size()));
        o.close();
        try {
            (void)load_model<float>(bad);
            std::cerr << "[c10] corrupted checkpoint loaded without error\n";
            ok = false;
        } catch (const CheckpointError&) {
        }
    }
    return ok;
}

struct Criterion {
    const char* what;
    bool (*run)();
};

const Criterion kCriteria[10] = {
    {"finite-difference gradient correctness (ops and rewards)", criterion1},
    {"sampler hand values, exact inversion, checkpoint transparency", criterion2},
    {"gradient truncation is exact and local", criterion3},
    {"baseline identities and policy-gradient oracle agreement", criterion4},
    {"reward-gradient training is most query efficient", criterion5},
    {"reward gap over the policy-gradient baseline grows with resolution", criterion6},
    {"alignment generalizes to held-out prompts for 3 reward kinds", criterion7},
    {"long-horizon extensions improve after consistency fine-tuning", criterion8},
    {"subsampled frame rewards are unbiased", criterion9},
    {"(config, seed) reproducibility and checkpoint persistence", criterion10},
};

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: acceptance <criterion 1-10>\n";
        return 1;
    }
    const int n = std::atoi(argv[1]);
    if (n < 1 || n > 10) {
        std::cerr << "criterion must be 1-10\n";
        return 1;
    }
    const Criterion& c = kCriteria[n - 1];
    bool ok = false;
    try {
        ok = c.run();
    } catch (const std::exception& e) {
        std::cerr << "criterion " << n << " threw: " << e.what() << "\n";
        ok = false;
    }
    std::cout << "criterion " << n << " (" << c.what << "): " << (ok ? "PASS" : "FAIL")
              << std::endl;
    return ok ? 0 : 1;
}
