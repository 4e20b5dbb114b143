#pragma once

#include "vidrl/nn.hpp"

namespace vidrl {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

template <class Real>
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<Real> beta, alpha, alpha_bar, sigma;  // sigma_t = sqrt(beta_t)
};

template <class Real>
NoiseSchedule<Real> make_schedule(std::size_t T, Real beta_min, Real beta_max) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_min > Real(0)) || !(beta_min <= beta_max) || !(beta_max < Real(1)))
        throw ConfigError("make_schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule<Real> s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    Real abar = Real(1);
    for (std::size_t t = 0; t < T; ++t) {
        s.beta[t] = T == 1 ? beta_min
                           : beta_min + (beta_max - beta_min) * static_cast<Real>(t) /
                                            static_cast<Real>(T - 1);
        s.alpha[t] = Real(1) - s.beta[t];
        abar *= s.alpha[t];
        s.alpha_bar[t] = abar;
        s.sigma[t] = static_cast<Real>(std::sqrt(double(s.beta[t])));
    }
    return s;
}

/// Linear beta range rescaled so that short schedules still reach near-zero
/// signal retention at the final step.
template <class Real>
NoiseSchedule<Real> default_schedule(std::size_t T) {
    const Real scale = static_cast<Real>(1000.0 / double(T));
    const Real bmin = std::min(Real(0.5), Real(1e-4) * scale);
    const Real bmax = std::min(Real(0.5), Real(0.02) * scale);
    return make_schedule<Real>(T, bmin, bmax);
}

/// Descending timestep subsequence for a sampler using `steps` of the T-step
/// schedule, evenly spaced, ending at t = 0.
inline std::vector<long> timestep_sequence(std::size_t T, std::size_t steps) {
    if (steps < 1 || steps > T)
        throw ConfigError("sampler steps must satisfy 1 <= steps <= T");
    std::vector<long> ts(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        double pos = steps == 1 ? double(T - 1)
                                : double(T - 1) * double(steps - 1 - i) / double(steps - 1);
        ts[i] = static_cast<long>(std::llround(pos));
    }
    return ts;
}

/// Schedule over a timestep subsequence: alpha_bar restricted to the chosen
/// steps, per-step alpha/beta re-derived from consecutive ratios.
template <class Real>
NoiseSchedule<Real> make_subschedule(const NoiseSchedule<Real>& s, const std::vector<long>& ts_desc) {
    NoiseSchedule<Real> sub;
    sub.T = ts_desc.size();
    sub.beta.resize(sub.T);
    sub.alpha.resize(sub.T);
    sub.alpha_bar.resize(sub.T);
    sub.sigma.resize(sub.T);
    Real prev = Real(1);
    for (std::size_t i = 0; i < sub.T; ++i) {
        const long t = ts_desc[sub.T - 1 - i];  // ascending
        sub.alpha_bar[i] = s.alpha_bar[static_cast<std::size_t>(t)];
        sub.alpha[i] = sub.alpha_bar[i] / prev;
        sub.beta[i] = Real(1) - sub.alpha[i];
        sub.sigma[i] = static_cast<Real>(std::sqrt(double(std::max(Real(0), sub.beta[i]))));
        prev = sub.alpha_bar[i];
    }
    return sub;
}

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

enum class CondMode { ClassLabel, FirstFrame };

template <class Real>
struct Conditioning {
    CondMode kind = CondMode::ClassLabel;
    std::size_t class_index = 0;
    std::vector<Real> frame;  // reference frame pixels (FirstFrame mode)
};

// ---------------------------------------------------------------------------
// Forward noising (Eq-style q(x_t | x_0))
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> forward_noise(const Tensor<Real>& x, long t, const Tensor<Real>& eps,
                           const NoiseSchedule<Real>& sched) {
    if (t < 0 || static_cast<std::size_t>(t) >= sched.T)
        throw ConfigError("forward_noise: t out of range");
    detail::require_same_shape("forward_noise", x, eps);
    const Real abar = sched.alpha_bar[static_cast<std::size_t>(t)];
    const Real a = static_cast<Real>(std::sqrt(double(abar)));
    const Real b = static_cast<Real>(std::sqrt(double(Real(1) - abar)));
    return add(scalar_mul(x, a), scalar_mul(eps, b));
}

// ---------------------------------------------------------------------------
// Reverse steps
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> ddpm_step(const Tensor<Real>& pred, long t, const Tensor<Real>& x_t,
                       const NoiseSchedule<Real>& sched, const Tensor<Real>& z) {
    if (t < 0 || static_cast<std::size_t>(t) >= sched.T)
        throw ConfigError("ddpm_step: t out of range");
    const std::size_t ti = static_cast<std::size_t>(t);
    const Real alpha = sched.alpha[ti];
    const Real abar = sched.alpha_bar[ti];
    const Real beta = sched.beta[ti];
    const Real inv_sqrt_alpha = static_cast<Real>(1.0 / std::sqrt(double(alpha)));
    const Real coef = beta / static_cast<Real>(std::sqrt(double(Real(1) - abar)));
    Tensor<Real> mean = scalar_mul(sub(x_t, scalar_mul(pred, coef)), inv_sqrt_alpha);
    return add(mean, scalar_mul(z, sched.sigma[ti]));
}

/// Deterministic mean of the DDPM reverse kernel (the z = 0 part).
template <class Real>
Tensor<Real> ddpm_mean(const Tensor<Real>& pred, long t, const Tensor<Real>& x_t,
                       const NoiseSchedule<Real>& sched) {
    const std::size_t ti = static_cast<std::size_t>(t);
    const Real inv_sqrt_alpha = static_cast<Real>(1.0 / std::sqrt(double(sched.alpha[ti])));
    const Real coef =
        sched.beta[ti] / static_cast<Real>(std::sqrt(double(Real(1) - sched.alpha_bar[ti])));
    return scalar_mul(sub(x_t, scalar_mul(pred, coef)), inv_sqrt_alpha);
}

/// DDIM step from t to t_prev (t_prev = -1 terminates, returning x0-hat).
template <class Real>
Tensor<Real> ddim_step(const Tensor<Real>& pred, long t, long t_prev, const Tensor<Real>& x_t,
                       const NoiseSchedule<Real>& sched, Real eta, const Tensor<Real>& z) {
    if (t_prev >= t) throw ConfigError("ddim_step: t_prev must be < t");
    if (t < 0 || static_cast<std::size_t>(t) >= sched.T)
        throw ConfigError("ddim_step: t out of range");
    const Real abar_t = sched.alpha_bar[static_cast<std::size_t>(t)];
    const Real sqrt_abar_t = static_cast<Real>(std::sqrt(double(abar_t)));
    const Real sqrt_one_minus = static_cast<Real>(std::sqrt(double(Real(1) - abar_t)));
    Tensor<Real> x0_hat =
        scalar_mul(sub(x_t, scalar_mul(pred, sqrt_one_minus)), Real(1) / sqrt_abar_t);
    if (t_prev < 0) return x0_hat;
    const Real abar_p = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
    const Real sig =
        eta *
        static_cast<Real>(std::sqrt(double((Real(1) - abar_p) / (Real(1) - abar_t)))) *
        static_cast<Real>(std::sqrt(double(Real(1) - abar_t / abar_p)));
    const Real dir_coef =
        static_cast<Real>(std::sqrt(std::max(0.0, double(Real(1) - abar_p - sig * sig))));
    Tensor<Real> out = add(scalar_mul(x0_hat, static_cast<Real>(std::sqrt(double(abar_p)))),
                           scalar_mul(pred, dir_coef));
    if (eta > Real(0)) out = add(out, scalar_mul(z, sig));
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser model
// ---------------------------------------------------------------------------

/// Per-frame MLP trunk with a sinusoidal time embedding, a learned
/// conditioning embedding, and one cross-frame mixing layer.
template <class Real>
struct DenoiserModel {
    std::size_t frames = 4;      // N
    std::size_t frame_dim = 64;  // C*H*W
    std::size_t vocab = 12;
    std::size_t hidden = 256;
    std::size_t t_dim = 32;
    std::size_t c_dim = 32;
    CondMode cond_mode = CondMode::ClassLabel;
    bool grad_checkpoint = false;
    long step_gate = -1;  // when >= 0, "gate.g" is added only for t > step_gate
    std::size_t lora_rank = 0;
    std::vector<std::string> lora_targets;
    ParamStore<Real> params;

    static const std::vector<std::string>& affine_layer_names() {
        static const std::vector<std::string> names = {"fc1", "fc2", "out", "cond"};
        return names;
    }

    static DenoiserModel create(std::size_t frames, std::size_t frame_dim, std::size_t vocab,
                                CondMode mode, std::size_t hidden, Rng& rng) {
        DenoiserModel m;
        m.frames = frames;
        m.frame_dim = frame_dim;
        m.vocab = vocab;
        m.hidden = hidden;
        m.cond_mode = mode;
        const std::size_t in_dim = frame_dim + m.t_dim + m.c_dim;
        auto init = [&](Shape shape, double scale) {
            return Tensor<Real>::randn(std::move(shape), rng, static_cast<Real>(scale), true);
        };
        m.params.add("fc1.w", init({in_dim, hidden}, 1.0 / std::sqrt(double(in_dim))));
        m.params.add("fc1.b", Tensor<Real>::zeros({hidden}, true));
        m.params.add("fc2.w", init({hidden, hidden}, 1.0 / std::sqrt(double(hidden))));
        m.params.add("fc2.b", Tensor<Real>::zeros({hidden}, true));
        m.params.add("out.w", init({hidden, frame_dim}, 1.0 / std::sqrt(double(hidden))));
        m.params.add("out.b", Tensor<Real>::zeros({frame_dim}, true));
        // mixing matrix starts near identity so frames begin decoupled
        {
            std::vector<Real> mix(frames * frames, Real(0));
            for (std::size_t i = 0; i < frames; ++i) {
                for (std::size_t j = 0; j < frames; ++j) {
                    mix[i * frames + j] = (i == j ? Real(1) : Real(0)) +
                                          static_cast<Real>(rng.normal() * 0.02);
                }
            }
            m.params.add("mix.m", Tensor<Real>({frames, frames}, std::move(mix), true));
        }
        // both conditioning paths keep the same parameter layout so checkpoints
        // stay interchangeable across modes
        m.params.add("cond.table", init({vocab, m.c_dim}, 0.5));
        m.params.add("cond.w", init({frame_dim, m.c_dim}, 1.0 / std::sqrt(double(frame_dim))));
        m.params.add("cond.b", Tensor<Real>::zeros({m.c_dim}, true));
        return m;
    }

    /// Diagnostic hook: a scalar parameter that only affects predictions at
    /// timesteps above `threshold`. Lets tests verify which sampler steps a
    /// gradient cutoff actually reaches.
    void attach_step_gate(long threshold, Rng& rng) {
        step_gate = threshold;
        if (!params.has("gate.g"))
            params.add("gate.g", Tensor<Real>::randn({1}, rng, static_cast<Real>(0.01), true));
    }

    DenoiserModel clone() const {
        DenoiserModel m = *this;
        m.params = params.clone();
        return m;
    }

    /// eps prediction. `x` is [B*N, frame_dim]; `ts` one timestep per clip.
    /// Conditioning: per-clip class indices, or reference frames [B, frame_dim].
    Tensor<Real> forward(const Tensor<Real>& x, const std::vector<long>& ts,
                         const std::vector<std::size_t>& classes) const {
        return forward_dispatch(x, ts, &classes, nullptr);
    }
    Tensor<Real> forward(const Tensor<Real>& x, const std::vector<long>& ts,
                         const Tensor<Real>& ref_frames) const {
        return forward_dispatch(x, ts, nullptr, &ref_frames);
    }

    /// Effective weight of a named affine layer (base + low-rank delta).
    Tensor<Real> layer_out(const std::string& name, const Tensor<Real>& x,
                           const std::function<Tensor<Real>(const std::string&)>& get) const {
        Tensor<Real> y = affine(x, get(name + ".w"), get(name + ".b"));
        if (lora_rank > 0 &&
            std::find(lora_targets.begin(), lora_targets.end(), name) != lora_targets.end()) {
            y = add(y, matmul(matmul(x, get(name + ".lora_a")), get(name + ".lora_b")));
        }
        return y;
    }

private:
    Tensor<Real> forward_dispatch(const Tensor<Real>& x, const std::vector<long>& ts,
                                  const std::vector<std::size_t>* classes,
                                  const Tensor<Real>* ref_frames) const {
        const std::size_t B = classes ? classes->size() : ref_frames->shape()[0];
        if (x.shape() != Shape{B * frames, frame_dim})
            throw ShapeError("denoiser: input shape " + shape_str(x.shape()) + " expected [" +
                             std::to_string(B * frames) + "," + std::to_string(frame_dim) + "]");
        if (ts.size() != B) throw ShapeError("denoiser: one timestep per clip required");

        // captures by value: the checkpointed variant re-runs this during the
        // backward pass, long after forward_dispatch has returned
        auto classes_copy = classes ? *classes : std::vector<std::size_t>{};
        const bool has_classes = classes != nullptr;
        auto run = [this, ts, B, classes_copy, has_classes](
                       const std::function<Tensor<Real>(const std::string&)>& get,
                       const Tensor<Real>& xin, const Tensor<Real>* ref) -> Tensor<Real> {
            Tensor<Real> temb = time_embedding(ts, B);
            Tensor<Real> cemb_clip;
            if (has_classes) {
                cemb_clip = gather_rows(get("cond.table"), classes_copy);
            } else {
                cemb_clip = layer_out("cond", *ref, get);
            }
            std::vector<std::size_t> row_clip(B * frames);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t n = 0; n < frames; ++n) row_clip[b * frames + n] = b;
            Tensor<Real> cemb = gather_rows(cemb_clip, row_clip);
            Tensor<Real> in = concat<Real>({xin, temb, cemb}, 1);
            Tensor<Real> h1 = silu(layer_out("fc1", in, get));
            Tensor<Real> h2 = silu(layer_out("fc2", h1, get));
            Tensor<Real> h3 = silu(frame_mix(get("mix.m"), h2, frames));
            Tensor<Real> out = layer_out("out", h3, get);
            if (step_gate >= 0) {
                std::vector<Real> ind(B * frames * frame_dim);
                for (std::size_t b = 0; b < B; ++b) {
                    const Real v = ts[b] > step_gate ? Real(1) : Real(0);
                    std::fill(ind.begin() + static_cast<long>(b * frames * frame_dim),
                              ind.begin() + static_cast<long>((b + 1) * frames * frame_dim), v);
                }
                Tensor<Real> mask({B * frames, frame_dim}, std::move(ind));
                out = add(out, mul(broadcast(get("gate.g"), out.shape()), mask));
            }
            return out;
        };

        bool tape_active = detail::TapeContext<Real>::active() != nullptr &&
                           detail::TapeContext<Real>::grad_enabled();
        if (grad_checkpoint && tape_active) {
            // segment inputs: x, [ref], then every parameter in store order
            std::vector<Tensor<Real>> inputs;
            inputs.push_back(x);
            if (ref_frames) inputs.push_back(*ref_frames);
            const std::size_t pbase = inputs.size();
            std::vector<std::string> names;
            for (const auto& p : params.all()) {
                inputs.push_back(p.tensor);
                names.push_back(p.name);
            }
            const bool has_ref = ref_frames != nullptr;
            std::function<Tensor<Real>(const std::vector<Tensor<Real>>&)> segment =
                [run, names, pbase, has_ref](const std::vector<Tensor<Real>>& in) {
                    auto get = [&](const std::string& name) -> Tensor<Real> {
                        for (std::size_t i = 0; i < names.size(); ++i)
                            if (names[i] == name) return in[pbase + i];
                        throw TrainError("checkpoint segment: unknown parameter '" + name + "'");
                    };
                    const Tensor<Real>* ref = has_ref ? &in[1] : nullptr;
                    return run(get, in[0], ref);
                };
            return checkpoint<Real>(segment, inputs);
        }
        auto get = [&](const std::string& name) -> Tensor<Real> { return params.at(name).tensor; };
        return run(get, x, ref_frames);
    }

    Tensor<Real> time_embedding(const std::vector<long>& ts, std::size_t B) const {
        const std::size_t half = t_dim / 2;
        std::vector<Real> v(B * frames * t_dim);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t n = 0; n < frames; ++n) {
                Real* row = v.data() + (b * frames + n) * t_dim;
                for (std::size_t j = 0; j < half; ++j) {
                    double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
                    double ang = double(ts[b]) * freq;
                    row[j] = static_cast<Real>(std::sin(ang));
                    row[half + j] = static_cast<Real>(std::cos(ang));
                }
            }
        }
        return Tensor<Real>({B * frames, t_dim}, std::move(v));
    }
};

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

template <class Real>
struct SamplerConfig {
    enum class Kind { DDPM, DDIM };
    Kind kind = Kind::DDIM;
    Real eta = Real(0);
    std::size_t steps = 10;
    std::uint64_t seed = 0;
};

/// Conditioning batch: either class indices or reference frames [B, D].
template <class Real>
struct CondBatch {
    std::vector<std::size_t> classes;
    Tensor<Real> ref_frames;
    bool first_frame = false;

    static CondBatch from_classes(std::vector<std::size_t> c) {
        CondBatch b;
        b.classes = std::move(c);
        return b;
    }
    static CondBatch from_frames(Tensor<Real> frames) {
        CondBatch b;
        b.ref_frames = std::move(frames);
        b.first_frame = true;
        return b;
    }
    static CondBatch from_conditionings(const std::vector<Conditioning<Real>>& cs) {
        CondBatch b;
        if (!cs.empty() && cs[0].kind == CondMode::FirstFrame) {
            b.first_frame = true;
            std::vector<Real> v;
            for (const auto& c : cs) v.insert(v.end(), c.frame.begin(), c.frame.end());
            b.ref_frames = Tensor<Real>({cs.size(), cs[0].frame.size()}, std::move(v));
        } else {
            for (const auto& c : cs) b.classes.push_back(c.class_index);
        }
        return b;
    }
    std::size_t batch() const { return first_frame ? ref_frames.shape()[0] : classes.size(); }
};

template <class Real>
Tensor<Real> denoiser_forward(const DenoiserModel<Real>& model, const Tensor<Real>& x,
                              const std::vector<long>& ts, const CondBatch<Real>& cond) {
    return cond.first_frame ? model.forward(x, ts, cond.ref_frames)
                            : model.forward(x, ts, cond.classes);
}

/// Run the reverse loop. Gradient flows only through the last
/// `grad_cutoff_K` steps; earlier steps have both the prediction and the
/// carried state detached. Values never depend on K.
template <class Real>
Tensor<Real> sample(const DenoiserModel<Real>& model, const CondBatch<Real>& cond,
                    const NoiseSchedule<Real>& sched, const SamplerConfig<Real>& cfg, Rng& rng,
                    std::size_t grad_cutoff_K) {
    const std::size_t B = cond.batch();
    const std::size_t S = cfg.steps;
    const auto ts = timestep_sequence(sched.T, S);
    NoiseSchedule<Real> sub;
    if (cfg.kind == SamplerConfig<Real>::Kind::DDPM) sub = make_subschedule(sched, ts);
    Tensor<Real> x = Tensor<Real>::randn({B * model.frames, model.frame_dim}, rng);
    std::vector<long> t_per_clip(B);
    for (std::size_t i = 0; i < S; ++i) {
        const std::size_t remaining = S - i;
        std::fill(t_per_clip.begin(), t_per_clip.end(), ts[i]);
        Tensor<Real> pred = denoiser_forward(model, x, t_per_clip, cond);
        if (remaining > grad_cutoff_K) pred = stop_grad(pred);
        if (cfg.kind == SamplerConfig<Real>::Kind::DDPM) {
            const long si = static_cast<long>(S - 1 - i);  // sub-schedule index
            Tensor<Real> z = (i + 1 == S)
                                 ? Tensor<Real>::zeros(x.shape())
                                 : Tensor<Real>::randn(x.shape(), rng);
            x = ddpm_step(pred, si, x, sub, z);
        } else {
            const long t_prev = (i + 1 < S) ? ts[i + 1] : -1;
            Tensor<Real> z = (cfg.eta > Real(0) && t_prev >= 0)
                                 ? Tensor<Real>::randn(x.shape(), rng)
                                 : Tensor<Real>::zeros(x.shape());
            x = ddim_step(pred, ts[i], t_prev, x, sched, cfg.eta, z);
        }
        if (remaining > grad_cutoff_K) x = stop_grad(x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Diffusion pretraining (denoising loss)
// ---------------------------------------------------------------------------

template <class Real>
struct ClipExample {
    std::vector<Real> pixels;  // frames * frame_dim, row-major by frame
    Conditioning<Real> cond;
};

template <class Real>
Tensor<Real> diffusion_loss(const std::vector<const ClipExample<Real>*>& batch,
                            const DenoiserModel<Real>& model, const NoiseSchedule<Real>& sched,
                            Rng& rng) {
    if (batch.empty()) throw TrainError("diffusion_loss: empty batch");
    const std::size_t B = batch.size();
    const std::size_t rows = B * model.frames;
    std::vector<Real> xt(rows * model.frame_dim), eps(rows * model.frame_dim);
    std::vector<long> ts(B);
    std::vector<Conditioning<Real>> conds(B);
    for (std::size_t b = 0; b < B; ++b) {
        ts[b] = static_cast<long>(rng.index(sched.T));
        const Real abar = sched.alpha_bar[static_cast<std::size_t>(ts[b])];
        const Real sa = static_cast<Real>(std::sqrt(double(abar)));
        const Real sb = static_cast<Real>(std::sqrt(double(Real(1) - abar)));
        const auto& px = batch[b]->pixels;
        for (std::size_t i = 0; i < px.size(); ++i) {
            const std::size_t off = b * model.frames * model.frame_dim + i;
            eps[off] = static_cast<Real>(rng.normal());
            xt[off] = sa * px[i] + sb * eps[off];
        }
        conds[b] = batch[b]->cond;
    }
    Tensor<Real> xt_t({rows, model.frame_dim}, std::move(xt));
    Tensor<Real> eps_t({rows, model.frame_dim}, std::move(eps));
    CondBatch<Real> cb = CondBatch<Real>::from_conditionings(conds);
    Tensor<Real> pred = denoiser_forward(model, xt_t, ts, cb);
    return reduce_mean(square(sub(pred, eps_t)));
}

/// Standard denoising pretraining loop; returns the per-step loss curve.
template <class Real>
std::vector<Real> pretrain(const std::vector<ClipExample<Real>>& dataset, DenoiserModel<Real>& model,
                           Real lr, std::size_t steps, std::size_t batch_size,
                           const NoiseSchedule<Real>& sched, Rng& rng) {
    if (dataset.empty()) throw TrainError("pretrain: empty dataset");
    Adam<Real> opt(lr);
    std::vector<Real> curve;
    curve.reserve(steps);
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<const ClipExample<Real>*> batch;
        for (std::size_t b = 0; b < batch_size; ++b)
            batch.push_back(&dataset[rng.index(dataset.size())]);
        Tape<Real> tape;
        Real loss_v;
        {
            TapeScope<Real> scope(tape);
            model.params.zero_grads();
            Tensor<Real> loss = diffusion_loss(batch, model, sched, rng);
            loss_v = loss.scalar();
            if (!std::isfinite(double(loss_v)))
                throw TrainError("pretrain: loss diverged (NaN) at step " + std::to_string(step));
            tape.backward_from(loss.node());
        }
        if (lr != Real(0)) opt.step(model.params);
        curve.push_back(loss_v);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Low-rank adapters
// ---------------------------------------------------------------------------

/// Attach rank-r adapter pairs to the named affine layers. B starts at zero so
/// the adapted model matches the base exactly; base weights are frozen and
/// only the adapters remain trainable.
template <class Real>
void lora_attach(DenoiserModel<Real>& model, std::size_t rank,
                 const std::vector<std::string>& targets, Rng& rng) {
    if (rank < 1) throw ConfigError("lora_attach: rank must be >= 1");
    const auto& known = DenoiserModel<Real>::affine_layer_names();
    for (const auto& t : targets)
        if (std::find(known.begin(), known.end(), t) == known.end())
            throw ConfigError("lora_attach: unknown layer '" + t + "'");
    for (auto& p : model.params.all()) {
        p.trainable = false;
        p.tensor.set_requires_grad(false);
    }
    for (const auto& t : targets) {
        const auto& w = model.params.at(t + ".w").tensor;
        const std::size_t d_in = w.shape()[0], d_out = w.shape()[1];
        model.params.add(t + ".lora_a",
                         Tensor<Real>::randn({d_in, rank}, rng, static_cast<Real>(0.05), true),
                         true);
        model.params.add(t + ".lora_b", Tensor<Real>::zeros({rank, d_out}, true), true);
    }
    model.lora_rank = rank;
    model.lora_targets = targets;
}

/// Fold adapter deltas into the base weights and drop the adapters.
template <class Real>
DenoiserModel<Real> lora_merge(const DenoiserModel<Real>& model) {
    DenoiserModel<Real> out = model.clone();
    for (const auto& t : model.lora_targets) {
        const auto& a = out.params.at(t + ".lora_a").tensor;
        const auto& b = out.params.at(t + ".lora_b").tensor;
        auto& w = out.params.at(t + ".w").tensor;
        const std::size_t d_in = a.shape()[0], r = a.shape()[1], d_out = b.shape()[1];
        detail::gemm_acc(a.values().data(), b.values().data(), w.mutable_values().data(), d_in,
                         r, d_out);
        // zero the adapters so the merged model keeps the checkpoint layout
        std::fill(out.params.at(t + ".lora_a").tensor.mutable_values().begin(),
                  out.params.at(t + ".lora_a").tensor.mutable_values().end(), Real(0));
        std::fill(out.params.at(t + ".lora_b").tensor.mutable_values().begin(),
                  out.params.at(t + ".lora_b").tensor.mutable_values().end(), Real(0));
    }
    return out;
}

}  // namespace vidrl
