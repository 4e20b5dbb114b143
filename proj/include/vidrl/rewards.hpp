#pragma once

#include "vidrl/toyworld.hpp"

namespace vidrl {

// ---------------------------------------------------------------------------
// Small frozen discriminator heads
// ---------------------------------------------------------------------------

template <class Real>
struct MlpHead {
    std::size_t in = 0, hidden = 0, out = 0;
    ParamStore<Real> params;

    static MlpHead create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
        MlpHead h;
        h.in = in;
        h.hidden = hidden;
        h.out = out;
        h.params.add("h.w", Tensor<Real>::randn({in, hidden}, rng,
                                                static_cast<Real>(1.0 / std::sqrt(double(in))),
                                                true));
        h.params.add("h.b", Tensor<Real>::zeros({hidden}, true));
        h.params.add("o.w", Tensor<Real>::randn({hidden, out}, rng,
                                                static_cast<Real>(1.0 / std::sqrt(double(hidden))),
                                                true));
        h.params.add("o.b", Tensor<Real>::zeros({out}, true));
        return h;
    }

    Tensor<Real> forward(const Tensor<Real>& x) const {
        Tensor<Real> h = silu(affine(x, params.at("h.w").tensor, params.at("h.b").tensor));
        return affine(h, params.at("o.w").tensor, params.at("o.b").tensor);
    }

    void freeze() {
        for (auto& p : params.all()) {
            p.trainable = false;
            p.tensor.set_requires_grad(false);
        }
    }

    MlpHead clone() const {
        MlpHead h = *this;
        h.params = params.clone();
        return h;
    }
};

// ---------------------------------------------------------------------------
// Spatio-temporal patch masks (2x2x1 patches by default)
// ---------------------------------------------------------------------------

struct PatchMask {
    std::vector<std::uint8_t> element_mask;  // frames*frame_dim, 1 = masked
    std::size_t masked_patches = 0;
    std::size_t total_patches = 0;
    std::size_t masked_elements = 0;
};

inline PatchMask sample_patch_mask(const ToyWorldSpec& spec, double ratio, Rng& rng) {
    const std::size_t ph = spec.height / 2, pw = spec.width / 2;
    PatchMask m;
    m.total_patches = spec.frames * ph * pw;
    m.element_mask.assign(spec.frames * spec.frame_dim(), 0);
    for (std::size_t n = 0; n < spec.frames; ++n) {
        for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
                if (rng.uniform() >= ratio) continue;
                ++m.masked_patches;
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t y = py * 2 + dy, x = px * 2 + dx;
                            if (y >= spec.height || x >= spec.width) continue;
                            m.element_mask[n * spec.frame_dim() + c * spec.height * spec.width +
                                           y * spec.width + x] = 1;
                            ++m.masked_elements;
                        }
                    }
                }
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Trained discriminator bundle
// ---------------------------------------------------------------------------

template <class Real>
struct RewardHeads {
    ToyWorldSpec spec;
    MlpHead<Real> frame_clf;    // frame -> shape class logits
    MlpHead<Real> video_clf;    // clip -> motion class logits
    MlpHead<Real> detector;     // frame -> per-shape presence logits
    MlpHead<Real> masked_pred;  // masked clip -> reconstructed clip
};

namespace detail {

template <class Real>
Real classify_accuracy(const MlpHead<Real>& head, const std::vector<std::vector<Real>>& xs,
                       const std::vector<std::size_t>& ys) {
    NoGradScope<Real> ng;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Tensor<Real> x({1, xs[i].size()}, xs[i]);
        const std::vector<Real> lg = head.forward(x).values();
        std::size_t arg = 0;
        for (std::size_t c = 1; c < lg.size(); ++c)
            if (lg[c] > lg[arg]) arg = c;
        if (arg == ys[i]) ++correct;
    }
    return static_cast<Real>(double(correct) / double(xs.size()));
}

template <class Real>
void train_classifier(MlpHead<Real>& head, const std::vector<std::vector<Real>>& xs,
                      const std::vector<std::size_t>& ys, std::size_t budget, Real target_acc,
                      Rng& rng, const char* what) {
    const std::size_t n_train = xs.size() * 4 / 5;
    std::vector<std::vector<Real>> hx(xs.begin() + static_cast<long>(n_train), xs.end());
    std::vector<std::size_t> hy(ys.begin() + static_cast<long>(n_train), ys.end());
    Adam<Real> opt(static_cast<Real>(3e-3));
    const std::size_t batch = 32;
    for (std::size_t step = 0; step < budget; ++step) {
        Tape<Real> tape;
        TapeScope<Real> scope(tape);
        head.params.zero_grads();
        std::vector<Real> xb;
        std::vector<std::size_t> targets;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = rng.index(n_train);
            xb.insert(xb.end(), xs[i].begin(), xs[i].end());
            targets.push_back(b * head.out + ys[i]);
        }
        Tensor<Real> x({batch, head.in}, std::move(xb));
        Tensor<Real> lp = log_softmax(head.forward(x));
        Tensor<Real> loss = scalar_mul(reduce_mean(take(lp, targets)), Real(-1));
        tape.backward_from(loss.node());
        opt.step(head.params);
        if ((step + 1) % 50 == 0 && classify_accuracy(head, hx, hy) >= target_acc) break;
    }
    const Real acc = classify_accuracy(head, hx, hy);
    if (acc < target_acc)
        throw TrainError(std::string("discriminator training: ") + what + " held-out accuracy " +
                         std::to_string(double(acc)) + " below " +
                         std::to_string(double(target_acc)) +
                         "; increase the training budget or simplify the world spec");
    head.freeze();
}

}  // namespace detail

/// Train all four discriminators on labeled toy data, then freeze them.
template <class Real>
RewardHeads<Real> train_discriminators(const std::vector<ClipExample<Real>>& dataset,
                                       const ToyWorldSpec& spec, Rng& rng,
                                       std::size_t budget = 4000) {
    if (dataset.empty()) throw TrainError("train_discriminators: empty dataset");
    const std::size_t D = spec.frame_dim();
    RewardHeads<Real> heads;
    heads.spec = spec;
    heads.frame_clf = MlpHead<Real>::create(D, 128, spec.num_shapes, rng);
    heads.video_clf = MlpHead<Real>::create(spec.frames * D, 128, spec.num_motions, rng);
    heads.detector = MlpHead<Real>::create(D, 128, spec.num_shapes, rng);
    heads.masked_pred = MlpHead<Real>::create(spec.frames * D, 128, spec.frames * D, rng);

    // frame classifier: every frame labeled with the clip's shape class
    {
        std::vector<std::vector<Real>> xs;
        std::vector<std::size_t> ys;
        for (const auto& ex : dataset) {
            for (std::size_t n = 0; n < spec.frames; ++n) {
                xs.emplace_back(ex.pixels.begin() + static_cast<long>(n * D),
                                ex.pixels.begin() + static_cast<long>((n + 1) * D));
                ys.push_back(static_cast<std::size_t>(spec.shape_of(ex.cond.class_index)));
            }
        }
        detail::train_classifier(heads.frame_clf, xs, ys, budget, Real(0.95), rng, "frame");
    }
    // video action classifier: whole clip labeled with the motion class
    {
        std::vector<std::vector<Real>> xs;
        std::vector<std::size_t> ys;
        for (const auto& ex : dataset) {
            xs.push_back(ex.pixels);
            ys.push_back(static_cast<std::size_t>(spec.motion_of(ex.cond.class_index)));
        }
        detail::train_classifier(heads.video_clf, xs, ys, budget, Real(0.95), rng, "video");
    }
    // detector: per-frame multi-label presence (exactly one positive class)
    {
        Adam<Real> opt(static_cast<Real>(3e-3));
        for (std::size_t step = 0; step < budget; ++step) {
            Tape<Real> tape;
            TapeScope<Real> scope(tape);
            heads.detector.params.zero_grads();
            const std::size_t batch = 32;
            std::vector<Real> xb, yb;
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& ex = dataset[rng.index(dataset.size())];
                const std::size_t n = rng.index(spec.frames);
                xb.insert(xb.end(), ex.pixels.begin() + static_cast<long>(n * D),
                          ex.pixels.begin() + static_cast<long>((n + 1) * D));
                for (std::size_t c = 0; c < spec.num_shapes; ++c)
                    yb.push_back(c == static_cast<std::size_t>(spec.shape_of(ex.cond.class_index))
                                     ? Real(1)
                                     : Real(0));
            }
            Tensor<Real> x({batch, D}, std::move(xb));
            Tensor<Real> y({batch, spec.num_shapes}, std::move(yb));
            Tensor<Real> p = clamp(sigmoid(heads.detector.forward(x)), Real(1e-6),
                                   Real(1) - Real(1e-6));
            Tensor<Real> one_minus_p = scalar_add(scalar_mul(p, Real(-1)), Real(1));
            Tensor<Real> one_minus_y = scalar_add(scalar_mul(y, Real(-1)), Real(1));
            Tensor<Real> bce = scalar_mul(
                reduce_mean(add(mul(y, vlog(p)), mul(one_minus_y, vlog(one_minus_p)))),
                Real(-1));
            tape.backward_from(bce.node());
            opt.step(heads.detector.params);
        }
        heads.detector.freeze();
    }
    // masked predictor: reconstruct masked 2x2 patches from the visible rest
    {
        Adam<Real> opt(static_cast<Real>(3e-3));
        Real last = Real(0);
        for (std::size_t step = 0; step < budget; ++step) {
            Tape<Real> tape;
            TapeScope<Real> scope(tape);
            heads.masked_pred.params.zero_grads();
            const auto& ex = dataset[rng.index(dataset.size())];
            PatchMask m = sample_patch_mask(spec, 0.5, rng);
            if (m.masked_elements == 0 || m.masked_elements == ex.pixels.size()) continue;
            std::vector<Real> masked(ex.pixels.size()), mask_v(ex.pixels.size());
            for (std::size_t i = 0; i < ex.pixels.size(); ++i) {
                mask_v[i] = m.element_mask[i] ? Real(1) : Real(0);
                masked[i] = m.element_mask[i] ? Real(0) : ex.pixels[i];
            }
            const std::size_t E = ex.pixels.size();
            Tensor<Real> x({1, E}, std::move(masked));
            Tensor<Real> mask_t({1, E}, std::move(mask_v));
            Tensor<Real> target({1, ex.pixels.size()}, ex.pixels);
            Tensor<Real> pred = heads.masked_pred.forward(x);
            Tensor<Real> err = mul(square(sub(pred, target)), mask_t);
            Tensor<Real> loss =
                scalar_mul(reduce_sum(err), Real(1) / static_cast<Real>(m.masked_elements));
            last = loss.scalar();
            tape.backward_from(loss.node());
            opt.step(heads.masked_pred.params);
        }
        (void)last;
        heads.masked_pred.freeze();
    }
    return heads;
}

// ---------------------------------------------------------------------------
// Reward primitives
// ---------------------------------------------------------------------------

/// Mean over frames of a per-frame metric.
template <class Real>
Tensor<Real> reward_frame_mean(const Tensor<Real>& frames,
                               const std::function<Tensor<Real>(const Tensor<Real>&)>& metric) {
    if (frames.shape().empty() || frames.shape()[0] < 1)
        throw ShapeError("reward_frame_mean: need at least one frame");
    const std::size_t n = frames.shape()[0];
    std::vector<Tensor<Real>> per_frame;
    for (std::size_t k = 0; k < n; ++k)
        per_frame.push_back(metric(slice_rows(frames, k, k + 1)));
    return reduce_mean(concat(per_frame, 0));
}

template <class Real>
Tensor<Real> reward_brightness(const Tensor<Real>& frames) {
    return reduce_mean(frames);
}

/// Mean log-probability the frozen frame classifier assigns to the target
/// shape class.
template <class Real>
Tensor<Real> reward_text_sim(const Tensor<Real>& frames, std::size_t shape_class,
                             const MlpHead<Real>& frame_clf) {
    if (shape_class >= frame_clf.out)
        throw ConfigError("reward_text_sim: class index " + std::to_string(shape_class) +
                          " out of range");
    Tensor<Real> lp = log_softmax(frame_clf.forward(frames));
    const std::size_t rows = frames.shape()[0];
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) idx[r] = r * frame_clf.out + shape_class;
    return reduce_mean(take(lp, idx));
}

/// Probability of the target motion class under the frozen video classifier.
template <class Real>
Tensor<Real> reward_video_action(const Tensor<Real>& clip, std::size_t motion_class,
                                 const MlpHead<Real>& video_clf) {
    if (clip.shape()[0] < 2) throw ShapeError("reward_video_action: need at least 2 frames");
    Tensor<Real> flat = reshape(clip, {1, clip.size()});
    Tensor<Real> probs = softmax(video_clf.forward(flat));
    return take(probs, {motion_class});
}

/// Mean over frames of one minus the detector confidence for `target`.
template <class Real>
Tensor<Real> reward_object_absence(const Tensor<Real>& frames, std::size_t target,
                                   const MlpHead<Real>& detector) {
    Tensor<Real> conf = sigmoid(detector.forward(frames));
    const std::size_t rows = frames.shape()[0];
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) idx[r] = r * detector.out + target;
    return reduce_mean(scalar_add(scalar_mul(take(conf, idx), Real(-1)), Real(1)));
}

/// Negative masked reconstruction error over random spatio-temporal patches.
template <class Real>
Tensor<Real> reward_masked_consistency(const Tensor<Real>& clip, const MlpHead<Real>& predictor,
                                       const ToyWorldSpec& spec, Rng& mask_rng,
                                       double mask_ratio = 0.5) {
    if (clip.shape()[0] < 2) throw ShapeError("reward_masked_consistency: need >= 2 frames");
    PatchMask m = sample_patch_mask(spec, mask_ratio, mask_rng);
    if (m.masked_elements == 0 || m.masked_elements == clip.size())
        throw TrainError("reward_masked_consistency: mask covers " +
                         std::string(m.masked_elements == 0 ? "nothing" : "everything"));
    std::vector<Real> mask_v(clip.size()), keep_v(clip.size());
    for (std::size_t i = 0; i < clip.size(); ++i) {
        mask_v[i] = m.element_mask[i] ? Real(1) : Real(0);
        keep_v[i] = m.element_mask[i] ? Real(0) : Real(1);
    }
    Tensor<Real> flat = reshape(clip, {1, clip.size()});
    Tensor<Real> keep({1, clip.size()}, std::move(keep_v));
    Tensor<Real> mask({1, clip.size()}, std::move(mask_v));
    Tensor<Real> pred = predictor.forward(mul(flat, keep));
    Tensor<Real> err = mul(square(sub(pred, flat)), mask);
    return scalar_mul(reduce_sum(err), Real(-1) / static_cast<Real>(m.masked_elements));
}

/// m distinct uniform frame indices (ascending).
inline std::vector<std::size_t> subsample_frames(std::size_t N, std::size_t m, Rng& rng) {
    if (m < 1 || m > N)
        throw ConfigError("subsample_frames: need 1 <= m <= N, got m=" + std::to_string(m) +
                          " N=" + std::to_string(N));
    std::vector<std::size_t> idx(N);
    for (std::size_t i = 0; i < N; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i)
        std::swap(idx[i], idx[i + rng.index(N - i)]);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Reward model facade used by the trainers
// ---------------------------------------------------------------------------

enum class RewardKind {
    Brightness,
    FrameClassifier,
    VideoAction,
    ObjectAbsence,
    MaskedConsistency,
};

inline const char* reward_kind_name(RewardKind k) {
    switch (k) {
        case RewardKind::Brightness: return "brightness";
        case RewardKind::FrameClassifier: return "frame_classifier";
        case RewardKind::VideoAction: return "video_action";
        case RewardKind::ObjectAbsence: return "object_absence";
        case RewardKind::MaskedConsistency: return "masked_consistency";
    }
    return "?";
}

inline RewardKind reward_kind_from(const std::string& s) {
    if (s == "brightness") return RewardKind::Brightness;
    if (s == "frame_classifier") return RewardKind::FrameClassifier;
    if (s == "video_action") return RewardKind::VideoAction;
    if (s == "object_absence") return RewardKind::ObjectAbsence;
    if (s == "masked_consistency") return RewardKind::MaskedConsistency;
    throw ConfigError("unknown reward kind '" + s + "'");
}

inline bool reward_is_frame_level(RewardKind k) {
    return k == RewardKind::Brightness || k == RewardKind::FrameClassifier ||
           k == RewardKind::ObjectAbsence;
}

template <class Real>
struct RewardModel {
    RewardKind kind = RewardKind::Brightness;
    std::shared_ptr<const RewardHeads<Real>> heads;  // unused for brightness
    std::size_t target = 0;                          // object-absence target shape
    double mask_ratio = 0.5;
    bool agg_sum = false;  // restore the sum-over-frames aggregation

    /// Scalar reward of a clip under conditioning `cond`. For frame-level
    /// kinds, `frame_idx` selects the frames to score (empty = all frames).
    /// `mask_rng` drives masked-consistency masking.
    Tensor<Real> evaluate(const Tensor<Real>& clip, const Conditioning<Real>& cond,
                          const ToyWorldSpec& spec, const std::vector<std::size_t>& frame_idx,
                          Rng* mask_rng) const {
        Tensor<Real> frames = clip;
        if (reward_is_frame_level(kind) && !frame_idx.empty())
            frames = gather_rows(clip, frame_idx);
        Tensor<Real> r;
        switch (kind) {
            case RewardKind::Brightness:
                r = reward_brightness(frames);
                break;
            case RewardKind::FrameClassifier:
                r = reward_text_sim(frames,
                                    static_cast<std::size_t>(spec.shape_of(cond.class_index)),
                                    heads->frame_clf);
                break;
            case RewardKind::VideoAction:
                r = reward_video_action(
                    clip, static_cast<std::size_t>(spec.motion_of(cond.class_index)),
                    heads->video_clf);
                break;
            case RewardKind::ObjectAbsence:
                r = reward_object_absence(frames, target, heads->detector);
                break;
            case RewardKind::MaskedConsistency: {
                if (!mask_rng)
                    throw TrainError("masked_consistency reward requires a mask rng");
                r = reward_masked_consistency(clip, heads->masked_pred, spec, *mask_rng,
                                              mask_ratio);
                break;
            }
        }
        if (agg_sum && reward_is_frame_level(kind))
            r = scalar_mul(r, static_cast<Real>(frames.shape()[0]));
        return r;
    }
};

/// Weighted mixture of reward models.
template <class Real>
struct RewardSuite {
    std::vector<RewardModel<Real>> models;
    std::vector<Real> weights;
    ToyWorldSpec spec;

    bool frame_level_only() const {
        for (const auto& m : models)
            if (!reward_is_frame_level(m.kind)) return false;
        return true;
    }

    Tensor<Real> evaluate(const Tensor<Real>& clip, const Conditioning<Real>& cond,
                          const std::vector<std::size_t>& frame_idx, Rng* mask_rng) const {
        Tensor<Real> total;
        for (std::size_t i = 0; i < models.size(); ++i) {
            Tensor<Real> r = models[i].evaluate(clip, cond, spec, frame_idx, mask_rng);
            r = scalar_mul(r, weights[i]);
            total = total.defined() ? add(total, r) : r;
        }
        return total;
    }
};

}  // namespace vidrl
