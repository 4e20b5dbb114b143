#pragma once

#include "vidrl/diffusion.hpp"

namespace vidrl {

enum class ShapeClass : std::size_t { Square = 0, Cross = 1, Disk = 2 };
enum class Motion : std::size_t { Left = 0, Right = 1, Up = 2, Down = 3 };

inline const char* shape_name(ShapeClass s) {
    switch (s) {
        case ShapeClass::Square: return "square";
        case ShapeClass::Cross: return "cross";
        case ShapeClass::Disk: return "disk";
    }
    return "?";
}
inline const char* motion_name(Motion m) {
    switch (m) {
        case Motion::Left: return "left";
        case Motion::Right: return "right";
        case Motion::Up: return "up";
        case Motion::Down: return "down";
    }
    return "?";
}

/// Synthetic conditional video distribution: one shape per clip moving with
/// constant velocity. The prompt vocabulary is the (shape, motion) product.
struct ToyWorldSpec {
    std::size_t frames = 4;
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t num_shapes = 3;
    std::size_t num_motions = 4;
    double brightness_min = 0.3;
    double brightness_max = 1.0;
    long velocity = 1;

    std::size_t frame_dim() const { return channels * height * width; }
    std::size_t vocab() const { return num_shapes * num_motions; }
    std::size_t class_of(ShapeClass s, Motion m) const {
        return static_cast<std::size_t>(s) * num_motions + static_cast<std::size_t>(m);
    }
    ShapeClass shape_of(std::size_t cls) const {
        return static_cast<ShapeClass>(cls / num_motions);
    }
    Motion motion_of(std::size_t cls) const { return static_cast<Motion>(cls % num_motions); }

    /// Shape extent in pixels, odd, scaled with resolution.
    std::size_t shape_size() const {
        std::size_t s = std::max<std::size_t>(3, 3 * std::min(height, width) / 8);
        return s | 1;
    }
};

namespace detail {

/// Coverage weight in [0, 1]. Square and cross are flat; the disk gets an
/// anti-aliased radial falloff so it stays distinguishable from the square
/// even at resolutions where both occupy the same pixel support.
inline double shape_weight(ShapeClass s, long dx, long dy, long h) {
    switch (s) {
        case ShapeClass::Square:
            return (std::abs(dx) <= h && std::abs(dy) <= h) ? 1.0 : 0.0;
        case ShapeClass::Cross:
            return ((dx == 0 || dy == 0) && std::abs(dx) <= h && std::abs(dy) <= h) ? 1.0 : 0.0;
        case ShapeClass::Disk: {
            const double r2 = double(dx * dx + dy * dy);
            const double R2 = double((h + 1) * (h + 1));
            return r2 < R2 ? 1.0 - r2 / R2 : 0.0;
        }
    }
    return 0.0;
}

}  // namespace detail

/// Paint one clip. Start position is chosen so the shape stays fully on the
/// grid for every frame.
template <class Real>
std::vector<Real> render_clip(const ToyWorldSpec& spec, ShapeClass shape, Motion motion,
                              Real brightness, Rng& rng) {
    const long h = static_cast<long>(spec.shape_size() / 2);
    const long W = static_cast<long>(spec.width), H = static_cast<long>(spec.height);
    const long N = static_cast<long>(spec.frames), v = spec.velocity;
    long dx = 0, dy = 0;
    switch (motion) {
        case Motion::Left: dx = -v; break;
        case Motion::Right: dx = v; break;
        case Motion::Up: dy = -v; break;
        case Motion::Down: dy = v; break;
    }
    const long travel = (N - 1) * v;
    long x_lo = h, x_hi = W - 1 - h, y_lo = h, y_hi = H - 1 - h;
    if (dx > 0) x_hi -= travel;
    if (dx < 0) x_lo += travel;
    if (dy > 0) y_hi -= travel;
    if (dy < 0) y_lo += travel;
    if (x_lo > x_hi || y_lo > y_hi)
        throw ConfigError("toy world: shape of size " + std::to_string(spec.shape_size()) +
                          " cannot stay inside a " + std::to_string(W) + "x" + std::to_string(H) +
                          " grid for " + std::to_string(N) + " frames");
    const long cx0 = x_lo + static_cast<long>(rng.index(static_cast<std::size_t>(x_hi - x_lo + 1)));
    const long cy0 = y_lo + static_cast<long>(rng.index(static_cast<std::size_t>(y_hi - y_lo + 1)));
    std::vector<Real> px(spec.frames * spec.frame_dim(), Real(0));
    for (long n = 0; n < N; ++n) {
        const long cx = cx0 + n * dx, cy = cy0 + n * dy;
        for (long y = 0; y < H; ++y) {
            for (long x = 0; x < W; ++x) {
                const double w = detail::shape_weight(shape, x - cx, y - cy, h);
                if (w <= 0.0) continue;
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    px[static_cast<std::size_t>(n) * spec.frame_dim() + c * spec.height * spec.width +
                       static_cast<std::size_t>(y) * spec.width + static_cast<std::size_t>(x)] =
                        static_cast<Real>(double(brightness) * w);
                }
            }
        }
    }
    return px;
}

/// Labeled clips; conditioning is the class index, or the first frame when
/// `mode` is FirstFrame (the class index is kept alongside for labels).
template <class Real>
std::vector<ClipExample<Real>> gen_toy_dataset(const ToyWorldSpec& spec, std::size_t count,
                                               Rng& rng, CondMode mode = CondMode::ClassLabel) {
    if (count < 1) throw ConfigError("gen_toy_dataset: count must be >= 1");
    std::vector<ClipExample<Real>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cls = rng.index(spec.vocab());
        const Real b = static_cast<Real>(rng.uniform(spec.brightness_min, spec.brightness_max));
        ClipExample<Real> ex;
        ex.pixels = render_clip<Real>(spec, spec.shape_of(cls), spec.motion_of(cls), b, rng);
        ex.cond.kind = mode;
        ex.cond.class_index = cls;
        if (mode == CondMode::FirstFrame)
            ex.cond.frame.assign(ex.pixels.begin(),
                                 ex.pixels.begin() + static_cast<long>(spec.frame_dim()));
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompt sets
// ---------------------------------------------------------------------------

template <class Real>
struct PromptSet {
    std::vector<Conditioning<Real>> train;
    std::vector<Conditioning<Real>> test;
    bool disjoint = true;
};

template <class Real>
void verify_disjoint(const PromptSet<Real>& ps) {
    if (!ps.disjoint) return;
    for (const auto& a : ps.train)
        for (const auto& b : ps.test)
            if (a.class_index == b.class_index)
                throw ConfigError("prompt set: train/test overlap on class " +
                                  std::to_string(a.class_index));
}

/// Disjoint class split: shuffles the vocabulary, reserves `test_count`
/// classes for the held-out prompt set.
template <class Real>
PromptSet<Real> make_prompt_split(const ToyWorldSpec& spec, std::size_t test_count, Rng& rng) {
    std::vector<std::size_t> classes(spec.vocab());
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = i;
    for (std::size_t i = classes.size(); i > 1; --i)
        std::swap(classes[i - 1], classes[rng.index(i)]);
    if (test_count >= classes.size())
        throw ConfigError("prompt split: test_count must leave at least one training class");
    PromptSet<Real> ps;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        Conditioning<Real> c;
        c.kind = CondMode::ClassLabel;
        c.class_index = classes[i];
        if (i < classes.size() - test_count)
            ps.train.push_back(c);
        else
            ps.test.push_back(c);
    }
    return ps;
}

}  // namespace vidrl
