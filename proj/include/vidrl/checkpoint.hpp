#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

#include "vidrl/align.hpp"

namespace vidrl {

// Binary checkpoint format:
//   magic "VDRL"
//   u32 LE format version
//   repeated parameter records:
//     u32 LE name length, UTF-8 name bytes,
//     u32 LE rank, u32 LE dim per axis,
//     raw little-endian IEEE-754 32-bit values
//   u64 LE checksum (FNV-1a 64) over every value byte, in write order
// Values are always stored at 32-bit precision regardless of the in-memory
// scalar type.

struct BadMagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct BadVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct TruncatedError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct ChecksumError : CheckpointError {
    using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a64(std::uint64_t h, const unsigned char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}
    std::size_t remaining() const { return data_.size() - pos_; }
    std::uint32_t u32() {
        need(4, "u32 field");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64 field");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    const unsigned char* raw(std::size_t n, const char* what) {
        need(n, what);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
        pos_ += n;
        return p;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::string out;
    out += "VDRL";
    detail::put_u32(out, kCheckpointVersion);
    std::uint64_t sum = detail::kFnvOffset;
    for (const auto& t : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        if (t.values.size() != numel(t.shape))
            throw CheckpointError("save: tensor '" + t.name + "' value count mismatch");
        for (float v : t.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            const std::size_t at = out.size();
            detail::put_u32(out, bits);
            sum = detail::fnv1a64(sum, reinterpret_cast<const unsigned char*>(out.data() + at), 4);
        }
    }
    detail::put_u64(out, sum);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("save: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("save: short write to '" + path + "'");
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("load: cannot open '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r(std::move(data));
    if (r.bytes(4, "magic") != "VDRL")
        throw BadMagicError("checkpoint '" + path + "': bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw BadVersionError("checkpoint '" + path + "': unsupported format version " +
                              std::to_string(version));
    std::vector<NamedTensor> out;
    std::uint64_t sum = detail::kFnvOffset;
    while (r.remaining() > 8) {
        NamedTensor t;
        const std::uint32_t nlen = r.u32();
        t.name = r.bytes(nlen, "parameter name");
        const std::uint32_t rank = r.u32();
        t.shape.resize(rank);
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.shape[i] = r.u32();
            count *= t.shape[i];
        }
        if (r.remaining() < count * 4 + 8)
            throw TruncatedError("checkpoint truncated inside values of '" + t.name + "'");
        const unsigned char* p = r.raw(count * 4, "values");
        sum = detail::fnv1a64(sum, p, count * 4);
        t.values.resize(count);
        std::memcpy(t.values.data(), p, count * 4);
        out.push_back(std::move(t));
    }
    if (r.remaining() != 8)
        throw TruncatedError("checkpoint '" + path + "': trailing bytes are not a checksum");
    if (r.u64() != sum)
        throw ChecksumError("checkpoint '" + path + "': checksum mismatch (corrupt values)");
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser model persistence
// ---------------------------------------------------------------------------

template <class Real>
void save_model(const std::string& path, const DenoiserModel<Real>& model) {
    std::vector<NamedTensor> ts;
    NamedTensor meta;
    meta.name = "meta.arch";
    meta.shape = {8};
    meta.values = {float(model.frames),
                   float(model.frame_dim),
                   float(model.vocab),
                   float(model.hidden),
                   model.cond_mode == CondMode::FirstFrame ? 1.f : 0.f,
                   float(model.lora_rank),
                   float(model.step_gate),
                   0.f};
    ts.push_back(std::move(meta));
    for (const auto& p : model.params.all()) {
        NamedTensor t;
        t.name = p.name;
        t.shape = p.tensor.shape();
        t.values.reserve(p.tensor.size());
        for (Real v : p.tensor.values()) t.values.push_back(static_cast<float>(v));
        ts.push_back(std::move(t));
    }
    save_tensors(path, ts);
}

template <class Real>
DenoiserModel<Real> load_model(const std::string& path) {
    auto ts = load_tensors(path);
    if (ts.empty() || ts[0].name != "meta.arch" || ts[0].values.size() < 8)
        throw CheckpointError("checkpoint '" + path + "': missing model metadata");
    const auto& a = ts[0].values;
    Rng dummy(0);
    DenoiserModel<Real> m = DenoiserModel<Real>::create(
        static_cast<std::size_t>(a[0]), static_cast<std::size_t>(a[1]),
        static_cast<std::size_t>(a[2]),
        a[4] > 0.5f ? CondMode::FirstFrame : CondMode::ClassLabel,
        static_cast<std::size_t>(a[3]), dummy);
    m.step_gate = static_cast<long>(a[6]);
    const std::size_t lora_rank = static_cast<std::size_t>(a[5]);
    // adapters first so the store accepts the checkpointed adapter tensors
    if (lora_rank > 0) {
        std::vector<std::string> targets;
        for (const auto& t : ts)
            if (t.name.size() > 7 && t.name.substr(t.name.size() - 7) == ".lora_a")
                targets.push_back(t.name.substr(0, t.name.size() - 7));
        Rng r2(0);
        lora_attach(m, lora_rank, targets, r2);
    }
    if (m.step_gate >= 0) {
        Rng r3(0);
        m.attach_step_gate(m.step_gate, r3);
    }
    for (std::size_t i = 1; i < ts.size(); ++i) {
        const auto& t = ts[i];
        if (!m.params.has(t.name))
            throw CheckpointError("checkpoint '" + path + "': unexpected parameter '" + t.name +
                                  "'");
        auto& p = m.params.at(t.name);
        if (p.tensor.shape() != t.shape)
            throw CheckpointError("checkpoint '" + path + "': parameter '" + t.name +
                                  "' shape mismatch");
        auto& vals = p.tensor.mutable_values();
        for (std::size_t j = 0; j < t.values.size(); ++j)
            vals[j] = static_cast<Real>(t.values[j]);
    }
    if (ts.size() - 1 != m.params.all().size())
        throw CheckpointError("checkpoint '" + path + "': expected " +
                              std::to_string(m.params.all().size()) + " parameters, found " +
                              std::to_string(ts.size() - 1));
    return m;
}

// ---------------------------------------------------------------------------
// Discriminator persistence
// ---------------------------------------------------------------------------

template <class Real>
void save_heads(const std::string& path, const RewardHeads<Real>& heads) {
    std::vector<NamedTensor> ts;
    NamedTensor meta;
    meta.name = "meta.world";
    meta.shape = {8};
    meta.values = {float(heads.spec.frames),   float(heads.spec.channels),
                   float(heads.spec.height),   float(heads.spec.width),
                   float(heads.spec.num_shapes), float(heads.spec.num_motions),
                   float(heads.spec.velocity), 0.f};
    ts.push_back(std::move(meta));
    auto emit = [&](const char* tag, const MlpHead<Real>& h) {
        for (const auto& p : h.params.all()) {
            NamedTensor t;
            t.name = std::string(tag) + "/" + p.name;
            t.shape = p.tensor.shape();
            t.values.reserve(p.tensor.size());
            for (Real v : p.tensor.values()) t.values.push_back(static_cast<float>(v));
            ts.push_back(std::move(t));
        }
    };
    emit("frame_clf", heads.frame_clf);
    emit("video_clf", heads.video_clf);
    emit("detector", heads.detector);
    emit("masked_pred", heads.masked_pred);
    save_tensors(path, ts);
}

template <class Real>
RewardHeads<Real> load_heads(const std::string& path) {
    auto ts = load_tensors(path);
    if (ts.empty() || ts[0].name != "meta.world" || ts[0].values.size() < 8)
        throw CheckpointError("checkpoint '" + path + "': missing world metadata");
    RewardHeads<Real> heads;
    const auto& a = ts[0].values;
    heads.spec.frames = static_cast<std::size_t>(a[0]);
    heads.spec.channels = static_cast<std::size_t>(a[1]);
    heads.spec.height = static_cast<std::size_t>(a[2]);
    heads.spec.width = static_cast<std::size_t>(a[3]);
    heads.spec.num_shapes = static_cast<std::size_t>(a[4]);
    heads.spec.num_motions = static_cast<std::size_t>(a[5]);
    heads.spec.velocity = static_cast<long>(a[6]);
    auto build = [&](const std::string& tag) {
        MlpHead<Real> h;
        for (const auto& t : ts) {
            if (t.name.size() <= tag.size() + 1 || t.name.compare(0, tag.size(), tag) != 0 ||
                t.name[tag.size()] != '/')
                continue;
            std::vector<Real> vals(t.values.size());
            for (std::size_t j = 0; j < vals.size(); ++j) vals[j] = static_cast<Real>(t.values[j]);
            h.params.add(t.name.substr(tag.size() + 1),
                         Tensor<Real>(t.shape, std::move(vals), false), false);
        }
        if (!h.params.has("h.w") || !h.params.has("o.w"))
            throw CheckpointError("checkpoint '" + path + "': incomplete head '" + tag + "'");
        h.in = h.params.at("h.w").tensor.shape()[0];
        h.hidden = h.params.at("h.w").tensor.shape()[1];
        h.out = h.params.at("o.w").tensor.shape()[1];
        return h;
    };
    heads.frame_clf = build("frame_clf");
    heads.video_clf = build("video_clf");
    heads.detector = build("detector");
    heads.masked_pred = build("masked_pred");
    return heads;
}

}  // namespace vidrl
