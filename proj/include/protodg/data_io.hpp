#pragma once

// Trial container, the EBD1 on-disk format, and split/selection utilities.
//
// EBD1 layout (all integers little-endian):
//   0  char[4]  magic "EBD1"
//   4  u32      version = 1
//   8  u32      n_trials
//  12  u32      n_channels
//  16  u32      n_samples
//  20  u32      sample_rate_hz
//  24  per trial: u16 subject_id, u16 class_id, u16 session_id, u16 padding = 0,
//      then n_channels * n_samples f32 (IEEE-754, little-endian), channel-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "protodg/tensor.hpp"

namespace protodg {

struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"), offset(offset) {}
    std::uint64_t offset;
};

// Bad data-level requests: unknown subjects, unsplittable groups.
struct DataError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TrialSet {
    std::size_t n_channels = 0;
    std::size_t n_samples = 0;
    std::uint32_t sample_rate_hz = 250;
    std::vector<float> signals;  // [trial][channel][sample]
    std::vector<std::uint16_t> class_ids;
    std::vector<std::uint16_t> subject_ids;
    std::vector<std::uint16_t> session_ids;

    std::size_t n_trials() const noexcept { return class_ids.size(); }
    std::size_t trial_size() const noexcept { return n_channels * n_samples; }

    std::span<const float> trial(std::size_t i) const {
        return std::span<const float>(signals).subspan(i * trial_size(), trial_size());
    }
    std::span<float> trial(std::size_t i) { return std::span<float>(signals).subspan(i * trial_size(), trial_size()); }

    void push_back(std::span<const float> samples, std::uint16_t subject, std::uint16_t cls, std::uint16_t session) {
        if (samples.size() != trial_size()) throw DataError("trial size mismatch on append");
        signals.insert(signals.end(), samples.begin(), samples.end());
        subject_ids.push_back(subject);
        class_ids.push_back(cls);
        session_ids.push_back(session);
    }

    // Sorted distinct subject ids.
    std::vector<std::uint16_t> subjects() const {
        std::set<std::uint16_t> s(subject_ids.begin(), subject_ids.end());
        return {s.begin(), s.end()};
    }

    std::size_t n_classes() const {
        if (class_ids.empty()) return 0;
        return static_cast<std::size_t>(*std::max_element(class_ids.begin(), class_ids.end())) + 1;
    }

    // Label arrays agree in length, class ids are contiguous from 0, signals
    // are finite.
    void validate() const {
        const std::size_t n = n_trials();
        if (subject_ids.size() != n || session_ids.size() != n || signals.size() != n * trial_size())
            throw DataError("trial set arrays disagree on the number of trials");
        if (sample_rate_hz == 0) throw DataError("sample rate must be positive");
        std::set<std::uint16_t> cls(class_ids.begin(), class_ids.end());
        std::uint16_t expect = 0;
        for (auto c : cls)
            if (c != expect++) throw DataError("class ids are not a contiguous range starting at 0");
        for (std::size_t i = 0; i < signals.size(); ++i)
            if (!std::isfinite(signals[i]))
                throw DataError("non-finite sample in trial " + std::to_string(i / std::max<std::size_t>(1, trial_size())));
    }

    friend bool operator==(const TrialSet&, const TrialSet&) = default;
};

inline TrialSet empty_like(const TrialSet& set) {
    TrialSet out;
    out.n_channels = set.n_channels;
    out.n_samples = set.n_samples;
    out.sample_rate_hz = set.sample_rate_hz;
    return out;
}

inline TrialSet subset(const TrialSet& set, std::span<const std::size_t> indices) {
    TrialSet out = empty_like(set);
    out.signals.reserve(indices.size() * set.trial_size());
    for (auto i : indices) out.push_back(set.trial(i), set.subject_ids[i], set.class_ids[i], set.session_ids[i]);
    return out;
}

namespace detail {

inline std::string id_list(const std::vector<std::uint16_t>& ids) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
    return os.str();
}

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw FormatError(std::string("truncated payload reading ") + what, pos_);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) |
                          static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

}  // namespace detail

inline constexpr std::uint32_t kEbdVersion = 1;

inline std::string encode_trialset(const TrialSet& set) {
    std::string buf;
    buf.reserve(24 + set.n_trials() * (8 + 4 * set.trial_size()));
    buf.append("EBD1");
    detail::put_u32(buf, kEbdVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(set.n_trials()));
    detail::put_u32(buf, static_cast<std::uint32_t>(set.n_channels));
    detail::put_u32(buf, static_cast<std::uint32_t>(set.n_samples));
    detail::put_u32(buf, set.sample_rate_hz);
    for (std::size_t t = 0; t < set.n_trials(); ++t) {
        detail::put_u16(buf, set.subject_ids[t]);
        detail::put_u16(buf, set.class_ids[t]);
        detail::put_u16(buf, set.session_ids[t]);
        detail::put_u16(buf, 0);
        for (float v : set.trial(t)) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
    }
    return buf;
}

inline TrialSet decode_trialset(std::string_view bytes) {
    detail::ByteReader r(bytes);
    auto magic = r.take(4, "magic");
    if (magic != "EBD1") throw FormatError("bad magic '" + std::string(magic) + "', expected 'EBD1'", 0);
    const auto version = r.u32("version");
    if (version != kEbdVersion)
        throw FormatError("unsupported EBD1 version " + std::to_string(version), r.offset() - 4);
    TrialSet set;
    const std::size_t n = r.u32("n_trials");
    set.n_channels = r.u32("n_channels");
    set.n_samples = r.u32("n_samples");
    set.sample_rate_hz = r.u32("sample_rate_hz");
    const std::size_t per_trial = 8 + 4 * set.trial_size();
    if (per_trial != 0 && r.remaining() / per_trial < n)
        throw FormatError("truncated payload: header declares " + std::to_string(n) + " trials", r.offset());
    set.signals.reserve(n * set.trial_size());
    for (std::size_t t = 0; t < n; ++t) {
        set.subject_ids.push_back(r.u16("subject_id"));
        set.class_ids.push_back(r.u16("class_id"));
        set.session_ids.push_back(r.u16("session_id"));
        const auto pad_at = r.offset();
        if (r.u16("padding") != 0) throw FormatError("nonzero trial padding", pad_at);
        for (std::size_t i = 0; i < set.trial_size(); ++i) set.signals.push_back(std::bit_cast<float>(r.u32("sample")));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last trial", r.offset());
    return set;
}

inline void write_trialset(const TrialSet& set, const std::string& path) {
    detail::write_file(path, encode_trialset(set));
}

inline TrialSet read_trialset(const std::string& path) { return decode_trialset(detail::read_file(path)); }

inline TrialSet select_subjects(const TrialSet& set, std::span<const std::uint16_t> ids) {
    const auto known = set.subjects();
    for (auto id : ids)
        if (!std::binary_search(known.begin(), known.end(), id))
            throw DataError("unknown subject " + std::to_string(id) + "; known subjects: " + detail::id_list(known));
    std::set<std::uint16_t> wanted(ids.begin(), ids.end());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < set.n_trials(); ++i)
        if (wanted.count(set.subject_ids[i])) idx.push_back(i);
    return subset(set, idx);
}

inline TrialSet exclude_subject(const TrialSet& set, std::uint16_t id) {
    const auto known = set.subjects();
    if (!std::binary_search(known.begin(), known.end(), id))
        throw DataError("unknown subject " + std::to_string(id) + "; known subjects: " + detail::id_list(known));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < set.n_trials(); ++i)
        if (set.subject_ids[i] != id) idx.push_back(i);
    return subset(set, idx);
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Stratified per (subject, class). The validation total is round(fraction*N),
// apportioned by largest remainder so each group gets floor or ceil of
// fraction * group size. Both index lists come back in ascending order.
inline SplitIndices split_indices(const TrialSet& set, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw DataError("validation fraction must be in (0,1), got " + std::to_string(fraction));
    std::map<std::pair<std::uint16_t, std::uint16_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < set.n_trials(); ++i) groups[{set.subject_ids[i], set.class_ids[i]}].push_back(i);

    struct Quota {
        std::size_t base;
        double remainder;
        std::size_t order;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [key, members] : groups) {
        const double exact = fraction * static_cast<double>(members.size());
        const auto base = static_cast<std::size_t>(std::floor(exact));
        quotas.push_back({base, exact - static_cast<double>(base), quotas.size()});
        assigned += base;
    }
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(set.n_trials())));
    std::vector<std::size_t> by_remainder(quotas.size());
    std::iota(by_remainder.begin(), by_remainder.end(), 0);
    std::stable_sort(by_remainder.begin(), by_remainder.end(),
                     [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (std::size_t k = 0; assigned < target && k < by_remainder.size(); ++k) {
        if (quotas[by_remainder[k]].remainder > 0.0) {
            ++quotas[by_remainder[k]].base;
            ++assigned;
        }
    }

    Rng rng(seed);
    SplitIndices out;
    std::size_t g = 0;
    for (auto& [key, members] : groups) {
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t nv = quotas[g++].base;
        out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(nv));
        out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(nv), members.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

inline std::pair<TrialSet, TrialSet> split_train_val(const TrialSet& set, double fraction, std::uint64_t seed) {
    auto idx = split_indices(set, fraction, seed);
    return {subset(set, idx.train), subset(set, idx.val)};
}

}  // namespace protodg
