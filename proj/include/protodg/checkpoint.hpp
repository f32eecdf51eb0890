#pragma once

// PDGM model checkpoints. Layout in docs/checkpoint_format.md.

#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "protodg/data_io.hpp"
#include "protodg/trainer.hpp"

namespace protodg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::vector<std::pair<std::string, Var>> checkpoint_tensors(const Model& m) {
    auto out = m.net.named_parameters();
    const auto bn = m.net.batchnorm_states();
    const char* prefixes[] = {"extractor.block1.spatial", "extractor.block2", "extractor.block3", "extractor.block4"};
    for (std::size_t i = 0; i < bn.size(); ++i) {
        const std::size_t c = bn[i]->running_mean.size();
        out.emplace_back(std::string(prefixes[i]) + ".bn.running_mean", make_var({c}, bn[i]->running_mean));
        out.emplace_back(std::string(prefixes[i]) + ".bn.running_var", make_var({c}, bn[i]->running_var));
    }
    out.emplace_back("class_prototypes", m.class_protos.values);
    out.emplace_back("subject_prototypes", m.subject_protos.values);
    out.emplace_back("baseline.weight", m.head.weight);
    out.emplace_back("baseline.bias", m.head.bias);
    return out;
}

inline void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<std::uint64_t>(v)); }

}  // namespace detail

inline std::string encode_checkpoint(const Model& m) {
    using namespace detail;
    std::string buf = "PDGM";
    put_u32(buf, kCheckpointVersion);
    const auto& c = m.net.config;
    put_u32(buf, static_cast<std::uint32_t>(c.n_channels));
    put_u32(buf, static_cast<std::uint32_t>(c.n_samples));
    put_u32(buf, static_cast<std::uint32_t>(c.temporal_kernel));
    put_u32(buf, static_cast<std::uint32_t>(c.pool));
    for (auto f : c.block_filters) put_u32(buf, static_cast<std::uint32_t>(f));
    put_f64(buf, c.dropout_p);
    put_u32(buf, static_cast<std::uint32_t>(c.encoder_dim));
    put_u32(buf, static_cast<std::uint32_t>(m.method));
    put_u32(buf, static_cast<std::uint32_t>(m.n_classes()));
    put_u32(buf, static_cast<std::uint32_t>(m.subject_ids.size()));
    for (auto s : m.subject_ids) put_u16(buf, s);
    const auto tensors = checkpoint_tensors(m);
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, v] : tensors) {
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put_u32(buf, static_cast<std::uint32_t>(v->shape().size()));
        for (auto d : v->shape()) put_u32(buf, static_cast<std::uint32_t>(d));
        for (double x : v->data()) put_f64(buf, x);
    }
    return buf;
}

inline Model decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.take(4, "magic") != "PDGM") throw FormatError("bad magic, expected PDGM", 0);
    const auto version_at = r.offset();
    if (auto v = r.u32("version"); v != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
    NetworkConfig c;
    c.n_channels = r.u32("n_channels");
    c.n_samples = r.u32("n_samples");
    c.temporal_kernel = r.u32("temporal_kernel");
    c.pool = r.u32("pool");
    for (auto& f : c.block_filters) f = r.u32("block_filters");
    c.dropout_p = std::bit_cast<double>(r.u64("dropout_p"));
    c.encoder_dim = r.u32("encoder_dim");
    const auto method_at = r.offset();
    const auto method = r.u32("method");
    if (method > static_cast<std::uint32_t>(Method::proposed))
        throw FormatError("unknown method code " + std::to_string(method), method_at);
    const auto n_classes = r.u32("n_classes");
    const auto n_subjects = r.u32("n_subjects");
    std::vector<std::uint16_t> subjects;
    for (std::uint32_t i = 0; i < n_subjects; ++i) subjects.push_back(r.u16("subject id"));
    Model m;
    try {
        m = make_model(c, static_cast<Method>(method), n_classes, subjects, 0);
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid checkpoint header: ") + e.what(), r.offset());
    }

    auto expected = detail::checkpoint_tensors(m);
    std::map<std::string, Var> slots(expected.begin(), expected.end());
    const auto count_at = r.offset();
    const auto count = r.u32("tensor count");
    if (count != expected.size())
        throw FormatError("expected " + std::to_string(expected.size()) + " tensors, found " + std::to_string(count),
                          count_at);
    std::map<std::string, std::vector<double>> loaded;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto at = r.offset();
        const std::string name(r.take(r.u32("name length"), "name"));
        auto it = slots.find(name);
        if (it == slots.end()) throw FormatError("unexpected tensor '" + name + "'", at);
        if (loaded.count(name)) throw FormatError("duplicate tensor '" + name + "'", at);
        Shape shape(r.u32("rank"));
        for (auto& d : shape) d = r.u32("dim");
        if (shape != it->second->shape())
            throw FormatError("tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                              to_string(it->second->shape()),
                              at);
        std::vector<double> data(numel(shape));
        for (auto& x : data) x = std::bit_cast<double>(r.u64("tensor data"));
        loaded[name] = std::move(data);
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());

    auto fill = [&](const std::string& name, const Var& v) {
        const auto& src = loaded.at(name);
        std::copy(src.begin(), src.end(), v->data().begin());
    };
    for (const auto& [name, v] : m.net.named_parameters()) fill(name, v);
    fill("class_prototypes", m.class_protos.values);
    fill("subject_prototypes", m.subject_protos.values);
    fill("baseline.weight", m.head.weight);
    fill("baseline.bias", m.head.bias);
    const char* prefixes[] = {"extractor.block1.spatial", "extractor.block2", "extractor.block3", "extractor.block4"};
    auto bn = m.net.batchnorm_states();
    for (std::size_t i = 0; i < bn.size(); ++i) {
        bn[i]->running_mean = loaded.at(std::string(prefixes[i]) + ".bn.running_mean");
        bn[i]->running_var = loaded.at(std::string(prefixes[i]) + ".bn.running_var");
    }
    return m;
}

inline void save_checkpoint(const Model& m, const std::string& path) { detail::write_file(path, encode_checkpoint(m)); }

inline Model load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace protodg
