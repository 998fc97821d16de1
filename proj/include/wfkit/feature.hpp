#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

/// Dense row-major float tensor with shape metadata. The IAT histogram is
/// [G, 2, L] (bin, direction, time slot); the TAM baseline is [2, L].
struct FeatureTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    static FeatureTensor zeros(std::vector<std::int64_t> shape) {
        FeatureTensor t;
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in feature tensor shape");
            n *= d;
        }
        t.shape = std::move(shape);
        t.data.assign(static_cast<std::size_t>(n), 0.0f);
        return t;
    }

    std::int64_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
    }

    bool operator==(const FeatureTensor&) const = default;
};

/// Log-spaced IAT bin boundaries: B[0] = 0, B[G] = +inf, interior boundaries
/// geometric between delta_min and delta_max. For G = 2 the only boundary is
/// delta_min itself.
inline std::vector<double> default_boundaries(int bin_count, double delta_min, double delta_max) {
    if (bin_count < 2) throw ConfigError("bin_count must be >= 2");
    if (!(delta_min > 0.0) || !(delta_max > delta_min))
        throw ConfigError("need 0 < delta_min < delta_max for IAT boundaries");
    std::vector<double> b(static_cast<std::size_t>(bin_count) + 1);
    b.front() = 0.0;
    b.back() = std::numeric_limits<double>::infinity();
    for (int r = 1; r < bin_count; ++r) {
        const double e = bin_count == 2 ? 0.0 : static_cast<double>(r - 1) / (bin_count - 2);
        b[static_cast<std::size_t>(r)] = delta_min * std::pow(delta_max / delta_min, e);
    }
    return b;
}

/// Histogram configuration. Defaults follow the tuned values: 44 ms slots,
/// 1800 slots (80 s of trace), 9 log-scale bins over [1e-4 s, 1 s].
struct IatConfig {
    double slot_duration = 0.044;
    int slot_count = 1800;
    int bin_count = 9;
    std::vector<double> boundaries; // size bin_count + 1; empty => defaults

    static IatConfig with_defaults(double slot_duration = 0.044, int slot_count = 1800, int bin_count = 9,
                                   double delta_min = 1e-4, double delta_max = 1.0) {
        IatConfig cfg;
        cfg.slot_duration = slot_duration;
        cfg.slot_count = slot_count;
        cfg.bin_count = bin_count;
        cfg.boundaries = default_boundaries(bin_count, delta_min, delta_max);
        cfg.validate();
        return cfg;
    }

    void validate() const {
        if (!(slot_duration > 0.0)) throw ConfigError("slot_duration must be positive");
        if (slot_count <= 0) throw ConfigError("slot_count must be positive");
        if (bin_count < 2) throw ConfigError("bin_count must be >= 2");
        if (boundaries.size() != static_cast<std::size_t>(bin_count) + 1)
            throw ConfigError("boundaries must have bin_count + 1 entries");
        if (boundaries.front() != 0.0) throw ConfigError("boundaries must start at 0");
        if (!std::isinf(boundaries.back())) throw ConfigError("boundaries must end at +inf");
        for (std::size_t r = 1; r < boundaries.size(); ++r)
            if (!(boundaries[r] > boundaries[r - 1])) throw ConfigError("boundaries must be strictly increasing");
    }
};

namespace detail {

// Slot index under the predicate k*s <= t < (k+1)*s, corrected around the
// floating-point edges so it matches a literal evaluation of that predicate.
inline int slot_index(double t, double s) {
    int k = static_cast<int>(std::floor(t / s));
    while (k > 0 && static_cast<double>(k) * s > t) --k;
    while (static_cast<double>(k + 1) * s <= t) ++k;
    return k;
}

// Bin index r with boundaries[r] <= delta < boundaries[r+1]. Bins are
// half-open so they partition [0, inf); boundaries[0] = 0 makes delta = 0
// land in bin 0.
inline int bin_index(double delta, const std::vector<double>& boundaries) {
    auto it = std::upper_bound(boundaries.begin(), boundaries.end(), delta);
    return static_cast<int>(it - boundaries.begin()) - 1;
}

} // namespace detail

/// The IAT histogram: X[r, dir, k] counts cells in time slot k with direction
/// dir (0 = outgoing, 1 = incoming) whose inter-arrival time falls in bin r.
/// Cells at or beyond slot_count * slot_duration are ignored.
inline FeatureTensor iat_histogram(const Trace& trace, const IatConfig& cfg) {
    cfg.validate();
    const int G = cfg.bin_count;
    const int L = cfg.slot_count;
    const double s = cfg.slot_duration;
    FeatureTensor out = FeatureTensor::zeros({G, 2, L});

    double prev_t = 0.0;
    for (std::size_t i = 0; i < trace.cells.size(); ++i) {
        const Cell& cell = trace.cells[i];
        const double delta = i == 0 ? 0.0 : cell.timestamp - prev_t;
        prev_t = cell.timestamp;
        if (cell.timestamp >= static_cast<double>(L) * s) continue;
        const int k = detail::slot_index(cell.timestamp, s);
        if (k < 0 || k >= L) continue;
        const int r = detail::bin_index(delta, cfg.boundaries);
        const int dir = cell.direction > 0 ? 0 : 1;
        out.data[static_cast<std::size_t>((static_cast<std::int64_t>(r) * 2 + dir) * L + k)] += 1.0f;
    }
    return out;
}

/// The TAM baseline: per-slot cell counts, TAM[0, k] outgoing, TAM[1, k]
/// incoming, same slot rule as the IAT histogram.
inline FeatureTensor tam(const Trace& trace, double slot_duration, int slot_count) {
    if (!(slot_duration > 0.0)) throw ConfigError("slot_duration must be positive");
    if (slot_count <= 0) throw ConfigError("slot_count must be positive");
    FeatureTensor out = FeatureTensor::zeros({2, slot_count});
    for (const Cell& cell : trace.cells) {
        if (cell.timestamp >= static_cast<double>(slot_count) * slot_duration) continue;
        const int k = detail::slot_index(cell.timestamp, slot_duration);
        if (k < 0 || k >= slot_count) continue;
        const int dir = cell.direction > 0 ? 0 : 1;
        out.data[static_cast<std::size_t>(dir) * slot_count + static_cast<std::size_t>(k)] += 1.0f;
    }
    return out;
}

// ----- binary feature cache -------------------------------------------------
//
// Layout (little-endian): magic "WFC1", u32 tensor count, then per tensor
// u32 rank, u32 dims[rank], float32 row-major payload.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos, const std::string& what) {
    if (pos + 4 > in.size()) throw ParseError("feature cache truncated reading " + what);
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}

} // namespace detail

inline void write_feature_cache(const std::vector<FeatureTensor>& tensors, const std::string& path) {
    std::string out;
    out += "WFC1";
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const FeatureTensor& t : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::int64_t d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        const std::size_t bytes = t.data.size() * sizeof(float);
        const std::size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, t.data.data(), bytes);
    }
    write_file(path, out);
}

inline std::vector<FeatureTensor> read_feature_cache(const std::string& path) {
    const std::string in = read_file(path);
    if (in.size() < 4 || in.compare(0, 4, "WFC1") != 0)
        throw ParseError(path + ": bad feature cache magic (want WFC1)");
    std::size_t pos = 4;
    const std::uint32_t count = detail::get_u32(in, pos, "tensor count");
    std::vector<FeatureTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t rank = detail::get_u32(in, pos, "rank");
        FeatureTensor t;
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint32_t d = detail::get_u32(in, pos, "dimension");
            t.shape.push_back(static_cast<std::int64_t>(d));
            n *= d;
        }
        const std::size_t bytes = static_cast<std::size_t>(n) * sizeof(float);
        if (pos + bytes > in.size()) throw ParseError(path + ": feature cache truncated reading payload");
        t.data.resize(static_cast<std::size_t>(n));
        std::memcpy(t.data.data(), in.data() + pos, bytes);
        pos += bytes;
        tensors.push_back(std::move(t));
    }
    return tensors;
}

enum class Representation { iat, tam };

inline Representation parse_representation(const std::string& name) {
    if (name == "iat") return Representation::iat;
    if (name == "tam") return Representation::tam;
    throw ConfigError("unknown representation \"" + name + "\" (want iat or tam)");
}

/// Per-index labels that sit alongside a feature cache ("index,label" CSV).
inline void write_labels_csv(const std::vector<int>& labels, const std::string& path) {
    std::string out = "index,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
    write_file(path, out);
}

inline std::vector<int> read_labels_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<int> labels;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t eol = text.find('\n', pos);
        std::string_view line(text.data() + pos, (eol == std::string::npos ? text.size() : eol) - pos);
        pos = eol == std::string::npos ? text.size() : eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "index,label") throw ParseError(path + ": expected header \"index,label\"");
            continue;
        }
        const std::size_t comma = line.find(',');
        if (comma == std::string_view::npos)
            throw ParseError(path + ": line " + std::to_string(line_no) + ": missing comma");
        int idx = 0, label = 0;
        if (!detail::parse_uint(line.substr(0, comma), idx) || !detail::parse_uint(line.substr(comma + 1), label))
            throw ParseError(path + ": line " + std::to_string(line_no) + ": bad index/label");
        if (static_cast<std::size_t>(idx) != labels.size())
            throw ParseError(path + ": line " + std::to_string(line_no) + ": indices must be consecutive from 0");
        labels.push_back(label);
    }
    return labels;
}

struct FeaturizeResult {
    std::size_t tensor_count = 0;
    std::size_t skipped_short = 0;
};

/// Featurizes every manifest entry in order into a binary cache plus a labels
/// CSV. `min_cells`, when positive, drops traces shorter than that many cells
/// (the labels file then indexes the kept tensors). Any parse failure aborts
/// with the offending path.
inline FeaturizeResult featurize_dataset(const DatasetManifest& manifest, const IatConfig& cfg,
                                         Representation repr, const std::string& cache_path,
                                         const std::string& labels_path, int min_cells = 0) {
    if (manifest.entries.empty()) throw DataError("manifest has no entries to featurize");
    std::vector<FeatureTensor> tensors;
    std::vector<int> labels;
    tensors.reserve(manifest.entries.size());
    FeaturizeResult result;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const Trace trace = load_trace(manifest.full_path(i));
        if (min_cells > 0 && trace.cells.size() < static_cast<std::size_t>(min_cells)) {
            ++result.skipped_short;
            continue;
        }
        tensors.push_back(repr == Representation::iat ? iat_histogram(trace, cfg)
                                                      : tam(trace, cfg.slot_duration, cfg.slot_count));
        labels.push_back(manifest.entries[i].label);
    }
    if (tensors.empty()) throw DataError("all traces were filtered out by min_cells");
    write_feature_cache(tensors, cache_path);
    write_labels_csv(labels, labels_path);
    result.tensor_count = tensors.size();
    return result;
}

} // namespace wfkit
