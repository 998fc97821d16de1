#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

/// A defended cell: the shaped timestamp, whether it carries real payload,
/// and (for real cells) the index of the source cell it carries.
struct DefendedCell {
    double timestamp = 0.0;
    int direction = 0;
    bool real = true;
    int origin_index = -1;
};

struct DefendedTrace {
    std::vector<DefendedCell> cells;
    int label = kUnlabeled;

    Trace to_trace() const {
        Trace t;
        t.label = label;
        t.cells.reserve(cells.size());
        for (const DefendedCell& c : cells) t.cells.push_back({c.timestamp, c.direction});
        return t;
    }
};

namespace detail {

// Stable order: by timestamp; real before dummy on ties; tied reals keep
// source order; tied dummies go outgoing first. Equal inputs therefore give
// byte-identical files.
inline void sort_defended(std::vector<DefendedCell>& cells) {
    std::stable_sort(cells.begin(), cells.end(), [](const DefendedCell& a, const DefendedCell& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.real != b.real) return a.real;
        if (a.real) return a.origin_index < b.origin_index;
        return a.direction > b.direction;
    });
}

} // namespace detail

// ----- FRONT ----------------------------------------------------------------

/// Zero-delay dummy padding with a Rayleigh-shaped burst near the trace
/// front. Each direction independently draws a dummy budget n and a Rayleigh
/// scale w, then schedules n dummies at Rayleigh(w) timestamps. Real cells
/// are never moved.
struct FrontConfig {
    int n_min = 1;
    int n_max = 300;
    double w_min = 1.0;
    double w_max = 14.0;

    void validate() const {
        if (n_min < 1 || n_max < n_min) throw ConfigError("front: need 1 <= n_min <= n_max");
        if (!(w_min > 0.0) || !(w_max >= w_min)) throw ConfigError("front: need 0 < w_min <= w_max");
    }
};

inline DefendedTrace front(const Trace& trace, const FrontConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DefendedTrace out;
    out.label = trace.label;
    out.cells.reserve(trace.cells.size());
    for (std::size_t i = 0; i < trace.cells.size(); ++i)
        out.cells.push_back({trace.cells[i].timestamp, trace.cells[i].direction, true, static_cast<int>(i)});

    // direction streams: 0 outgoing (+1), 1 incoming (-1)
    for (int d = 0; d < 2; ++d) {
        Rng rng(seed, 0x46524f4eu /*FRON*/, static_cast<std::uint64_t>(d));
        const int n = rng.uniform_int(cfg.n_min, cfg.n_max);
        const double w = rng.uniform(cfg.w_min, cfg.w_max);
        const int dir = d == 0 ? 1 : -1;
        for (int i = 0; i < n; ++i) out.cells.push_back({rng.rayleigh(w), dir, false, -1});
    }
    detail::sort_defended(out.cells);
    return out;
}

// ----- Tamaraw --------------------------------------------------------------

/// Constant-rate shaping: each direction emits exactly at ticks 0, rho,
/// 2*rho, ... Each tick sends the oldest queued real cell that has arrived
/// at or before the tick, else a dummy. Emission continues until every real
/// cell is out and the per-direction count is a positive multiple of
/// pad_multiple.
struct TamarawConfig {
    double rho_out = 0.04;
    double rho_in = 0.012;
    int pad_multiple = 100;

    void validate() const {
        if (!(rho_out > 0.0) || !(rho_in > 0.0)) throw ConfigError("tamaraw: rates must be positive");
        if (pad_multiple <= 0) throw ConfigError("tamaraw: pad_multiple must be positive");
    }
};

inline DefendedTrace tamaraw(const Trace& trace, const TamarawConfig& cfg, std::uint64_t /*seed*/ = 0) {
    cfg.validate();
    DefendedTrace out;
    out.label = trace.label;

    for (int d = 0; d < 2; ++d) {
        const int dir = d == 0 ? 1 : -1;
        const double rho = d == 0 ? cfg.rho_out : cfg.rho_in;
        std::deque<std::pair<double, int>> queue; // (arrival, origin index), oldest first
        for (std::size_t i = 0; i < trace.cells.size(); ++i)
            if (trace.cells[i].direction == dir)
                queue.emplace_back(trace.cells[i].timestamp, static_cast<int>(i));

        std::int64_t count = 0;
        while (!queue.empty()) {
            // Tick times are m * rho exactly, so the per-direction gaps form
            // an exact arithmetic progression in floating point.
            const double t = static_cast<double>(count) * rho;
            if (queue.front().first <= t) {
                out.cells.push_back({t, dir, true, queue.front().second});
                queue.pop_front();
            } else {
                out.cells.push_back({t, dir, false, -1});
            }
            ++count;
        }
        std::int64_t target = count;
        if (target % cfg.pad_multiple != 0 || target == 0)
            target = (count / cfg.pad_multiple + 1) * cfg.pad_multiple;
        for (; count < target; ++count)
            out.cells.push_back({static_cast<double>(count) * rho, dir, false, -1});
    }
    detail::sort_defended(out.cells);
    return out;
}

// ----- decay shaper ---------------------------------------------------------

/// Surge-and-decay shaping of the incoming direction. Incoming cells are
/// released on a schedule whose instantaneous rate is rate0 * decay^(t - t_surge)
/// cells per second; unfilled ticks send dummies. A surge resets t_surge to
/// the present whenever the pending real-incoming queue exceeds
/// surge_threshold times the cells sent since the current surge. Outgoing
/// real cells are released in order, one per ceil(1 / out_ratio) incoming
/// emissions, buffered otherwise.
struct DecayShaperConfig {
    double rate0 = 277.0;
    double decay = 0.94;
    double surge_threshold = 3.55;
    double out_ratio = 0.25;

    void validate() const {
        if (!(rate0 > 0.0)) throw ConfigError("decay_shaper: rate0 must be positive");
        if (!(decay > 0.0) || decay > 1.0) throw ConfigError("decay_shaper: decay must be in (0, 1]");
        if (!(surge_threshold > 0.0)) throw ConfigError("decay_shaper: surge_threshold must be positive");
        if (!(out_ratio > 0.0) || out_ratio > 1.0) throw ConfigError("decay_shaper: out_ratio must be in (0, 1]");
    }
};

namespace detail {

// Offset of the j-th emission (j = 1, 2, ...) after a surge at offset 0,
// under instantaneous rate rate0 * decay^u: cumulative emissions by offset u
// are rate0 * (decay^u - 1) / ln(decay), so the j-th tick solves that for j.
// decay = 1 degenerates to the constant-rate grid j / rate0. Returns +inf
// once the decayed schedule can no longer reach j emissions.
inline double decay_offset(std::int64_t j, double rate0, double decay) {
    if (decay == 1.0) return static_cast<double>(j) / rate0;
    const double ln_d = std::log(decay);
    const double arg = 1.0 + static_cast<double>(j) * ln_d / rate0;
    if (arg <= 0.0) return std::numeric_limits<double>::infinity();
    return std::log(arg) / ln_d;
}

} // namespace detail

inline DefendedTrace decay_shaper(const Trace& trace, const DecayShaperConfig& cfg, std::uint64_t /*seed*/ = 0) {
    cfg.validate();
    DefendedTrace out;
    out.label = trace.label;

    std::vector<std::pair<double, int>> in_arrivals, out_arrivals; // (arrival, origin index)
    for (std::size_t i = 0; i < trace.cells.size(); ++i) {
        const Cell& c = trace.cells[i];
        (c.direction < 0 ? in_arrivals : out_arrivals).emplace_back(c.timestamp, static_cast<int>(i));
    }

    const std::size_t in_total = in_arrivals.size();
    const std::size_t out_total = out_arrivals.size();
    std::size_t in_next = 0;  // next incoming real not yet queued
    std::size_t in_sent = 0;  // incoming reals released
    std::size_t out_next = 0; // next outgoing real not yet released
    std::deque<int> queue;    // origin indices of arrived, unsent incoming reals

    const std::int64_t out_every = static_cast<std::int64_t>(std::ceil(1.0 / cfg.out_ratio));
    std::int64_t in_since_out = 0;

    double surge_time = 0.0;
    std::int64_t since_surge = 0; // emissions since current surge
    double now = 0.0;

    auto flush_outgoing = [&]() {
        for (; out_next < out_total; ++out_next)
            out.cells.push_back(
                {std::max(now, out_arrivals[out_next].first), 1, true, out_arrivals[out_next].second});
    };

    if (in_total == 0) {
        // Nothing incoming to pace against; outgoing passes through unshaped.
        flush_outgoing();
        detail::sort_defended(out.cells);
        return out;
    }

    while (in_sent < in_total) {
        const double t = surge_time + detail::decay_offset(since_surge + 1, cfg.rate0, cfg.decay);
        if (std::isinf(t)) {
            // Schedule exhausted below one emission: restart the epoch here.
            surge_time = now;
            since_surge = 0;
            continue;
        }
        now = std::max(now, t);

        while (in_next < in_total && in_arrivals[in_next].first <= t) queue.push_back(in_arrivals[in_next++].second);

        if (!queue.empty()) {
            out.cells.push_back({t, -1, true, queue.front()});
            queue.pop_front();
            ++in_sent;
        } else {
            out.cells.push_back({t, -1, false, -1});
        }
        ++since_surge;
        ++in_since_out;

        if (in_since_out >= out_every) {
            if (out_next < out_total && out_arrivals[out_next].first <= t) {
                out.cells.push_back({t, 1, true, out_arrivals[out_next].second});
                ++out_next;
            }
            in_since_out = 0;
        }

        // Surge when the backlog dwarfs what the decayed schedule has moved.
        if (static_cast<double>(queue.size()) >
            cfg.surge_threshold * static_cast<double>(std::max<std::int64_t>(since_surge, 1))) {
            surge_time = t;
            since_surge = 0;
        }
    }
    flush_outgoing();
    detail::sort_defended(out.cells);
    return out;
}

// ----- overheads ------------------------------------------------------------

/// Aggregate overheads across a set of (original, defended) pairs.
/// data overhead = total dummy cells / total real cells; time overhead =
/// sum of per-trace latency inflation (clamped at 0) / sum of original
/// durations, where defended duration is measured to the last *real* cell.
struct Overheads {
    double data = 0.0;
    double time = 0.0;
};

inline Overheads compute_overheads(const std::vector<Trace>& originals,
                                   const std::vector<DefendedTrace>& defended) {
    if (originals.size() != defended.size())
        throw DataError("overheads: originals and defended counts differ");
    if (originals.empty()) throw DataError("overheads: empty input");
    std::int64_t reals = 0, dummies = 0;
    double orig_dur = 0.0, extra = 0.0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        if (originals[i].cells.empty()) throw DataError("overheads: empty source trace");
        std::int64_t r = 0;
        double last_real = 0.0;
        for (const DefendedCell& c : defended[i].cells) {
            if (c.real) {
                ++r;
                last_real = std::max(last_real, c.timestamp);
            } else {
                ++dummies;
            }
        }
        if (static_cast<std::size_t>(r) != originals[i].cells.size())
            throw DataError("overheads: defended trace lost or gained real cells");
        reals += r;
        const double od = originals[i].duration();
        orig_dur += od;
        extra += std::max(0.0, last_real - od);
    }
    if (reals == 0) throw DataError("overheads: no real cells");
    Overheads oh;
    oh.data = static_cast<double>(dummies) / static_cast<double>(reals);
    oh.time = orig_dur > 0.0 ? extra / orig_dur : 0.0;
    return oh;
}

// ----- serialization --------------------------------------------------------

/// Defended traces use the plain trace text format plus an "r"/"d"
/// provenance column.
inline std::string serialize_defended(const DefendedTrace& trace) {
    std::string out;
    out.reserve(trace.cells.size() * 16);
    char buf[64];
    for (const DefendedCell& c : trace.cells) {
        const int n =
            std::snprintf(buf, sizeof buf, "%.6f\t%d\t%c\n", c.timestamp, c.direction, c.real ? 'r' : 'd');
        out.append(buf, static_cast<std::size_t>(n));
    }
    return out;
}

enum class DefenseKind { front, tamaraw, decay_shaper };

inline DefenseKind parse_defense(const std::string& name) {
    if (name == "front") return DefenseKind::front;
    if (name == "tamaraw") return DefenseKind::tamaraw;
    if (name == "decay_shaper") return DefenseKind::decay_shaper;
    throw ConfigError("unknown defense \"" + name + "\" (want front, tamaraw, or decay_shaper)");
}

} // namespace wfkit
