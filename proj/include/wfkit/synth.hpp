#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

/// Synthetic page-load traffic. Classes share the same distributions of
/// total cell count and total duration; what separates them is timing
/// micro-structure: the incoming inter-arrival log-normal (median spaced
/// geometrically per class) and the burst/think-time layout derived from it.
/// That keeps volume and duration uninformative, so constant-rate defenses
/// genuinely erase the class signal.
struct SynthSpec {
    int class_count = 10;
    int traces_per_class = 50;
    int nonmonitored_traces = 0; // extra heterogeneous traces labeled class_count

    double base_iat_median = 0.0015; // class-0 incoming IAT median, seconds
    double iat_median_factor = 1.30; // geometric step per class
    double iat_sigma = 0.25;         // log-space spread of incoming IATs
    int cells_min = 350;             // incoming cells per trace
    int cells_max = 450;
    double duration_min = 9.0; // target trace duration, seconds
    double duration_max = 11.0;
    double think_gap_mean = 0.25; // mean think-time between bursts
    int ack_every = 8;            // one outgoing cell per this many incoming
    int request_min = 2;          // initial outgoing request burst size
    int request_max = 4;
    std::uint64_t seed = 0;

    void validate() const {
        if (class_count < 1) throw ConfigError("synth: class_count must be >= 1");
        if (traces_per_class < 1) throw ConfigError("synth: traces_per_class must be >= 1");
        if (nonmonitored_traces < 0) throw ConfigError("synth: nonmonitored_traces must be >= 0");
        if (!(base_iat_median > 0.0) || !(iat_median_factor > 0.0) || !(iat_sigma > 0.0))
            throw ConfigError("synth: IAT parameters must be positive");
        if (cells_min < 1 || cells_max < cells_min) throw ConfigError("synth: need 1 <= cells_min <= cells_max");
        if (!(duration_min > 0.0) || !(duration_max >= duration_min))
            throw ConfigError("synth: need 0 < duration_min <= duration_max");
        if (!(think_gap_mean > 0.0)) throw ConfigError("synth: think_gap_mean must be positive");
        if (ack_every < 1) throw ConfigError("synth: ack_every must be >= 1");
        if (request_min < 1 || request_max < request_min)
            throw ConfigError("synth: need 1 <= request_min <= request_max");
    }
};

namespace detail {

// One page load: outgoing request burst, then incoming bursts whose
// inter-arrival times follow the class log-normal, with think-time gaps
// between bursts and an outgoing ACK-like cell per ack_every incoming cells.
// class_position may be fractional (used for heterogeneous non-monitored
// traffic).
inline Trace synth_trace(const SynthSpec& spec, double class_position, int label, Rng& rng) {
    Trace trace;
    trace.label = label;

    const int n_in = static_cast<int>(rng.uniform_int(spec.cells_min, spec.cells_max));
    const double median =
        spec.base_iat_median * std::pow(spec.iat_median_factor, class_position) * rng.uniform(0.9, 1.1);
    const double mu = std::log(median);
    const double t_total = rng.uniform(spec.duration_min, spec.duration_max);
    const double intra_expected =
        static_cast<double>(n_in) * median * std::exp(0.5 * spec.iat_sigma * spec.iat_sigma);
    const double think_total = std::max(0.5, t_total - intra_expected);
    const int burst_count =
        std::max(1, static_cast<int>(std::llround(think_total / spec.think_gap_mean)));
    const double gap_mean = think_total / static_cast<double>(burst_count);

    double t = 0.0;
    const int n_req = static_cast<int>(rng.uniform_int(spec.request_min, spec.request_max));
    for (int i = 0; i < n_req; ++i) {
        trace.cells.push_back({t, 1});
        t += rng.uniform(2e-4, 8e-4);
    }
    t += rng.uniform(0.05, 0.15);

    const int base_size = n_in / burst_count;
    const int remainder = n_in % burst_count;
    int since_ack = 0;
    for (int b = 0; b < burst_count; ++b) {
        if (b > 0) t += gap_mean * rng.uniform(0.6, 1.4);
        const int size = base_size + (b < remainder ? 1 : 0);
        for (int j = 0; j < size; ++j) {
            t += rng.lognormal(mu, spec.iat_sigma);
            trace.cells.push_back({t, -1});
            if (++since_ack >= spec.ack_every) {
                trace.cells.push_back({t, 1});
                since_ack = 0;
            }
        }
    }
    return trace;
}

} // namespace detail

/// Writes the full dataset (trace files plus manifest.csv) under out_dir and
/// returns the manifest. Deterministic per (seed, class, instance):
/// regenerating with the same spec gives byte-identical files.
inline DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

    for (int c = 0; c < spec.class_count; ++c)
        for (int i = 0; i < spec.traces_per_class; ++i) {
            Rng rng(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i));
            const Trace trace = detail::synth_trace(spec, static_cast<double>(c), c, rng);
            const std::string name = std::to_string(c) + "-" + std::to_string(i) + ".cell";
            write_file((fs::path(out_dir) / name).string(), serialize_trace(trace));
        }
    for (int i = 0; i < spec.nonmonitored_traces; ++i) {
        Rng rng(spec.seed, static_cast<std::uint64_t>(spec.class_count), static_cast<std::uint64_t>(i));
        const double pos = rng.uniform(0.0, static_cast<double>(spec.class_count - 1));
        const Trace trace = detail::synth_trace(spec, pos, spec.class_count, rng);
        write_file((fs::path(out_dir) / (std::to_string(i) + ".cell")).string(), serialize_trace(trace));
    }

    DatasetManifest manifest = scan_dataset(out_dir);
    write_manifest_csv(manifest, (fs::path(out_dir) / "manifest.csv").string());
    return manifest;
}

} // namespace wfkit
