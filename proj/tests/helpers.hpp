#pragma once

// Shared test utilities: temp dirs, random trace generation, and a
// brute-force IAT-histogram oracle written as a literal triple loop so the
// production histogram has something independent to match.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "wfkit/feature.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace testutil {

class TempDir {
  public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "wfkit-test-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return (std::filesystem::path(path_) / name).string(); }

  private:
    std::string path_;
};

inline std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Random trace with adversarial timing: bursts, exact slot-boundary hits,
// duplicate timestamps, and cells past the slotted horizon.
inline wfkit::Trace random_trace(wfkit::Rng& rng, int max_cells, double slot_duration, int slot_count) {
    wfkit::Trace trace;
    const int n = static_cast<int>(rng.uniform_int(0, max_cells));
    double t = 0.0;
    const double horizon = slot_duration * slot_count;
    for (int i = 0; i < n; ++i) {
        const double roll = rng.uniform();
        if (roll < 0.25) {
            t += rng.uniform(0.0, slot_duration * 0.2); // burst
        } else if (roll < 0.45) {
            const int k = static_cast<int>(rng.uniform_int(0, slot_count + 2));
            const double boundary = static_cast<double>(k) * slot_duration;
            if (boundary >= t) t = boundary; // land exactly on a slot edge
        } else if (roll < 0.55) {
            // duplicate timestamp
        } else if (roll < 0.9) {
            t += rng.uniform(0.0, horizon / std::max(1, n));
        } else {
            t += rng.uniform(0.0, horizon * 0.5); // occasionally shoot past the horizon
        }
        wfkit::Cell cell;
        cell.timestamp = t;
        cell.direction = rng.uniform() < 0.5 ? 1 : -1;
        trace.cells.push_back(cell);
    }
    return trace;
}

// Literal evaluation of the histogram definition: for every (cell, bin, slot)
// triple test "B[r] <= delta < B[r+1]" and "k*s <= t < (k+1)*s" directly.
inline wfkit::FeatureTensor brute_force_iat(const wfkit::Trace& trace, const wfkit::IatConfig& cfg) {
    const int G = cfg.bin_count;
    const int L = cfg.slot_count;
    wfkit::FeatureTensor out = wfkit::FeatureTensor::zeros({G, 2, L});
    for (std::size_t i = 0; i < trace.cells.size(); ++i) {
        const double t = trace.cells[i].timestamp;
        const double delta = i == 0 ? 0.0 : t - trace.cells[i - 1].timestamp;
        const int dir = trace.cells[i].direction > 0 ? 0 : 1;
        for (int r = 0; r < G; ++r) {
            const double lo = cfg.boundaries[static_cast<std::size_t>(r)];
            const double hi = cfg.boundaries[static_cast<std::size_t>(r) + 1];
            if (!(lo <= delta && delta < hi)) continue;
            for (int k = 0; k < L; ++k) {
                const double s0 = static_cast<double>(k) * cfg.slot_duration;
                const double s1 = static_cast<double>(k + 1) * cfg.slot_duration;
                if (s0 <= t && t < s1)
                    out.data[static_cast<std::size_t>((r * 2 + dir) * L + k)] += 1.0f;
            }
        }
    }
    return out;
}

inline wfkit::FeatureTensor brute_force_tam(const wfkit::Trace& trace, double s, int L) {
    wfkit::FeatureTensor out = wfkit::FeatureTensor::zeros({2, L});
    for (const wfkit::Cell& cell : trace.cells) {
        for (int k = 0; k < L; ++k) {
            const double s0 = static_cast<double>(k) * s;
            const double s1 = static_cast<double>(k + 1) * s;
            if (s0 <= cell.timestamp && cell.timestamp < s1)
                out.data[static_cast<std::size_t>((cell.direction > 0 ? 0 : 1) * L + k)] += 1.0f;
        }
    }
    return out;
}

} // namespace testutil
