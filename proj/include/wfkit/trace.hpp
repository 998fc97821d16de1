#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wfkit/error.hpp"

namespace wfkit {

/// One Tor cell: arrival time in seconds and direction (+1 outgoing, -1 incoming).
struct Cell {
    double timestamp = 0.0;
    int direction = 1;

    bool operator==(const Cell&) const = default;
};

constexpr int kUnlabeled = -1;

/// Timestamp-sorted cell sequence from one page load. Normalized so the first
/// cell sits at t = 0; ties keep file order.
struct Trace {
    std::vector<Cell> cells;
    int label = kUnlabeled;

    std::size_t size() const { return cells.size(); }
    bool empty() const { return cells.empty(); }

    /// Load time: timestamp of the last cell (0 for empty traces).
    double duration() const { return cells.empty() ? 0.0 : cells.back().timestamp; }
};

struct ManifestEntry {
    std::string path; // relative to DatasetManifest::root
    int label = kUnlabeled;
};

/// Dataset index. Monitored entries carry labels in [0, C); non-monitored
/// entries carry label C.
struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;
    int class_count = 0;
    bool has_nonmonitored = false;

    std::string full_path(std::size_t i) const {
        return (std::filesystem::path(root) / entries[i].path).string();
    }
    int nonmonitored_label() const { return class_count; }
};

namespace detail {

// Timestamps may jitter backwards by up to 1 us (logger noise); larger
// violations are treated as corrupt input.
constexpr double kOrderingToleranceSec = 1e-6;

inline bool parse_double(std::string_view s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

} // namespace detail

/// Parses the on-disk trace format: one cell per line, "t<TAB>d" with
/// d in {"1","-1"}. A third tab-separated field ("r"/"d", defense provenance)
/// is accepted and ignored here. Timestamps are shifted so the trace starts
/// at 0; backwards jitter within 1 us is clamped to the previous timestamp.
inline Trace parse_trace(std::string_view text) {
    Trace trace;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        const std::size_t tab1 = line.find('\t');
        if (tab1 == std::string_view::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected \"timestamp<TAB>direction\"");
        std::string_view ts_field = line.substr(0, tab1);
        std::string_view rest = line.substr(tab1 + 1);
        std::string_view dir_field = rest;
        const std::size_t tab2 = rest.find('\t');
        if (tab2 != std::string_view::npos) {
            dir_field = rest.substr(0, tab2);
            std::string_view prov = rest.substr(tab2 + 1);
            if (prov != "r" && prov != "d")
                throw ParseError("line " + std::to_string(line_no) + ": bad provenance field \"" +
                                 std::string(prov) + "\" (want \"r\" or \"d\")");
        }

        double t;
        if (!detail::parse_double(ts_field, t) || !std::isfinite(t))
            throw ParseError("line " + std::to_string(line_no) + ": bad timestamp \"" + std::string(ts_field) + "\"");
        if (t < 0.0)
            throw ParseError("line " + std::to_string(line_no) + ": negative timestamp");

        int d;
        if (dir_field == "1")
            d = 1;
        else if (dir_field == "-1")
            d = -1;
        else
            throw ParseError("line " + std::to_string(line_no) + ": bad direction \"" + std::string(dir_field) +
                             "\" (want 1 or -1)");

        if (!trace.cells.empty()) {
            const double prev = trace.cells.back().timestamp;
            if (t < prev) {
                if (prev - t > detail::kOrderingToleranceSec)
                    throw OrderingError("line " + std::to_string(line_no) + ": timestamp decreases by " +
                                        std::to_string(prev - t) + " s (tolerance 1e-6)");
                t = prev; // clamp logger jitter, keep file order
            }
        }
        trace.cells.push_back(Cell{t, d});
    }

    if (!trace.cells.empty()) {
        const double t0 = trace.cells.front().timestamp;
        if (t0 != 0.0)
            for (Cell& c : trace.cells) c.timestamp -= t0;
    }
    return trace;
}

/// Inter-arrival times: delta[0] = 0, delta[i] = t[i] - t[i-1].
inline std::vector<double> inter_arrival_times(const Trace& trace) {
    std::vector<double> deltas(trace.cells.size());
    for (std::size_t i = 1; i < trace.cells.size(); ++i)
        deltas[i] = trace.cells[i].timestamp - trace.cells[i - 1].timestamp;
    return deltas;
}

/// Serializes a trace in the on-disk format (timestamps at 6 decimal places).
inline std::string serialize_trace(const Trace& trace) {
    std::string out;
    out.reserve(trace.cells.size() * 16);
    char buf[64];
    for (const Cell& c : trace.cells) {
        const int n = std::snprintf(buf, sizeof buf, "%.6f\t%d\n", c.timestamp, c.direction);
        out.append(buf, static_cast<std::size_t>(n));
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return data;
}

inline void write_file(const std::string& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed on " + path);
}

inline Trace load_trace(const std::string& path) {
    try {
        return parse_trace(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    } catch (const OrderingError& e) {
        throw OrderingError(path + ": " + e.what());
    }
}

namespace detail {

inline bool parse_uint(std::string_view s, int& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && out >= 0;
}

} // namespace detail

/// Scans a dataset directory for trace files named "<class>-<instance>.cell"
/// (monitored) or "<id>.cell" (non-monitored). Entry order is sorted by path,
/// so repeated scans of the same tree are identical.
inline DatasetManifest scan_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root);

    struct Parsed {
        std::string name;
        int cls = kUnlabeled; // kUnlabeled => non-monitored
        int instance = 0;
    };
    std::vector<Parsed> files;
    for (const auto& ent : fs::directory_iterator(root)) {
        if (!ent.is_regular_file()) continue;
        const fs::path& p = ent.path();
        if (p.extension() != ".cell") continue;
        const std::string stem = p.stem().string();
        Parsed parsed;
        parsed.name = p.filename().string();
        const std::size_t dash = stem.find('-');
        if (dash == std::string::npos) {
            if (!detail::parse_uint(stem, parsed.instance))
                throw DataError("unrecognized trace file name: " + parsed.name);
        } else {
            if (!detail::parse_uint(std::string_view(stem).substr(0, dash), parsed.cls) ||
                !detail::parse_uint(std::string_view(stem).substr(dash + 1), parsed.instance))
                throw DataError("unrecognized trace file name: " + parsed.name);
        }
        files.push_back(std::move(parsed));
    }
    if (files.empty()) throw DataError("no .cell files in " + root);

    std::sort(files.begin(), files.end(), [](const Parsed& a, const Parsed& b) { return a.name < b.name; });

    int max_class = -1;
    std::map<std::pair<int, int>, std::string> seen;
    for (const Parsed& f : files) {
        if (f.cls == kUnlabeled) continue;
        auto [it, inserted] = seen.emplace(std::make_pair(f.cls, f.instance), f.name);
        if (!inserted)
            throw DataError("duplicate (class, instance) pair: " + it->second + " vs " + f.name);
        max_class = std::max(max_class, f.cls);
    }

    DatasetManifest manifest;
    manifest.root = root;
    manifest.class_count = max_class + 1;
    for (const Parsed& f : files) {
        ManifestEntry e;
        e.path = f.name;
        if (f.cls == kUnlabeled) {
            manifest.has_nonmonitored = true;
            e.label = manifest.class_count;
        } else {
            e.label = f.cls;
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

/// Writes the manifest as CSV ("path,label" with header), paths relative to
/// the manifest root so the file is location-independent.
inline void write_manifest_csv(const DatasetManifest& manifest, const std::string& csv_path) {
    std::string out = "path,label\n";
    for (const ManifestEntry& e : manifest.entries) out += e.path + "," + std::to_string(e.label) + "\n";
    write_file(csv_path, out);
}

/// Reads a manifest CSV back. Class count and the non-monitored flag are
/// recovered from the file-name convention, which is authoritative.
inline DatasetManifest read_manifest_csv(const std::string& csv_path) {
    const std::string text = read_file(csv_path);
    DatasetManifest manifest;
    manifest.root = std::filesystem::path(csv_path).parent_path().string();
    if (manifest.root.empty()) manifest.root = ".";

    std::size_t pos = 0;
    std::size_t line_no = 0;
    int max_class = -1;
    std::vector<std::string> names;
    while (pos < text.size()) {
        ++line_no;
        std::size_t eol = text.find('\n', pos);
        std::string_view line(text.data() + pos, (eol == std::string::npos ? text.size() : eol) - pos);
        pos = eol == std::string::npos ? text.size() : eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "path,label")
                throw ParseError(csv_path + ": expected header \"path,label\"");
            continue;
        }
        const std::size_t comma = line.rfind(',');
        if (comma == std::string_view::npos)
            throw ParseError(csv_path + ": line " + std::to_string(line_no) + ": missing comma");
        names.emplace_back(line.substr(0, comma));
        const std::string stem = std::filesystem::path(names.back()).stem().string();
        const std::size_t dash = stem.find('-');
        if (dash != std::string::npos) {
            int cls;
            if (detail::parse_uint(std::string_view(stem).substr(0, dash), cls))
                max_class = std::max(max_class, cls);
        }
    }
    if (names.empty()) throw DataError(csv_path + ": empty manifest");

    manifest.class_count = max_class + 1;
    for (const std::string& name : names) {
        ManifestEntry e;
        e.path = name;
        const std::string stem = std::filesystem::path(name).stem().string();
        if (stem.find('-') == std::string::npos) {
            manifest.has_nonmonitored = true;
            e.label = manifest.class_count;
        } else {
            int cls = 0;
            detail::parse_uint(std::string_view(stem).substr(0, stem.find('-')), cls);
            e.label = cls;
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

} // namespace wfkit
