#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <map>

#include "helpers.hpp"
#include "wfkit/defense.hpp"
#include "wfkit/feature.hpp"
#include "wfkit/rng.hpp"

using namespace wfkit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Trace make_trace(std::initializer_list<Cell> cells) {
    Trace t;
    t.cells = cells;
    return t;
}

std::vector<DefendedCell> cells_in_direction(const DefendedTrace& d, int dir) {
    std::vector<DefendedCell> out;
    for (const DefendedCell& c : d.cells)
        if (c.direction == dir) out.push_back(c);
    return out;
}

// Checks real-cell conservation: every source cell emitted exactly once, per
// direction in source order, never earlier than it arrived.
void check_conservation(const Trace& src, const DefendedTrace& def, bool exact_times) {
    std::vector<int> seen(src.cells.size(), 0);
    std::map<int, int> last_origin_per_dir;
    for (const DefendedCell& c : def.cells) {
        if (!c.real) continue;
        REQUIRE(c.origin_index >= 0);
        REQUIRE(static_cast<std::size_t>(c.origin_index) < src.cells.size());
        seen[static_cast<std::size_t>(c.origin_index)] += 1;
        const Cell& orig = src.cells[static_cast<std::size_t>(c.origin_index)];
        REQUIRE(c.direction == orig.direction);
        if (exact_times)
            REQUIRE(c.timestamp == orig.timestamp);
        else
            REQUIRE(c.timestamp >= orig.timestamp);
        auto [it, inserted] = last_origin_per_dir.emplace(c.direction, c.origin_index);
        if (!inserted) {
            REQUIRE(it->second < c.origin_index);
            it->second = c.origin_index;
        }
    }
    for (int s : seen) REQUIRE(s == 1);
}

} // namespace

TEST_CASE("front emits one dummy per direction at the minimum budget") {
    const Trace t = make_trace({{0.0, 1}, {0.5, -1}});
    FrontConfig cfg;
    cfg.n_min = cfg.n_max = 1;
    const DefendedTrace d = front(t, cfg, 9);
    std::size_t dummies = 0;
    for (const DefendedCell& c : d.cells) dummies += c.real ? 0 : 1;
    CHECK(dummies == 2);
}

TEST_CASE("front validates its ranges") {
    FrontConfig cfg;
    cfg.n_min = 0;
    cfg.n_max = 0;
    CHECK_THROWS_AS(front(Trace{}, cfg, 1), ConfigError);
    cfg = FrontConfig{};
    cfg.w_min = 0.0;
    CHECK_THROWS_AS(front(Trace{}, cfg, 1), ConfigError);
    cfg = FrontConfig{};
    cfg.n_min = 5;
    cfg.n_max = 2;
    CHECK_THROWS_AS(front(Trace{}, cfg, 1), ConfigError);
}

TEST_CASE("front never moves real cells") {
    Rng rng(31);
    for (int iter = 0; iter < 40; ++iter) {
        const Trace t = testutil::random_trace(rng, 120, 0.02, 50);
        FrontConfig cfg;
        cfg.n_min = 1 + static_cast<int>(rng.uniform_int(0, 20));
        cfg.n_max = cfg.n_min + static_cast<int>(rng.uniform_int(0, 50));
        const DefendedTrace d = front(t, cfg, rng.next_u64());
        check_conservation(t, d, true);

        // the real subsequence is the input trace verbatim
        std::vector<Cell> reals;
        for (const DefendedCell& c : d.cells)
            if (c.real) reals.push_back({c.timestamp, c.direction});
        REQUIRE(reals == t.cells);
    }
}

TEST_CASE("front dummy timing follows the Rayleigh scale") {
    const Trace t = make_trace({{0.0, 1}});
    FrontConfig cfg;
    cfg.n_min = cfg.n_max = 100;
    cfg.w_min = cfg.w_max = 2.0;
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const DefendedTrace d = front(t, cfg, seed);
        std::int64_t per_dir[2] = {0, 0};
        for (const DefendedCell& c : d.cells) {
            if (c.real) continue;
            per_dir[c.direction > 0 ? 0 : 1] += 1;
            sum += c.timestamp;
            ++count;
        }
        REQUIRE(per_dir[0] == 100);
        REQUIRE(per_dir[1] == 100);
    }
    const double mean = sum / static_cast<double>(count);
    const double want = 2.0 * std::sqrt(3.14159265358979323846 / 2.0);
    CHECK_THAT(mean, WithinRel(want, 0.05));
}

TEST_CASE("tamaraw pads 150 promptly arriving incoming cells to 200") {
    Trace t;
    for (int i = 0; i < 150; ++i) t.cells.push_back({i * 0.001, -1});
    const DefendedTrace d = tamaraw(t, TamarawConfig{});
    const std::vector<DefendedCell> in = cells_in_direction(d, -1);
    CHECK(in.size() == 200);
    std::size_t reals = 0;
    for (const DefendedCell& c : in) reals += c.real ? 1 : 0;
    CHECK(reals == 150);
}

TEST_CASE("tamaraw queue walk matches the hand simulation") {
    const Trace t = make_trace({{0.0, 1}, {0.05, 1}});
    TamarawConfig cfg;
    cfg.rho_out = 0.04;
    cfg.pad_multiple = 2;
    const DefendedTrace d = tamaraw(t, cfg);
    const std::vector<DefendedCell> out = cells_in_direction(d, 1);
    REQUIRE(out.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) REQUIRE(out[k].timestamp == static_cast<double>(k) * 0.04);
    CHECK(out[0].real);
    CHECK_FALSE(out[1].real); // second real arrives at 0.05, after the 0.04 tick
    CHECK(out[2].real);
    CHECK_FALSE(out[3].real);
}

TEST_CASE("tamaraw pads an empty trace to one full block per direction") {
    TamarawConfig cfg;
    cfg.pad_multiple = 5;
    const DefendedTrace d = tamaraw(Trace{}, cfg);
    const std::vector<DefendedCell> out = cells_in_direction(d, 1);
    const std::vector<DefendedCell> in = cells_in_direction(d, -1);
    REQUIRE(out.size() == 5);
    REQUIRE(in.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(out[k].timestamp == static_cast<double>(k) * cfg.rho_out);
        CHECK(in[k].timestamp == static_cast<double>(k) * cfg.rho_in);
        CHECK_FALSE(out[k].real);
        CHECK_FALSE(in[k].real);
    }
}

TEST_CASE("tamaraw counts are multiples of the pad and ticks are exact") {
    Rng rng(77);
    for (int iter = 0; iter < 50; ++iter) {
        const Trace t = testutil::random_trace(rng, 150, 0.01, 40);
        TamarawConfig cfg;
        cfg.rho_out = rng.uniform(0.005, 0.08);
        cfg.rho_in = rng.uniform(0.005, 0.08);
        cfg.pad_multiple = 1 + static_cast<int>(rng.uniform_int(0, 8));
        const DefendedTrace d = tamaraw(t, cfg);
        check_conservation(t, d, false);
        for (int dir : {1, -1}) {
            const std::vector<DefendedCell> stream = cells_in_direction(d, dir);
            REQUIRE(!stream.empty());
            REQUIRE(stream.size() % static_cast<std::size_t>(cfg.pad_multiple) == 0);
            const double rho = dir == 1 ? cfg.rho_out : cfg.rho_in;
            for (std::size_t k = 0; k < stream.size(); ++k)
                REQUIRE(stream[k].timestamp == static_cast<double>(k) * rho);
        }
    }
}

TEST_CASE("decay shaper with no decay emits at the constant-rate grid") {
    Trace t;
    for (int i = 0; i < 32; ++i) t.cells.push_back({0.0, -1});
    DecayShaperConfig cfg;
    cfg.decay = 1.0;
    cfg.rate0 = 8.0;
    cfg.surge_threshold = 1e9;
    const DefendedTrace d = decay_shaper(t, cfg);
    const std::vector<DefendedCell> in = cells_in_direction(d, -1);
    REQUIRE(in.size() == 32);
    for (std::size_t j = 0; j < in.size(); ++j) {
        REQUIRE(in[j].timestamp == static_cast<double>(j + 1) / cfg.rate0);
        REQUIRE(in[j].real);
    }
    // power-of-two rate, so consecutive gaps are exactly 1/rate0
    for (std::size_t j = 1; j < in.size(); ++j)
        REQUIRE(in[j].timestamp - in[j - 1].timestamp == 1.0 / cfg.rate0);
}

TEST_CASE("decay shaper of an empty trace is empty") {
    CHECK(decay_shaper(Trace{}, DecayShaperConfig{}).cells.empty());
}

TEST_CASE("decay shaper tick times match a numeric inversion oracle") {
    Trace t;
    for (int i = 0; i < 3; ++i) t.cells.push_back({0.0, -1});
    DecayShaperConfig cfg;
    cfg.rate0 = 10.0;
    cfg.decay = 0.5;
    cfg.surge_threshold = 1e9;
    const DefendedTrace d = decay_shaper(t, cfg);
    REQUIRE(d.cells.size() == 3);

    // invert the cumulative rate integral rate0 * (decay^t - 1) / ln(decay)
    auto cum = [&](double u) { return cfg.rate0 * (std::pow(cfg.decay, u) - 1.0) / std::log(cfg.decay); };
    for (int k = 1; k <= 3; ++k) {
        double lo = 0.0, hi = 50.0;
        for (int step = 0; step < 200; ++step) {
            const double mid = 0.5 * (lo + hi);
            (cum(mid) < static_cast<double>(k) ? lo : hi) = mid;
        }
        REQUIRE_THAT(d.cells[static_cast<std::size_t>(k - 1)].timestamp, WithinAbs(0.5 * (lo + hi), 1e-9));
    }
}

TEST_CASE("decay shaper conserves real cells and paces outgoing") {
    Rng rng(55);
    for (int iter = 0; iter < 30; ++iter) {
        const Trace t = testutil::random_trace(rng, 120, 0.01, 40);
        const DefendedTrace d = decay_shaper(t, DecayShaperConfig{});
        check_conservation(t, d, false);
    }
}

TEST_CASE("decay shaper validates parameters") {
    DecayShaperConfig cfg;
    cfg.rate0 = 0.0;
    CHECK_THROWS_AS(decay_shaper(Trace{}, cfg), ConfigError);
    cfg = DecayShaperConfig{};
    cfg.decay = 1.5;
    CHECK_THROWS_AS(decay_shaper(Trace{}, cfg), ConfigError);
    cfg = DecayShaperConfig{};
    cfg.out_ratio = 0.0;
    CHECK_THROWS_AS(decay_shaper(Trace{}, cfg), ConfigError);
}

TEST_CASE("defenses are deterministic given the seed") {
    Rng rng(123);
    const Trace t = testutil::random_trace(rng, 100, 0.01, 30);
    CHECK(serialize_defended(front(t, FrontConfig{}, 42)) == serialize_defended(front(t, FrontConfig{}, 42)));
    CHECK(serialize_defended(front(t, FrontConfig{}, 42)) != serialize_defended(front(t, FrontConfig{}, 43)));
    CHECK(serialize_defended(tamaraw(t, TamarawConfig{})) == serialize_defended(tamaraw(t, TamarawConfig{})));
    CHECK(serialize_defended(decay_shaper(t, DecayShaperConfig{})) ==
          serialize_defended(decay_shaper(t, DecayShaperConfig{})));
}

TEST_CASE("tie ordering puts real cells before coincident dummies") {
    std::vector<DefendedCell> cells;
    cells.push_back({1.0, -1, false, -1});
    cells.push_back({1.0, 1, true, 0});
    cells.push_back({0.5, -1, false, -1});
    detail::sort_defended(cells);
    CHECK(cells[0].timestamp == 0.5);
    CHECK(cells[1].real);
    CHECK_FALSE(cells[2].real);

    // tied reals stay in source order, tied dummies go outgoing first
    cells = {{2.0, -1, true, 3}, {2.0, 1, true, 5}, {2.0, -1, false, -1}, {2.0, 1, false, -1}};
    detail::sort_defended(cells);
    CHECK(cells[0].origin_index == 3);
    CHECK(cells[1].origin_index == 5);
    CHECK(cells[2].direction == 1);
    CHECK(cells[3].direction == -1);
}

TEST_CASE("overheads of an identity defense are zero") {
    Trace t;
    t.cells = {{0.0, 1}, {1.0, -1}, {2.0, -1}};
    DefendedTrace d;
    for (std::size_t i = 0; i < t.cells.size(); ++i)
        d.cells.push_back({t.cells[i].timestamp, t.cells[i].direction, true, static_cast<int>(i)});
    const Overheads oh = compute_overheads({t}, {d});
    CHECK(oh.data == 0.0);
    CHECK(oh.time == 0.0);
}

TEST_CASE("overheads count dummies against reals across the dataset") {
    Trace t;
    for (int i = 0; i < 100; ++i) t.cells.push_back({i * 0.01, 1});
    DefendedTrace d;
    for (int i = 0; i < 100; ++i) d.cells.push_back({i * 0.01, 1, true, i});
    for (int i = 0; i < 76; ++i) d.cells.push_back({i * 0.005, -1, false, -1});
    detail::sort_defended(d.cells);
    const Overheads oh = compute_overheads({t}, {d});
    CHECK(oh.data == 0.76);
    CHECK(oh.time == 0.0);
}

TEST_CASE("time overhead measures the last real cell against the original duration") {
    Trace t;
    t.cells = {{0.0, 1}, {10.0, -1}};
    DefendedTrace d;
    d.cells = {{0.0, 1, true, 0}, {12.3, -1, true, 1}, {15.0, -1, false, -1}};
    const Overheads oh = compute_overheads({t}, {d});
    CHECK(oh.data == 0.5);
    CHECK_THAT(oh.time, WithinAbs(0.23, 1e-12));
}

TEST_CASE("overheads reject degenerate inputs") {
    CHECK_THROWS_AS(compute_overheads({}, {}), DataError);
    CHECK_THROWS_AS(compute_overheads({Trace{}}, {DefendedTrace{}}), DataError);

    Trace t;
    t.cells = {{0.0, 1}};
    DefendedTrace lost; // real cell went missing
    CHECK_THROWS_AS(compute_overheads({t}, {lost}), DataError);
}

TEST_CASE("defended traces strip back into featurizable traces") {
    Rng rng(9);
    const Trace t = testutil::random_trace(rng, 80, 0.02, 20);
    const DefendedTrace d = tamaraw(t, TamarawConfig{});
    const Trace stripped = d.to_trace();
    for (std::size_t i = 1; i < stripped.cells.size(); ++i)
        REQUIRE(stripped.cells[i].timestamp >= stripped.cells[i - 1].timestamp);
    const IatConfig cfg = IatConfig::with_defaults(0.044, 64, 5);
    const FeatureTensor x = iat_histogram(stripped, cfg);
    CHECK(x.shape == std::vector<std::int64_t>{5, 2, 64});

    const Trace reparsed = parse_trace(serialize_defended(d));
    CHECK(reparsed.cells.size() == d.cells.size());
}

TEST_CASE("defense names parse") {
    CHECK(parse_defense("front") == DefenseKind::front);
    CHECK(parse_defense("tamaraw") == DefenseKind::tamaraw);
    CHECK(parse_defense("decay_shaper") == DefenseKind::decay_shaper);
    CHECK_THROWS_AS(parse_defense("wtfpad"), ConfigError);
}
