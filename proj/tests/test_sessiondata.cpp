#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <fstream>
#include <iterator>
#include <sstream>

#include "odup/error.hpp"
#include "odup/sessiondata.hpp"

using namespace odup;

namespace {

EventLog parse(const std::string& text) {
    std::istringstream in(text);
    return read_event_log(in);
}

std::vector<std::string> items_of(const RawSession& s) { return s.items; }

}  // namespace

TEST(EventLog, ParsesAndRoundTrips) {
    const EventLog log = parse("# header\nu1\ta\t10\nu1\tb\t20\r\n\nu2\tc\t5\n");
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log[1].item, "b");
    EXPECT_EQ(log[2].timestamp, 5);
    std::ostringstream out;
    write_event_log(out, log);
    const EventLog again = parse(out.str());
    ASSERT_EQ(again.size(), 3u);
    EXPECT_EQ(again[0].user, "u1");
}

TEST(EventLog, RejectsMalformedLines) {
    EXPECT_THROW(parse("u1\ta\n"), Error);
    EXPECT_THROW(parse("u1\ta\tnoon\n"), Error);
    EXPECT_THROW(parse("u1\ta\t-4\n"), Error);
}

TEST(EventLog, CommaDelimiter) {
    std::istringstream in("u,a,1\nu,b,2\n");
    EXPECT_EQ(read_event_log(in, ',').size(), 2u);
}

TEST(Sessionize, SplitsOnGap) {
    const EventLog log = parse("u\te1\t0\nu\te2\t3600\nu\te3\t72000\n");
    const auto s = sessionize(log, 8 * 3600);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(items_of(s[0]), (std::vector<std::string>{"e1", "e2"}));
    EXPECT_EQ(items_of(s[1]), (std::vector<std::string>{"e3"}));
}

TEST(Sessionize, SingleEvent) {
    const auto s = sessionize(parse("u\tx\t7\n"), 100);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].items.size(), 1u);
}

TEST(Sessionize, InterleavedUsersStaySeparate) {
    const auto s = sessionize(parse("a\t1\t0\nb\t2\t1\na\t3\t2\nb\t4\t3\n"), 100);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].user, "a");
    EXPECT_EQ(items_of(s[0]), (std::vector<std::string>{"1", "3"}));
    EXPECT_EQ(items_of(s[1]), (std::vector<std::string>{"2", "4"}));
}

TEST(Sessionize, InsensitiveToInputOrder) {
    EventLog log = parse("a\t1\t0\nb\t2\t1\na\t3\t2\nb\t4\t3\nc\t5\t90000\n");
    const auto ref = sessionize(log, 100);
    std::reverse(log.begin(), log.end());
    const auto rev = sessionize(log, 100);
    ASSERT_EQ(ref.size(), rev.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_EQ(ref[i].user, rev[i].user);
        EXPECT_EQ(ref[i].items, rev[i].items);
    }
}

TEST(Filter, DropsShortAndLongSessions) {
    std::vector<RawSession> raw;
    raw.push_back({"u", {"a"}, 0});
    raw.push_back({"u", {"a", "b"}, 1});
    raw.push_back({"u", std::vector<std::string>(51, "c"), 2});
    raw.push_back({"u", std::vector<std::string>(50, "d"), 3});
    const auto out = filter_and_index(raw, FilterConfig{});
    ASSERT_EQ(out.sessions.size(), 2u);
    EXPECT_EQ(out.sessions[0].items.size(), 2u);
    EXPECT_EQ(out.sessions[1].items.size(), 50u);
}

TEST(Filter, TopItemsBoundsVocabulary) {
    std::vector<RawSession> raw;
    for (int i = 0; i < 30; ++i) raw.push_back({"u", {std::to_string(i % 12), std::to_string((i * 7) % 12)}, i});
    FilterConfig cfg;
    cfg.top_items = 10;
    const auto out = filter_and_index(raw, cfg);
    EXPECT_EQ(out.vocab.size(), 10u);
    for (const auto& s : out.sessions)
        for (auto v : s.items) EXPECT_LT(v, 10u);
}

TEST(Filter, IndicesFollowFrequencyRank) {
    std::vector<RawSession> raw{{"u", {"rare", "common"}, 0}, {"u", {"common", "common"}, 1}};
    const auto out = filter_and_index(raw, FilterConfig{});
    EXPECT_EQ(out.vocab.id(0), "common");
    EXPECT_EQ(*out.vocab.find("rare"), 1u);
}

TEST(SlicePlan, SliceSizes) {
    const auto plan = SlicePlan::from_ratios({0.1, 0.2, 0.3, 0.4});
    EXPECT_EQ(plan.boundaries(100), (std::vector<std::size_t>{10, 30, 60, 100}));
}

TEST(SlicePlan, SingleSlice) {
    EXPECT_EQ(SlicePlan::from_ratios({3}).boundaries(17), std::vector<std::size_t>{17});
}

TEST(SlicePlan, GowallaCumulativeShares) {
    const auto cum = SlicePlan::from_ratios({1, 3, 6, 10, 15}).cumulative();
    const std::vector<double> expect{1.0 / 35, 4.0 / 35, 10.0 / 35, 20.0 / 35, 1.0};
    for (std::size_t i = 0; i < cum.size(); ++i) EXPECT_NEAR(cum[i], expect[i], 1e-15);
    EXPECT_EQ(cum.back(), 1.0);
}

TEST(SlicePlan, RejectsNonPositiveRatios) {
    EXPECT_THROW(SlicePlan::from_ratios({1, 0}), Error);
    EXPECT_THROW(SlicePlan::from_ratios({}), Error);
}

TEST(SlicePlan, BoundariesStrictlyIncrease) {
    const auto b = SlicePlan::from_ratios({1, 3, 6, 10, 15}).boundaries(40);
    for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LT(b[i - 1], b[i]);
    EXPECT_EQ(b.back(), 40u);
}

TEST(Augment, PrefixPairs) {
    const auto ds = augment_split({Session{{4, 5, 6}, 0}, Session{{1, 2}, 1}}, 10);
    ASSERT_EQ(ds.pairs.size(), 3u);
    EXPECT_EQ(ds.pairs[0], (LabeledPair{{4}, 5}));
    EXPECT_EQ(ds.pairs[1], (LabeledPair{{4, 5}, 6}));
    EXPECT_EQ(ds.pairs[2], (LabeledPair{{1}, 2}));
}

TEST(Augment, CountsLengthMinusOne) {
    Session s{{0, 1, 2, 3, 4, 5, 6}, 0};
    EXPECT_EQ(augment_split({s}, 7).size(), 6u);
}

TEST(Slices, CumulativeAndNested) {
    std::vector<Session> sessions;
    for (int i = 0; i < 100; ++i) sessions.push_back({{ItemIndex(i % 5), ItemIndex((i + 1) % 5)}, i});
    const auto slices = temporal_slices(sessions, SlicePlan::from_ratios({0.1, 0.2, 0.3, 0.4}), 5);
    ASSERT_EQ(slices.size(), 4u);
    EXPECT_EQ(slices[0].size(), 10u);
    EXPECT_EQ(slices[3].size(), 100u);
    for (std::size_t t = 1; t < slices.size(); ++t)
        EXPECT_TRUE(std::equal(slices[t - 1].pairs.begin(), slices[t - 1].pairs.end(), slices[t].pairs.begin()));
}

TEST(Split, HoldsOutTemporalTail) {
    std::vector<Session> sessions;
    for (int i = 0; i < 20; ++i) sessions.push_back({{0, 1}, 100 - i});
    const auto split = split_test(sessions, 0.1);
    ASSERT_EQ(split.test.size(), 2u);
    for (const auto& s : split.test)
        for (const auto& r : split.train) EXPECT_GE(s.start, r.start);
}

TEST(DatasetCache, RoundTripAndCorruption) {
    std::vector<Session> sessions;
    for (int i = 0; i < 60; ++i) sessions.push_back({{ItemIndex(i % 9), ItemIndex((i * 5) % 9), 3}, i});
    const auto data = prepare_slices(sessions, 9, SlicePlan::from_ratios({1, 1}), 0.2);
    const auto path = std::filesystem::temp_directory_path() / "odup_cache_test.odds";
    save_dataset_cache(path, data);
    const auto back = load_dataset_cache(path);
    ASSERT_EQ(back.slices.size(), 2u);
    EXPECT_EQ(back.slices[1].pairs, data.slices[1].pairs);
    EXPECT_EQ(back.test.pairs, data.test.pairs);

    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>(std::istreambuf_iterator<char>(in), {});
    }();
    bytes[bytes.size() / 2] ^= 0x10;
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    EXPECT_THROW(load_dataset_cache(path), Error);
    std::filesystem::remove(path);
}

namespace {

SynthData make_synth(double drift, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.drift = drift;
    cfg.plan = SlicePlan::from_ratios({1, 1, 1, 1, 1});
    Rng rng(seed);
    return synth_generate(rng, cfg);
}

std::vector<std::vector<double>> counts_by_segment(const SynthData& d, std::size_t segments) {
    std::vector<std::vector<double>> counts(segments, std::vector<double>(d.vocab_size, 0.0));
    for (std::size_t s = 0; s < d.sessions.size(); ++s)
        for (auto v : d.sessions[s].items) counts[d.segment_of_session[s]][v] += 1;
    return counts;
}

// Opening item of every session; sessions are independent draws, events within one are not.
std::vector<std::vector<double>> first_items_by_segment(const SynthData& d, std::size_t segments) {
    std::vector<std::vector<double>> counts(segments, std::vector<double>(d.vocab_size, 0.0));
    for (std::size_t s = 0; s < d.sessions.size(); ++s) counts[d.segment_of_session[s]][d.sessions[s].items.front()] += 1;
    return counts;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double sa = 0, sb = 0, tv = 0;
    for (double x : a) sa += x;
    for (double x : b) sb += x;
    for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] / sa - b[i] / sb);
    return tv / 2;
}

}  // namespace

TEST(Synth, DeterministicPerSeed) {
    const auto a = make_synth(0.3, 8), b = make_synth(0.3, 8);
    ASSERT_EQ(a.sessions.size(), b.sessions.size());
    for (std::size_t i = 0; i < a.sessions.size(); ++i) EXPECT_EQ(a.sessions[i].items, b.sessions[i].items);
}

TEST(Synth, RespectsLengthsAndVocabulary) {
    const auto d = make_synth(0.2, 1);
    EXPECT_EQ(d.sessions.size(), 4000u);
    for (const auto& s : d.sessions) {
        EXPECT_GE(s.items.size(), 2u);
        EXPECT_LE(s.items.size(), 8u);
        for (auto v : s.items) EXPECT_LT(v, d.vocab_size);
    }
    for (std::size_t i = 1; i < d.sessions.size(); ++i) EXPECT_LE(d.sessions[i - 1].start, d.sessions[i].start);
}

TEST(Synth, DriftFreeSegmentsAreHomogeneous) {
    const auto d = make_synth(0.0, 21);
    const auto counts = first_items_by_segment(d, 5);
    std::vector<double> pooled(d.vocab_size, 0.0);
    for (const auto& seg : counts)
        for (std::size_t v = 0; v < d.vocab_size; ++v) pooled[v] += seg[v];
    std::vector<std::size_t> order(d.vocab_size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pooled[a] > pooled[b]; });
    // Contingency table over the 8 most common opening items plus a pooled remainder.
    const std::size_t top = 8;
    std::vector<std::vector<double>> table(5, std::vector<double>(top + 1, 0.0));
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t r = 0; r < d.vocab_size; ++r) table[s][std::min(r, top)] += counts[s][order[r]];
    std::vector<double> row(5, 0), col(top + 1, 0);
    double total = 0;
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t c = 0; c <= top; ++c) {
            row[s] += table[s][c];
            col[c] += table[s][c];
            total += table[s][c];
        }
    double chi2 = 0;
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t c = 0; c <= top; ++c) {
            const double e = row[s] * col[c] / total;
            ASSERT_GE(e, 5.0);
            chi2 += (table[s][c] - e) * (table[s][c] - e) / e;
        }
    const boost::math::chi_squared dist(static_cast<double>(4 * top));
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(Synth, MoreDriftMovesFrequenciesFurther) {
    const auto lo = counts_by_segment(make_synth(0.1, 21), 5);
    const auto hi = counts_by_segment(make_synth(0.5, 21), 5);
    EXPECT_GT(total_variation(hi.front(), hi.back()), total_variation(lo.front(), lo.back()));
}

TEST(Synth, RejectsDegenerateConfigs) {
    SynthConfig cfg;
    cfg.plan = SlicePlan::from_ratios({1});
    cfg.vocab_size = 10;
    Rng rng(0);
    EXPECT_THROW(synth_generate(rng, cfg), Error);
}

TEST(Synth, EventLogRendering) {
    const auto d = make_synth(0.0, 2);
    const auto log = synth_to_event_log(d);
    std::size_t events = 0;
    for (const auto& s : d.sessions) events += s.items.size();
    EXPECT_EQ(log.size(), events);
}
