#include "odup/sessiondata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "odup/bytes.hpp"
#include "odup/error.hpp"

namespace odup {

namespace {

[[noreturn]] void data_error(const std::string& what) { throw Error(ErrorKind::data, what); }

// Ranks keys by descending count, ties by first appearance.
template <typename Key>
std::vector<Key> rank_by_frequency(const std::vector<Key>& first_seen, const std::map<Key, std::size_t>& counts) {
    std::vector<std::size_t> order(first_seen.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return counts.at(first_seen[a]) > counts.at(first_seen[b]);
    });
    std::vector<Key> ranked;
    ranked.reserve(order.size());
    for (auto i : order) ranked.push_back(first_seen[i]);
    return ranked;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> ids) : ids_(std::move(ids)) {
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const bool inserted = index_.emplace(ids_[i], static_cast<ItemIndex>(i)).second;
        require(inserted, "vocabulary contains duplicate id '" + ids_[i] + "'");
    }
}

std::optional<ItemIndex> Vocabulary::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

SlicePlan SlicePlan::from_ratios(const std::vector<double>& ratios) {
    require(!ratios.empty(), "slice plan needs at least one slice");
    double total = 0.0;
    for (double r : ratios) {
        require(std::isfinite(r) && r > 0.0, "slice ratios must be positive");
        total += r;
    }
    SlicePlan plan;
    plan.fractions_.reserve(ratios.size());
    for (double r : ratios) plan.fractions_.push_back(r / total);
    return plan;
}

std::vector<double> SlicePlan::cumulative() const {
    std::vector<double> cum(fractions_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < fractions_.size(); ++i) {
        acc += fractions_[i];
        cum[i] = acc;
    }
    if (!cum.empty()) cum.back() = 1.0;
    return cum;
}

std::vector<std::size_t> SlicePlan::boundaries(std::size_t n) const {
    const std::size_t z = fractions_.size();
    require(z >= 1, "slice plan is empty");
    if (n < z)
        data_error("cannot cut " + std::to_string(n) + " sessions into " + std::to_string(z) + " slices");
    const auto cum = cumulative();
    std::vector<std::size_t> bounds(z);
    for (std::size_t t = 0; t < z; ++t) {
        auto count = static_cast<std::size_t>(std::llround(cum[t] * static_cast<double>(n)));
        // Every slice must add at least one session and leave room for the ones after it.
        count = std::max(count, t == 0 ? std::size_t{1} : bounds[t - 1] + 1);
        count = std::min(count, n - (z - 1 - t));
        bounds[t] = count;
    }
    bounds.back() = n;
    return bounds;
}

EventLog read_event_log(std::istream& in, char delimiter) {
    EventLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, delimiter)) cols.push_back(col);
        if (cols.size() < 3) data_error("event log line " + std::to_string(lineno) + ": expected 3 columns");
        Event e{cols[0], cols[1], 0};
        try {
            std::size_t used = 0;
            e.timestamp = std::stoll(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            data_error("event log line " + std::to_string(lineno) + ": bad timestamp '" + cols[2] + "'");
        }
        if (e.timestamp < 0) data_error("event log line " + std::to_string(lineno) + ": negative timestamp");
        log.push_back(std::move(e));
    }
    return log;
}

EventLog read_event_log(const std::filesystem::path& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open event log " + path.string());
    return read_event_log(in, delimiter);
}

void write_event_log(std::ostream& out, const EventLog& log, char delimiter) {
    for (const auto& e : log) out << e.user << delimiter << e.item << delimiter << e.timestamp << '\n';
}

std::vector<RawSession> sessionize(const EventLog& log, std::int64_t gap) {
    require(gap > 0, "sessionize: gap must be positive");
    std::vector<const Event*> order;
    order.reserve(log.size());
    for (const auto& e : log) order.push_back(&e);
    std::sort(order.begin(), order.end(), [](const Event* a, const Event* b) {
        return std::tie(a->user, a->timestamp, a->item) < std::tie(b->user, b->timestamp, b->item);
    });

    std::vector<RawSession> sessions;
    const Event* prev = nullptr;
    for (const Event* e : order) {
        if (prev == nullptr || prev->user != e->user || e->timestamp - prev->timestamp > gap) {
            sessions.push_back(RawSession{e->user, {}, e->timestamp});
        }
        sessions.back().items.push_back(e->item);
        prev = e;
    }
    std::stable_sort(sessions.begin(), sessions.end(), [](const RawSession& a, const RawSession& b) {
        return std::tie(a.start, a.user) < std::tie(b.start, b.user);
    });
    return sessions;
}

IndexedSessions filter_and_index(const std::vector<RawSession>& sessions, const FilterConfig& cfg) {
    require(cfg.min_len >= 2, "min_len must be at least 2");
    require(cfg.max_len >= cfg.min_len, "max_len must be at least min_len");
    auto in_range = [&](std::size_t len) { return len >= cfg.min_len && len <= cfg.max_len; };

    std::vector<RawSession> kept;
    for (const auto& s : sessions)
        if (in_range(s.items.size())) kept.push_back(s);

    auto count_items = [](const std::vector<RawSession>& ss, std::vector<std::string>& first_seen,
                          std::map<std::string, std::size_t>& counts) {
        first_seen.clear();
        counts.clear();
        for (const auto& s : ss)
            for (const auto& it : s.items)
                if (counts[it]++ == 0) first_seen.push_back(it);
    };

    std::vector<std::string> first_seen;
    std::map<std::string, std::size_t> counts;
    if (cfg.top_items) {
        count_items(kept, first_seen, counts);
        auto ranked = rank_by_frequency(first_seen, counts);
        if (ranked.size() > *cfg.top_items) ranked.resize(*cfg.top_items);
        std::map<std::string, bool> allowed;
        for (auto& id : ranked) allowed[id] = true;
        std::vector<RawSession> restricted;
        for (auto& s : kept) {
            RawSession r{s.user, {}, s.start};
            for (auto& it : s.items)
                if (allowed.count(it)) r.items.push_back(it);
            if (in_range(r.items.size())) restricted.push_back(std::move(r));
        }
        kept = std::move(restricted);
    }
    if (kept.empty()) data_error("no sessions left after filtering");

    count_items(kept, first_seen, counts);
    Vocabulary vocab(rank_by_frequency(first_seen, counts));

    IndexedSessions out;
    out.sessions.reserve(kept.size());
    for (const auto& s : kept) {
        Session idx{{}, s.start};
        idx.items.reserve(s.items.size());
        for (const auto& it : s.items) idx.items.push_back(*vocab.find(it));
        out.sessions.push_back(std::move(idx));
    }
    out.vocab = std::move(vocab);
    return out;
}

TrainTestSplit split_test(std::vector<Session> sessions, double test_fraction) {
    require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0, 1)");
    std::stable_sort(sessions.begin(), sessions.end(),
                     [](const Session& a, const Session& b) { return a.start < b.start; });
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(sessions.size())));
    if (n_test >= sessions.size()) data_error("test split leaves no training sessions");
    TrainTestSplit split;
    const auto cut = sessions.size() - n_test;
    split.train.assign(sessions.begin(), sessions.begin() + static_cast<std::ptrdiff_t>(cut));
    split.test.assign(sessions.begin() + static_cast<std::ptrdiff_t>(cut), sessions.end());
    return split;
}

std::vector<std::vector<Session>> slice_sessions(std::vector<Session> sessions, const SlicePlan& plan) {
    std::stable_sort(sessions.begin(), sessions.end(),
                     [](const Session& a, const Session& b) { return a.start < b.start; });
    const auto bounds = plan.boundaries(sessions.size());
    std::vector<std::vector<Session>> groups;
    groups.reserve(bounds.size());
    for (auto b : bounds)
        groups.emplace_back(sessions.begin(), sessions.begin() + static_cast<std::ptrdiff_t>(b));
    return groups;
}

SessionDataset augment_split(const std::vector<Session>& sessions, std::size_t vocab_size, int slice_id) {
    SessionDataset ds;
    ds.vocab_size = vocab_size;
    ds.slice_id = slice_id;
    for (const auto& s : sessions) {
        for (std::size_t l = 1; l < s.items.size(); ++l) {
            LabeledPair p;
            p.prefix.assign(s.items.begin(), s.items.begin() + static_cast<std::ptrdiff_t>(l));
            p.label = s.items[l];
            ds.pairs.push_back(std::move(p));
        }
    }
    return ds;
}

std::vector<SessionDataset> temporal_slices(std::vector<Session> sessions, const SlicePlan& plan,
                                            std::size_t vocab_size) {
    auto groups = slice_sessions(std::move(sessions), plan);
    std::vector<SessionDataset> out;
    out.reserve(groups.size());
    for (std::size_t t = 0; t < groups.size(); ++t)
        out.push_back(augment_split(groups[t], vocab_size, static_cast<int>(t + 1)));
    return out;
}

SlicedData prepare_slices(std::vector<Session> sessions, std::size_t vocab_size, const SlicePlan& plan,
                          double test_fraction) {
    auto split = split_test(std::move(sessions), test_fraction);
    SlicedData data;
    data.vocab_size = vocab_size;
    data.slices = temporal_slices(std::move(split.train), plan, vocab_size);
    data.test = augment_split(split.test, vocab_size, 0);
    return data;
}

namespace {

constexpr std::uint8_t dataset_cache_version = 1;

void write_dataset(ByteWriter& w, const SessionDataset& ds) {
    w.u32(static_cast<std::uint32_t>(ds.slice_id));
    w.u32(static_cast<std::uint32_t>(ds.pairs.size()));
    for (const auto& p : ds.pairs) {
        w.u32(static_cast<std::uint32_t>(p.prefix.size()));
        for (auto v : p.prefix) w.u32(v);
        w.u32(p.label);
    }
}

SessionDataset read_dataset(ByteReader& r, std::size_t vocab_size) {
    SessionDataset ds;
    ds.vocab_size = vocab_size;
    ds.slice_id = static_cast<int>(r.u32());
    const auto n = r.u32();
    ds.pairs.reserve(std::min<std::size_t>(n, r.remaining() / 8));
    for (std::uint32_t i = 0; i < n; ++i) {
        LabeledPair p;
        const auto len = r.u32();
        if (len == 0 || len > r.remaining() / 4) data_error("dataset cache: bad prefix length");
        p.prefix.resize(len);
        for (auto& v : p.prefix) v = r.u32();
        p.label = r.u32();
        for (auto v : p.prefix)
            if (v >= vocab_size) data_error("dataset cache: item index out of range");
        if (p.label >= vocab_size) data_error("dataset cache: label out of range");
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

}  // namespace

// Layout (little-endian): "ODDS" | u8 version | 3 zero bytes | u64 vocab size |
// u32 id count + length-prefixed ids | u32 slice count | slices | test set | u32 CRC-32.
// Each dataset: u32 slice id | u32 pair count | per pair u32 prefix length, prefix, u32 label.
void save_dataset_cache(const std::filesystem::path& path, const SlicedData& data) {
    ByteWriter w;
    for (char c : std::string("ODDS")) w.u8(static_cast<std::uint8_t>(c));
    w.u8(dataset_cache_version);
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.u64(data.vocab_size);
    w.u32(static_cast<std::uint32_t>(data.item_ids.size()));
    for (const auto& id : data.item_ids) w.str(id);
    w.u32(static_cast<std::uint32_t>(data.slices.size()));
    for (const auto& s : data.slices) write_dataset(w, s);
    write_dataset(w, data.test);
    w.seal_crc();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write dataset cache " + path.string());
    const auto& b = w.bytes();
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

SlicedData load_dataset_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open dataset cache " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) data_error("dataset cache too short");
    const std::span<const std::uint8_t> all(bytes);
    ByteReader crc_reader(all.subspan(all.size() - 4));
    if (crc32(all.first(all.size() - 4)) != crc_reader.u32()) data_error("dataset cache CRC mismatch");
    try {
        ByteReader r(all.first(all.size() - 4));
        auto magic = r.raw(4);
        if (std::string(magic.begin(), magic.end()) != "ODDS") data_error("dataset cache: bad magic");
        if (r.u8() != dataset_cache_version) data_error("dataset cache: unsupported version");
        r.raw(3);
        SlicedData data;
        data.vocab_size = r.u64();
        const auto ids = r.u32();
        for (std::uint32_t i = 0; i < ids; ++i) data.item_ids.push_back(r.str());
        const auto z = r.u32();
        for (std::uint32_t t = 0; t < z; ++t) data.slices.push_back(read_dataset(r, data.vocab_size));
        data.test = read_dataset(r, data.vocab_size);
        if (r.remaining() != 0) data_error("dataset cache: trailing bytes");
        return data;
    } catch (const ByteOverrun&) {
        data_error("dataset cache truncated");
    }
}

SynthData synth_generate(Rng& rng, const SynthConfig& cfg) {
    require(cfg.vocab_size >= 50, "synthetic vocabulary must have at least 50 items");
    require(cfg.n_sessions >= 100, "synthetic data needs at least 100 sessions");
    require(cfg.clusters >= 1 && cfg.topics_per_cluster >= 1 &&
                cfg.clusters * cfg.topics_per_cluster <= cfg.vocab_size,
            "need 1 <= clusters * topics_per_cluster <= vocab");
    require(cfg.min_len >= 2 && cfg.max_len >= cfg.min_len, "bad synthetic session length range");
    require(cfg.drift >= 0.0, "drift must be non-negative");
    require(cfg.topic_switch_prob >= 0 && cfg.noise_prob >= 0 && cfg.topic_switch_prob + cfg.noise_prob <= 1.0,
            "topic-switch/noise probabilities must form a sub-distribution");
    require(cfg.test_fraction >= 0.0 && cfg.test_fraction < 1.0, "test fraction must lie in [0, 1)");

    const std::size_t V = cfg.vocab_size;
    const std::size_t C = cfg.clusters;
    const std::size_t T = cfg.topics_per_cluster;
    const SlicePlan plan = cfg.plan.slices() > 0 ? cfg.plan : SlicePlan::from_ratios({1.0});
    const std::size_t z = plan.slices();

    // Catalog: topic t of cluster c owns a contiguous block of raw item ids;
    // popularity inside a topic is Zipf over a random permutation of its items.
    const std::size_t n_topics = C * T;
    std::vector<std::vector<std::size_t>> members(n_topics);
    std::vector<std::vector<double>> popularity(n_topics);
    for (std::size_t t = 0; t < n_topics; ++t) {
        for (std::size_t v = t * V / n_topics; v < (t + 1) * V / n_topics; ++v) members[t].push_back(v);
        rng.shuffle(members[t]);
        for (std::size_t r = 0; r < members[t].size(); ++r) popularity[t].push_back(1.0 / static_cast<double>(r + 1));
    }

    // Cluster preferences: a geometric profile rotated around the cluster ring.
    std::vector<double> base(C);
    for (std::size_t c = 0; c < C; ++c) base[c] = std::pow(0.7, static_cast<double>(c));
    auto weights_for = [&](std::size_t segment) {
        const double progress = z > 1 ? static_cast<double>(segment) / static_cast<double>(z - 1) : 0.0;
        const double shift = cfg.drift * progress * static_cast<double>(C) / 2.0;
        std::vector<double> w(C);
        for (std::size_t c = 0; c < C; ++c) {
            const double pos = static_cast<double>(c) - shift;
            const double fl = std::floor(pos);
            const double frac = pos - fl;
            const auto cl = static_cast<long long>(C);
            const auto i0 = static_cast<std::size_t>(((static_cast<long long>(fl) % cl) + cl) % cl);
            w[c] = (1.0 - frac) * base[i0] + frac * base[(i0 + 1) % C];
        }
        return w;
    };

    const auto n_test =
        static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(cfg.n_sessions)));
    const std::size_t n_train = cfg.n_sessions - n_test;
    const auto bounds = plan.boundaries(n_train);

    SynthData out;
    std::vector<std::vector<std::size_t>> raw(cfg.n_sessions);
    out.cluster_of_session.resize(cfg.n_sessions);
    out.segment_of_session.resize(cfg.n_sessions);
    std::size_t segment = 0;
    for (std::size_t j = 0; j < cfg.n_sessions; ++j) {
        while (segment + 1 < z && j >= bounds[segment]) ++segment;
        const auto w = weights_for(segment);
        const std::size_t c = rng.categorical(w);
        const auto len = cfg.min_len + static_cast<std::size_t>(rng.below(cfg.max_len - cfg.min_len + 1));
        std::size_t topic = c * T + static_cast<std::size_t>(rng.below(T));
        auto& items = raw[j];
        items.push_back(members[topic][rng.categorical(popularity[topic])]);
        while (items.size() < len) {
            const double u = rng.uniform();
            if (u < cfg.noise_prob) {
                items.push_back(static_cast<std::size_t>(rng.below(V)));
                continue;
            }
            if (u < cfg.noise_prob + cfg.topic_switch_prob) topic = c * T + static_cast<std::size_t>(rng.below(T));
            items.push_back(members[topic][rng.categorical(popularity[topic])]);
        }
        out.cluster_of_session[j] = c;
        out.segment_of_session[j] = segment;
    }

    // Frequency-rank indexing; items never drawn rank last in catalog order.
    std::vector<std::size_t> counts(V, 0);
    for (const auto& s : raw)
        for (auto v : s) ++counts[v];
    std::vector<std::size_t> order(V);
    for (std::size_t v = 0; v < V; ++v) order[v] = v;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    std::vector<ItemIndex> index_of(V);
    for (std::size_t r = 0; r < V; ++r) index_of[order[r]] = static_cast<ItemIndex>(r);

    out.vocab_size = V;
    out.sessions.reserve(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
        Session s{{}, static_cast<std::int64_t>(j) * 3600};
        for (auto v : raw[j]) s.items.push_back(index_of[v]);
        out.sessions.push_back(std::move(s));
    }
    return out;
}

EventLog synth_to_event_log(const SynthData& data) {
    EventLog log;
    for (std::size_t j = 0; j < data.sessions.size(); ++j) {
        const auto& s = data.sessions[j];
        for (std::size_t i = 0; i < s.items.size(); ++i)
            log.push_back(Event{"u" + std::to_string(j), "i" + std::to_string(s.items[i]),
                                s.start + static_cast<std::int64_t>(60 * i)});
    }
    return log;
}

}  // namespace odup
