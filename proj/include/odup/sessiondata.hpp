#pragma once

// Interaction-log ingestion, sessionization, temporal slicing and the
// synthetic drifting-preference generator used for desk-scale runs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "odup/numkit.hpp"

namespace odup {

using ItemIndex = std::uint32_t;

struct Event {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;  // seconds since epoch
};

using EventLog = std::vector<Event>;

// A session before vocabulary indexing.
struct RawSession {
    std::string user;
    std::vector<std::string> items;
    std::int64_t start = 0;
};

struct Session {
    std::vector<ItemIndex> items;
    std::int64_t start = 0;
};

// Item-id <-> dense index; index order is frequency rank.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> ids);

    std::size_t size() const noexcept { return ids_.size(); }
    const std::string& id(ItemIndex i) const { return ids_.at(i); }
    std::optional<ItemIndex> find(const std::string& id) const;
    const std::vector<std::string>& ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, ItemIndex> index_;
};

struct LabeledPair {
    std::vector<ItemIndex> prefix;
    ItemIndex label = 0;

    friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct SessionDataset {
    std::vector<LabeledPair> pairs;
    std::size_t vocab_size = 0;
    int slice_id = 0;

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
};

// Positive slice weights normalised to sum to one, in temporal order.
class SlicePlan {
public:
    SlicePlan() = default;
    // Accepts any positive ratios (e.g. 1:3:6:10:15) and normalises them.
    static SlicePlan from_ratios(const std::vector<double>& ratios);

    const std::vector<double>& fractions() const noexcept { return fractions_; }
    std::size_t slices() const noexcept { return fractions_.size(); }
    // Cumulative shares; the last entry is exactly 1.
    std::vector<double> cumulative() const;
    // Session counts per cumulative slice for n sessions: strictly increasing, last = n.
    std::vector<std::size_t> boundaries(std::size_t n) const;

private:
    std::vector<double> fractions_;
};

EventLog read_event_log(std::istream& in, char delimiter = '\t');
EventLog read_event_log(const std::filesystem::path& path, char delimiter = '\t');
void write_event_log(std::ostream& out, const EventLog& log, char delimiter = '\t');

// Per user, consecutive events at most `gap` seconds apart share a session.
// Output is ordered by (start, user); insensitive to input order.
std::vector<RawSession> sessionize(const EventLog& log, std::int64_t gap);

struct FilterConfig {
    std::size_t min_len = 2;
    std::size_t max_len = 50;
    std::optional<std::size_t> top_items;
};

struct IndexedSessions {
    std::vector<Session> sessions;
    Vocabulary vocab;
};

// Drops sessions outside [min_len, max_len], optionally restricts to the most
// frequent items, and assigns dense indices by frequency rank.
IndexedSessions filter_and_index(const std::vector<RawSession>& sessions, const FilterConfig& cfg);

struct TrainTestSplit {
    std::vector<Session> train;
    std::vector<Session> test;
};

// Holds out the temporally last `test_fraction` of sessions.
TrainTestSplit split_test(std::vector<Session> sessions, double test_fraction);

// Cumulative session groups: group t holds the earliest boundaries(N)[t] sessions.
std::vector<std::vector<Session>> slice_sessions(std::vector<Session> sessions, const SlicePlan& plan);

// ([v1], v2), ([v1, v2], v3), ... for every session.
SessionDataset augment_split(const std::vector<Session>& sessions, std::size_t vocab_size, int slice_id = 0);

std::vector<SessionDataset> temporal_slices(std::vector<Session> sessions, const SlicePlan& plan,
                                            std::size_t vocab_size);

// Train slices plus held-out test set, ready for training and evaluation.
struct SlicedData {
    std::vector<SessionDataset> slices;
    SessionDataset test;
    std::size_t vocab_size = 0;
    std::vector<std::string> item_ids;  // empty for synthetic catalogs
};

SlicedData prepare_slices(std::vector<Session> sessions, std::size_t vocab_size, const SlicePlan& plan,
                          double test_fraction);

// Binary snapshot of sliced data (magic "ODDS", version byte, CRC-32 trailer).
void save_dataset_cache(const std::filesystem::path& path, const SlicedData& data);
SlicedData load_dataset_cache(const std::filesystem::path& path);

struct SynthConfig {
    std::size_t vocab_size = 2000;
    std::size_t n_sessions = 4000;  // including the held-out tail
    // Rotation of cluster preferences reached by the final slice, as a
    // fraction of half a turn around the cluster ring; 0 disables drift.
    double drift = 0.0;
    SlicePlan plan;
    double test_fraction = 0.1;
    std::size_t clusters = 10;         // preference clusters; the drifting mixture is over these
    std::size_t topics_per_cluster = 10;
    std::size_t min_len = 2;
    std::size_t max_len = 8;
    double topic_switch_prob = 0.2;  // chance the next item comes from another topic of the cluster
    double noise_prob = 0.05;        // chance of a uniformly random item
};

struct SynthData {
    std::vector<Session> sessions;  // temporally ordered, indices by frequency rank
    std::size_t vocab_size = 0;
    std::vector<std::size_t> cluster_of_session;
    std::vector<std::size_t> segment_of_session;  // slice increment a session was drawn under
};

SynthData synth_generate(Rng& rng, const SynthConfig& cfg);

// Renders synthetic sessions as an event log (one user per session, 60 s between events).
EventLog synth_to_event_log(const SynthData& data);

}  // namespace odup
