#pragma once

// The experiment loop: per temporal slice, retrain the cloud recommender,
// compress or delta-compress its item table, ship the frame, rebuild the
// table on a simulated device and evaluate both sides.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "odup/adaptive.hpp"
#include "odup/bytes.hpp"
#include "odup/codec.hpp"
#include "odup/recommender.hpp"
#include "odup/sessiondata.hpp"
#include "odup/updater.hpp"

namespace odup {

enum class DataSource { synth, file };
enum class RatioMode { fixed, adaptive };

// Line-oriented `key = value` text; `#` starts a comment. Keys:
//
//   seed, out
//   data.source (synth|file), data.path, data.delimiter (tab|comma|<char>), data.session_gap,
//   data.min_len, data.max_len, data.top_items, data.test_fraction
//   slices.ratios            comma-separated positive weights, one per slice
//   synth.vocab, synth.sessions, synth.drift, synth.clusters, synth.topics_per_cluster,
//   synth.min_len, synth.max_len, synth.topic_switch_prob, synth.noise_prob
//   rec.dim, rec.encoder (mean_pool|last_item_gated), rec.lr, rec.epochs, rec.batch, rec.l2,
//   rec.train_gate, rec.warm_start
//   codec.n, codec.k, codec.tau, codec.lr, codec.epochs, codec.batch, codec.straight_through
//   update.strategy (full|stack|queue), update.ratio_mode (fixed|adaptive), update.ratio
//   adaptive.C, adaptive.skip_threshold
//   mmd.sample_n1, mmd.sample_n2 (0 = all rows), mmd.bandwidth (median|<value>), mmd.paired
//   device.refresh_encoder   copy the cloud gate to the device every round
//   report.timing            fill the secs column with wall time (otherwise 0)
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";

    DataSource source = DataSource::synth;
    std::filesystem::path data_path;
    char delimiter = '\t';
    std::int64_t session_gap = 8 * 3600;
    FilterConfig filter;
    double test_fraction = 0.1;
    std::vector<double> slice_ratios = {1, 1, 1, 1, 1};
    SynthConfig synth;

    std::size_t dim = 32;
    EncoderKind encoder = EncoderKind::last_item_gated;
    TrainConfig rec = default_rec();
    bool warm_start = true;

    CodecConfig codec;

    Strategy strategy = Strategy::queue;
    RatioMode ratio_mode = RatioMode::fixed;
    double ratio = 10.0;
    AdaptiveConfig adaptive;
    MmdConfig mmd;

    bool refresh_device_encoder = false;
    bool report_timing = false;

    static TrainConfig default_rec();

    SlicePlan plan() const { return SlicePlan::from_ratios(slice_ratios); }
    // Codec settings with d taken from rec.dim and the seed derived for slice t.
    CodecConfig codec_for_slice(std::size_t t) const;
    TrainConfig rec_for_slice(std::size_t t) const;
    // Throws ErrorKind::config on inconsistent settings.
    void validate() const;

    void set(const std::string& key, const std::string& value);
    static ExperimentConfig parse(std::istream& in);
    static ExperimentConfig load(const std::filesystem::path& path);
    // Canonical text form; parse(to_text()) reproduces the config.
    std::string to_text() const;
};

SlicedData load_data(const ExperimentConfig& cfg);

struct CloudRun {
    std::vector<RecModel> models;  // one per slice
    std::vector<MetricsAt5And10> metrics;
    std::vector<double> final_loss;
};

// Trains the cloud model on each cumulative slice, warm-starting from the
// previous slice unless disabled.
CloudRun train_cloud(const ExperimentConfig& cfg, const SlicedData& data);

struct RoundReport {
    std::size_t slice = 0;  // 1-based
    std::string strategy;
    std::optional<std::uint64_t> r;  // empty when the round was skipped
    std::size_t beta = 0;
    std::optional<double> mmd;  // empty on the deployment round
    std::size_t delta_bytes = 0;
    std::size_t cum_bytes = 0;
    MetricsAt5And10 cloud;
    MetricsAt5And10 device;
    double cr_model = 0.0;
    std::optional<double> cr_update;
    std::optional<double> cr_total;
    double secs = 0.0;
};

struct SimulationOutput {
    std::vector<RoundReport> rounds;
    std::vector<Bytes> frames;  // the encoded frame of each round, empty when skipped
};

// Runs the device side against an already trained cloud. Device metrics come
// from tables rebuilt only from decoded frames. Throws ProtocolError when the
// server and device ledgers or stores disagree after a round.
SimulationOutput simulate(const ExperimentConfig& cfg, const SlicedData& data, const CloudRun& cloud);

std::string reports_to_csv(const std::vector<RoundReport>& rounds);
std::string reports_to_json(const std::vector<RoundReport>& rounds);
std::vector<RoundReport> reports_from_csv(std::istream& in);
std::vector<RoundReport> reports_from_json(std::istream& in);

// Subcommands. Each writes into cfg.out_dir and returns nothing; errors throw.
void cmd_synth(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_compress(const ExperimentConfig& cfg);
void cmd_simulate(const ExperimentConfig& cfg);
// Reads report.csv and report.json from each run directory, checks they agree
// and writes side-by-side and per-run tables into out_dir. Returns the text summary.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace odup
