#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "odup/pipeline.hpp"
#include "odup/wire.hpp"

using namespace odup;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
    std::istringstream in(R"(
        # tiny run
        seed = 3
        slices.ratios = 1,1,1
        synth.vocab = 200
        synth.sessions = 600
        synth.clusters = 4
        synth.topics_per_cluster = 5
        synth.drift = 0.3
        rec.dim = 8
        rec.epochs = 2
        codec.n = 4
        codec.k = 8
        codec.epochs = 5
        update.ratio = 4
    )");
    return ExperimentConfig::parse(in);
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("odup_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
    const auto cfg = small_config();
    EXPECT_EQ(cfg.seed, 3u);
    EXPECT_EQ(cfg.slice_ratios.size(), 3u);
    EXPECT_EQ(cfg.synth.vocab_size, 200u);
    EXPECT_EQ(cfg.codec_for_slice(2).d, 8u);
    EXPECT_NE(cfg.codec_for_slice(2).seed, cfg.codec_for_slice(3).seed);
}

TEST(Config, TextRoundTrip) {
    auto cfg = small_config();
    cfg.mmd.bandwidth = 0.75;
    cfg.filter.top_items = 100;
    cfg.delimiter = ',';
    std::istringstream in(cfg.to_text());
    const auto back = ExperimentConfig::parse(in);
    EXPECT_EQ(back.to_text(), cfg.to_text());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    ExperimentConfig cfg;
    EXPECT_THROW(cfg.set("codec.bogus", "1"), Error);
    EXPECT_THROW(cfg.set("codec.n", "-2"), Error);
    EXPECT_THROW(cfg.set("codec.tau", "warm"), Error);
    EXPECT_THROW(cfg.set("update.strategy", "lifo"), Error);
    std::istringstream bad("seed 4\n");
    EXPECT_THROW(ExperimentConfig::parse(bad), Error);
    cfg.strategy = Strategy::full;
    cfg.ratio_mode = RatioMode::adaptive;
    try {
        cfg.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(exit_code_for(e.kind()), 2);
    }
}

TEST(Config, EmptyEventLogIsAConfigError) {
    const auto dir = scratch("empty");
    fs::create_directories(dir);
    std::ofstream(dir / "events.tsv").close();
    ExperimentConfig cfg;
    cfg.source = DataSource::file;
    cfg.data_path = dir / "events.tsv";
    try {
        load_data(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(exit_code_for(e.kind()), 2);
    }
}

TEST(Reports, CsvAndJsonRoundTrip) {
    RoundReport a;
    a.slice = 1;
    a.strategy = "queue";
    a.r = 1;
    a.beta = 32;
    a.delta_bytes = 900;
    a.cum_bytes = 900;
    a.cloud.at10.prec = 0.1 + 0.2;
    a.device.at5.ndcg = 1.0 / 3.0;
    a.cr_model = 3.7;
    a.cr_update = 1.0;
    a.cr_total = 3.7;
    RoundReport b = a;
    b.slice = 2;
    b.r.reset();
    b.beta = 0;
    b.mmd = 2.5e-7;
    b.delta_bytes = 0;
    b.cr_update.reset();
    b.cr_total.reset();
    const std::vector<RoundReport> rounds{a, b};

    std::istringstream csv(reports_to_csv(rounds)), json(reports_to_json(rounds));
    const auto from_csv = reports_from_csv(csv);
    const auto from_json = reports_from_json(json);
    ASSERT_EQ(from_csv.size(), 2u);
    EXPECT_EQ(reports_to_csv(from_csv), reports_to_csv(rounds));
    EXPECT_EQ(reports_to_json(from_json), reports_to_json(rounds));
    EXPECT_EQ(from_csv[1].r, std::nullopt);
    EXPECT_EQ(from_json[1].mmd, 2.5e-7);
    EXPECT_EQ(from_csv[0].cloud.at10.prec, 0.1 + 0.2);
    EXPECT_NE(reports_to_csv(rounds).find(",skip,"), std::string::npos);
}

TEST(Simulate, SmallRunIsConsistentAndDeterministic) {
    const auto cfg = small_config();
    const auto data = load_data(cfg);
    const auto cloud = train_cloud(cfg, data);
    const auto sim = simulate(cfg, data, cloud);
    ASSERT_EQ(sim.rounds.size(), 3u);
    std::size_t total = 0;
    for (std::size_t t = 0; t < 3; ++t) {
        total += sim.frames[t].size();
        EXPECT_EQ(sim.rounds[t].delta_bytes, sim.frames[t].size());
        EXPECT_EQ(sim.rounds[t].cum_bytes, total);
    }
    EXPECT_EQ(sim.rounds[0].beta, 32u);
    EXPECT_EQ(sim.rounds[1].beta, 8u);
    EXPECT_FALSE(sim.rounds[0].mmd.has_value());
    EXPECT_TRUE(sim.rounds[1].mmd.has_value());

    const auto again = simulate(cfg, data, cloud);
    EXPECT_EQ(reports_to_csv(again.rounds), reports_to_csv(sim.rounds));
    EXPECT_EQ(again.frames, sim.frames);
}

TEST(Simulate, StackAndQueueShipTheSameBytes) {
    auto cfg = small_config();
    const auto data = load_data(cfg);
    const auto cloud = train_cloud(cfg, data);
    cfg.strategy = Strategy::stack;
    const auto stack = simulate(cfg, data, cloud);
    cfg.strategy = Strategy::queue;
    const auto queue = simulate(cfg, data, cloud);
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_EQ(stack.rounds[t].cum_bytes, queue.rounds[t].cum_bytes);
        EXPECT_EQ(stack.rounds[t].cloud.at10.prec, queue.rounds[t].cloud.at10.prec);
    }
    EXPECT_NE(decode_delta(stack.frames[1]).slots, decode_delta(queue.frames[1]).slots);
}

TEST(Simulate, AdaptiveSkipsWhenTheThresholdIsNotReached) {
    auto cfg = small_config();
    cfg.ratio_mode = RatioMode::adaptive;
    cfg.adaptive.skip_threshold = 1e9;
    const auto data = load_data(cfg);
    const auto sim = simulate(cfg, data, train_cloud(cfg, data));
    EXPECT_EQ(sim.rounds.back().cum_bytes, sim.rounds.front().delta_bytes);
    EXPECT_FALSE(sim.rounds[1].r.has_value());
    EXPECT_TRUE(sim.frames[2].empty());
}

TEST(Commands, TrainIsReproducibleAndReportAggregates) {
    auto cfg = small_config();
    const auto a = scratch("a"), b = scratch("b"), rep = scratch("rep");
    cfg.out_dir = a;
    cmd_train(cfg);
    cmd_simulate(cfg);
    cfg.out_dir = b;
    cfg.strategy = Strategy::stack;
    cmd_train(cfg);
    cmd_simulate(cfg);
    EXPECT_EQ(slurp(a / "cloud_slice2.odck"), slurp(b / "cloud_slice2.odck"));
    EXPECT_TRUE(fs::exists(a / "frames" / "delta_slice1.odup"));

    const std::string text = cmd_report({a, b}, rep);
    EXPECT_FALSE(text.empty());
    const std::string side = slurp(rep / "summary_by_slice.csv");
    EXPECT_NE(side.find("a_dev_p10"), std::string::npos);
    EXPECT_NE(side.find("b_dev_p10"), std::string::npos);

    std::ofstream(b / "report.json") << "[]";
    try {
        cmd_report({a, b}, rep);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find(b.string()), std::string::npos);
    }
}

TEST(Commands, CompressWritesDecodableModels) {
    auto cfg = small_config();
    cfg.out_dir = scratch("compress");
    cmd_compress(cfg);
    const auto model = decode_model(read_file(cfg.out_dir / "model_slice3.odcm"));
    EXPECT_EQ(model.codes.vocab(), 200u);
    EXPECT_EQ(model.store.row_count(), 32u);
}

TEST(Commands, SynthWritesAReadableLog) {
    auto cfg = small_config();
    cfg.out_dir = scratch("synth");
    cmd_synth(cfg);
    const auto log = read_event_log(cfg.out_dir / "events.tsv");
    EXPECT_FALSE(log.empty());
    const auto cached = load_dataset_cache(cfg.out_dir / "dataset.odds");
    EXPECT_EQ(cached.slices.size(), 3u);
}
