#include "odup/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "odup/wire.hpp"

namespace odup {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::config, what); }

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) config_error("config key '" + key + "': cannot parse '" + text + "'");
    return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    return parse_number<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    config_error("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string fmt_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

std::string delimiter_name(char c) {
    if (c == '\t') return "tab";
    if (c == ',') return "comma";
    return std::string(1, c);
}

std::string slice_file(const std::string& stem, std::size_t t, const std::string& ext) {
    return stem + "_slice" + std::to_string(t) + ext;
}

}  // namespace

TrainConfig ExperimentConfig::default_rec() {
    TrainConfig t;
    t.lr = 0.01;
    t.epochs = 10;
    t.batch = 100;
    t.l2 = 1e-5;
    return t;
}

CodecConfig ExperimentConfig::codec_for_slice(std::size_t t) const {
    CodecConfig c = codec;
    c.d = dim;
    c.seed = mix_seed(seed, 0xC0DEC000ULL + t);
    return c;
}

TrainConfig ExperimentConfig::rec_for_slice(std::size_t t) const {
    TrainConfig r = rec;
    r.seed = mix_seed(seed, 0x5EC000ULL + t);
    return r;
}

void ExperimentConfig::validate() const {
    if (slice_ratios.empty()) config_error("slices.ratios must list at least one slice");
    for (double r : slice_ratios)
        if (!(r > 0.0 && std::isfinite(r))) config_error("slices.ratios must be positive");
    if (source == DataSource::file && data_path.empty()) config_error("data.path is required when data.source = file");
    if (source == DataSource::file && !std::filesystem::exists(data_path))
        config_error("data.path " + data_path.string() + " does not exist");
    if (session_gap <= 0) config_error("data.session_gap must be positive");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) config_error("data.test_fraction must lie in (0, 1)");
    if (dim < 2) config_error("rec.dim must be at least 2");
    if (rec.epochs < 1) config_error("rec.epochs must be at least 1");
    if (!(ratio >= 1.0 && std::isfinite(ratio))) config_error("update.ratio must be at least 1");
    if (strategy == Strategy::full && ratio_mode == RatioMode::adaptive)
        config_error("update.ratio_mode = adaptive needs the stack or queue strategy");
    if (codec.n * codec.k % 2 != 0) config_error("codec.n * codec.k must be even");
    if (codec.tau <= 0.0) config_error("codec.tau must be positive");
    adaptive.validate();
    mmd.validate();
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    auto count = [&] { return parse_count(key, value); };
    auto real = [&] { return parse_number<double>(key, value); };
    auto flag = [&] { return parse_bool(key, value); };

    if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out") out_dir = value;
    else if (key == "data.source") {
        if (value == "synth") source = DataSource::synth;
        else if (value == "file") source = DataSource::file;
        else config_error("data.source must be synth or file");
    } else if (key == "data.path") data_path = value;
    else if (key == "data.delimiter") {
        if (value == "tab") delimiter = '\t';
        else if (value == "comma") delimiter = ',';
        else if (value.size() == 1) delimiter = value[0];
        else config_error("data.delimiter must be tab, comma or a single character");
    } else if (key == "data.session_gap") session_gap = parse_number<std::int64_t>(key, value);
    else if (key == "data.min_len") filter.min_len = count();
    else if (key == "data.max_len") filter.max_len = count();
    else if (key == "data.top_items") {
        if (value == "none") filter.top_items.reset();
        else filter.top_items = count();
    } else if (key == "data.test_fraction") test_fraction = real();
    else if (key == "slices.ratios") {
        slice_ratios.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) slice_ratios.push_back(parse_number<double>(key, trim(item)));
    } else if (key == "synth.vocab") synth.vocab_size = count();
    else if (key == "synth.sessions") synth.n_sessions = count();
    else if (key == "synth.drift") synth.drift = real();
    else if (key == "synth.clusters") synth.clusters = count();
    else if (key == "synth.topics_per_cluster") synth.topics_per_cluster = count();
    else if (key == "synth.min_len") synth.min_len = count();
    else if (key == "synth.max_len") synth.max_len = count();
    else if (key == "synth.topic_switch_prob") synth.topic_switch_prob = real();
    else if (key == "synth.noise_prob") synth.noise_prob = real();
    else if (key == "rec.dim") dim = count();
    else if (key == "rec.encoder") {
        if (value == "mean_pool") encoder = EncoderKind::mean_pool;
        else if (value == "last_item_gated") encoder = EncoderKind::last_item_gated;
        else config_error("rec.encoder must be mean_pool or last_item_gated");
    } else if (key == "rec.lr") rec.lr = real();
    else if (key == "rec.epochs") rec.epochs = count();
    else if (key == "rec.batch") rec.batch = count();
    else if (key == "rec.l2") rec.l2 = real();
    else if (key == "rec.train_gate") rec.train_gate = flag();
    else if (key == "rec.warm_start") warm_start = flag();
    else if (key == "codec.n") codec.n = count();
    else if (key == "codec.k") codec.k = count();
    else if (key == "codec.tau") codec.tau = real();
    else if (key == "codec.lr") codec.lr = real();
    else if (key == "codec.epochs") codec.epochs = count();
    else if (key == "codec.batch") codec.batch = count();
    else if (key == "codec.straight_through") codec.straight_through = flag();
    else if (key == "update.strategy") strategy = parse_strategy(value);
    else if (key == "update.ratio_mode") {
        if (value == "fixed") ratio_mode = RatioMode::fixed;
        else if (value == "adaptive") ratio_mode = RatioMode::adaptive;
        else config_error("update.ratio_mode must be fixed or adaptive");
    } else if (key == "update.ratio") ratio = real();
    else if (key == "adaptive.C") adaptive.C = real();
    else if (key == "adaptive.skip_threshold") adaptive.skip_threshold = real();
    else if (key == "mmd.sample_n1") mmd.sample_n1 = count();
    else if (key == "mmd.sample_n2") mmd.sample_n2 = count();
    else if (key == "mmd.bandwidth") {
        if (value == "median") mmd.bandwidth.reset();
        else mmd.bandwidth = real();
    } else if (key == "mmd.paired") mmd.paired = flag();
    else if (key == "device.refresh_encoder") refresh_device_encoder = flag();
    else if (key == "report.timing") report_timing = flag();
    else config_error("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) config_error("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open config file " + path.string());
    return parse(in);
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream o;
    auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
    auto b = [](bool x) { return std::string(x ? "true" : "false"); };
    kv("seed", std::to_string(seed));
    kv("out", out_dir.string());
    kv("data.source", source == DataSource::synth ? "synth" : "file");
    if (!data_path.empty()) kv("data.path", data_path.string());
    kv("data.delimiter", delimiter_name(delimiter));
    kv("data.session_gap", std::to_string(session_gap));
    kv("data.min_len", std::to_string(filter.min_len));
    kv("data.max_len", std::to_string(filter.max_len));
    kv("data.top_items", filter.top_items ? std::to_string(*filter.top_items) : "none");
    kv("data.test_fraction", fmt(test_fraction));
    kv("slices.ratios", fmt_list(slice_ratios));
    kv("synth.vocab", std::to_string(synth.vocab_size));
    kv("synth.sessions", std::to_string(synth.n_sessions));
    kv("synth.drift", fmt(synth.drift));
    kv("synth.clusters", std::to_string(synth.clusters));
    kv("synth.topics_per_cluster", std::to_string(synth.topics_per_cluster));
    kv("synth.min_len", std::to_string(synth.min_len));
    kv("synth.max_len", std::to_string(synth.max_len));
    kv("synth.topic_switch_prob", fmt(synth.topic_switch_prob));
    kv("synth.noise_prob", fmt(synth.noise_prob));
    kv("rec.dim", std::to_string(dim));
    kv("rec.encoder", encoder == EncoderKind::mean_pool ? "mean_pool" : "last_item_gated");
    kv("rec.lr", fmt(rec.lr));
    kv("rec.epochs", std::to_string(rec.epochs));
    kv("rec.batch", std::to_string(rec.batch));
    kv("rec.l2", fmt(rec.l2));
    kv("rec.train_gate", b(rec.train_gate));
    kv("rec.warm_start", b(warm_start));
    kv("codec.n", std::to_string(codec.n));
    kv("codec.k", std::to_string(codec.k));
    kv("codec.tau", fmt(codec.tau));
    kv("codec.lr", fmt(codec.lr));
    kv("codec.epochs", std::to_string(codec.epochs));
    kv("codec.batch", std::to_string(codec.batch));
    kv("codec.straight_through", b(codec.straight_through));
    kv("update.strategy", std::string(to_string(strategy)));
    kv("update.ratio_mode", ratio_mode == RatioMode::fixed ? "fixed" : "adaptive");
    kv("update.ratio", fmt(ratio));
    kv("adaptive.C", fmt(adaptive.C));
    kv("adaptive.skip_threshold", fmt(adaptive.skip_threshold));
    kv("mmd.sample_n1", std::to_string(mmd.sample_n1));
    kv("mmd.sample_n2", std::to_string(mmd.sample_n2));
    kv("mmd.bandwidth", mmd.bandwidth ? fmt(*mmd.bandwidth) : "median");
    kv("mmd.paired", b(mmd.paired));
    kv("device.refresh_encoder", b(refresh_device_encoder));
    kv("report.timing", b(report_timing));
    return o.str();
}

SlicedData load_data(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.source == DataSource::synth) {
        SynthConfig sc = cfg.synth;
        sc.plan = cfg.plan();
        sc.test_fraction = cfg.test_fraction;
        Rng rng(mix_seed(cfg.seed, 0x53594e5448ULL));
        const SynthData synth = synth_generate(rng, sc);
        return prepare_slices(synth.sessions, synth.vocab_size, sc.plan, cfg.test_fraction);
    }
    const EventLog log = read_event_log(cfg.data_path, cfg.delimiter);
    if (log.empty()) config_error("data.path " + cfg.data_path.string() + " contains no events");
    auto indexed = filter_and_index(sessionize(log, cfg.session_gap), cfg.filter);
    SlicedData data = prepare_slices(std::move(indexed.sessions), indexed.vocab.size(), cfg.plan(), cfg.test_fraction);
    data.item_ids = indexed.vocab.ids();
    return data;
}

CloudRun train_cloud(const ExperimentConfig& cfg, const SlicedData& data) {
    CloudRun run;
    Rng init_rng(mix_seed(cfg.seed, 0x1417ULL));
    RecModel model = make_model(data.vocab_size, cfg.dim, cfg.encoder, init_rng);
    const RecModel fresh = model;
    for (std::size_t t = 0; t < data.slices.size(); ++t) {
        if (!cfg.warm_start) model = fresh;
        const auto result = train(model, data.slices[t], cfg.rec_for_slice(t + 1));
        run.final_loss.push_back(result.loss_curve.back());
        run.models.push_back(model);
        run.metrics.push_back(evaluate_5_10(model.embeddings, model.encoder, data.test));
    }
    return run;
}

namespace {

struct ServerState {
    CodebookStore store;
    CodecEncoder encoder;
    CodeMatrix codes;
    SlotLedger ledger;
};

}  // namespace

SimulationOutput simulate(const ExperimentConfig& cfg, const SlicedData& data, const CloudRun& cloud) {
    cfg.validate();
    require(cloud.models.size() == data.slices.size(), "simulate: cloud run and data disagree on slice count");
    const std::size_t n = cfg.codec.n, k = cfg.codec.k, nk = n * k, V = data.vocab_size, d = cfg.dim;
    const double crm = model_cr(V, d, n, k);

    SimulationOutput out;
    ServerState server;
    DeviceState device = make_device(cfg.strategy, n, k, d);
    SessionEncoder device_encoder;
    Matrix device_table;
    std::size_t cum = 0;

    for (std::size_t t = 1; t <= data.slices.size(); ++t) {
        const auto started = std::chrono::steady_clock::now();
        const RecModel& cloud_model = cloud.models[t - 1];
        const Matrix& target = cloud_model.embeddings;
        const CodecConfig codec_cfg = cfg.codec_for_slice(t);

        RoundReport rep;
        rep.slice = t;
        rep.strategy = std::string(to_string(cfg.strategy));
        rep.cloud = cloud.metrics[t - 1];
        rep.cr_model = crm;

        std::optional<UpdateDelta> delta;
        if (t == 1) {
            auto trained = train_codec(target, codec_cfg);
            server.store = CodebookStore(n, k, round_to_f32(trained.store.rows()));
            server.encoder = std::move(trained.encoder);
            server.codes = harden(server.encoder, target);
            server.ledger = SlotLedger::deployed(nk);
            delta = deployment_delta(server.store, server.codes);
            rep.r = 1;
            device_encoder = cloud_model.encoder;
        } else {
            rep.mmd = mmd2(cloud.models[t - 2].embeddings, target, cfg.mmd);
            std::size_t beta = nk;
            if (cfg.strategy == Strategy::full) {
                rep.r = 1;
            } else if (cfg.ratio_mode == RatioMode::fixed) {
                beta = beta_from_ratio(n, k, cfg.ratio);
                rep.r = static_cast<std::uint64_t>(std::llround(cfg.ratio));
            } else {
                rep.r = choose_ratio(*rep.mmd, cfg.adaptive);
                if (rep.r) beta = beta_from_ratio(n, k, static_cast<double>(*rep.r));
            }
            if (rep.r) {
                const auto slots = plan_slots(server.ledger, cfg.strategy, beta);
                auto res = retrain_update(server.store, server.encoder, target, slots, cfg.strategy,
                                          server.ledger.epoch() + 1, codec_cfg);
                server.store = std::move(res.store);
                server.encoder = std::move(res.encoder);
                server.codes = std::move(res.codes);
                server.ledger.commit(slots, res.delta.epoch);
                delta = std::move(res.delta);
            }
            if (cfg.refresh_device_encoder) device_encoder = cloud_model.encoder;
        }

        Bytes frame;
        if (delta) {
            frame = encode_delta(*delta);
            if (frame.size() != delta_bytes(V, n, k, d, delta->beta()))
                throw ProtocolError(ProtocolFault::shape_mismatch, "frame length differs from the layout size");
            device_table = apply_delta(device, decode_delta(frame));
            if (!(device.ledger == server.ledger) || !(device.store == server.store))
                throw ProtocolError(ProtocolFault::slot_divergence,
                                    "server and device state differ after slice " + std::to_string(t));
            rep.beta = delta->beta();
            rep.delta_bytes = frame.size();
            rep.cr_update = update_cr(n, k, d, V, rep.beta);
            rep.cr_total = end_to_end_cr(V, d, n, rep.beta);
        }
        cum += rep.delta_bytes;
        rep.cum_bytes = cum;
        rep.device = evaluate_5_10(device_table, device_encoder, data.test);
        if (cfg.report_timing)
            rep.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        out.rounds.push_back(rep);
        out.frames.push_back(std::move(frame));
    }
    return out;
}

namespace {

const char* const csv_header =
    "slice,strategy,r,beta,mmd,delta_bytes,cum_bytes,cloud_p5,cloud_n5,cloud_p10,cloud_n10,dev_p5,dev_n5,dev_p10,"
    "dev_n10,cr_model,cr_update,cr_total,secs";

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::optional<double> parse_opt_double(const std::string& field, const std::string& text) {
    if (text.empty()) return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw Error(ErrorKind::data, "report field " + field + ": bad number '" + text + "'");
    return v;
}

double parse_double(const std::string& field, const std::string& text) {
    auto v = parse_opt_double(field, text);
    if (!v) throw Error(ErrorKind::data, "report field " + field + " is empty");
    return *v;
}

std::uint64_t parse_u64(const std::string& field, const std::string& text) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw Error(ErrorKind::data, "report field " + field + ": bad integer '" + text + "'");
    return v;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string reports_to_csv(const std::vector<RoundReport>& rounds) {
    std::ostringstream o;
    o << csv_header << '\n';
    for (const auto& r : rounds) {
        o << r.slice << ',' << r.strategy << ',' << (r.r ? std::to_string(*r.r) : "skip") << ',' << r.beta << ','
          << opt(r.mmd) << ',' << r.delta_bytes << ',' << r.cum_bytes << ',' << fmt(r.cloud.at5.prec) << ','
          << fmt(r.cloud.at5.ndcg) << ',' << fmt(r.cloud.at10.prec) << ',' << fmt(r.cloud.at10.ndcg) << ','
          << fmt(r.device.at5.prec) << ',' << fmt(r.device.at5.ndcg) << ',' << fmt(r.device.at10.prec) << ','
          << fmt(r.device.at10.ndcg) << ',' << fmt(r.cr_model) << ',' << opt(r.cr_update) << ',' << opt(r.cr_total)
          << ',' << fmt(r.secs) << '\n';
    }
    return o.str();
}

std::string reports_to_json(const std::vector<RoundReport>& rounds) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rounds) {
        nlohmann::ordered_json j;
        j["slice"] = r.slice;
        j["strategy"] = r.strategy;
        j["r"] = r.r ? nlohmann::ordered_json(*r.r) : nlohmann::ordered_json("skip");
        j["beta"] = r.beta;
        j["mmd"] = opt_json(r.mmd);
        j["delta_bytes"] = r.delta_bytes;
        j["cum_bytes"] = r.cum_bytes;
        j["cloud_p5"] = r.cloud.at5.prec;
        j["cloud_n5"] = r.cloud.at5.ndcg;
        j["cloud_p10"] = r.cloud.at10.prec;
        j["cloud_n10"] = r.cloud.at10.ndcg;
        j["dev_p5"] = r.device.at5.prec;
        j["dev_n5"] = r.device.at5.ndcg;
        j["dev_p10"] = r.device.at10.prec;
        j["dev_n10"] = r.device.at10.ndcg;
        j["cr_model"] = r.cr_model;
        j["cr_update"] = opt_json(r.cr_update);
        j["cr_total"] = opt_json(r.cr_total);
        j["secs"] = r.secs;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

std::vector<RoundReport> reports_from_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != csv_header) throw Error(ErrorKind::data, "report CSV header is missing or wrong");
    std::vector<RoundReport> out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(trim(cell));
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 19) throw Error(ErrorKind::data, "report CSV row has " + std::to_string(f.size()) + " fields");
        RoundReport r;
        r.slice = parse_u64("slice", f[0]);
        r.strategy = f[1];
        if (f[2] != "skip") r.r = parse_u64("r", f[2]);
        r.beta = parse_u64("beta", f[3]);
        r.mmd = parse_opt_double("mmd", f[4]);
        r.delta_bytes = parse_u64("delta_bytes", f[5]);
        r.cum_bytes = parse_u64("cum_bytes", f[6]);
        r.cloud.at5 = {parse_double("cloud_p5", f[7]), parse_double("cloud_n5", f[8])};
        r.cloud.at10 = {parse_double("cloud_p10", f[9]), parse_double("cloud_n10", f[10])};
        r.device.at5 = {parse_double("dev_p5", f[11]), parse_double("dev_n5", f[12])};
        r.device.at10 = {parse_double("dev_p10", f[13]), parse_double("dev_n10", f[14])};
        r.cr_model = parse_double("cr_model", f[15]);
        r.cr_update = parse_opt_double("cr_update", f[16]);
        r.cr_total = parse_opt_double("cr_total", f[17]);
        r.secs = parse_double("secs", f[18]);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<RoundReport> reports_from_json(std::istream& in) {
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::data, std::string("report JSON does not parse: ") + e.what());
    }
    if (!arr.is_array()) throw Error(ErrorKind::data, "report JSON must be an array");
    std::vector<RoundReport> out;
    auto num = [](const nlohmann::json& j, const char* key) {
        if (!j.contains(key) || !j[key].is_number()) throw Error(ErrorKind::data, std::string("report JSON field ") + key);
        return j[key].get<double>();
    };
    auto onum = [&](const nlohmann::json& j, const char* key) -> std::optional<double> {
        if (j.contains(key) && j[key].is_null()) return std::nullopt;
        return num(j, key);
    };
    auto count = [](const nlohmann::json& j, const char* key) {
        if (!j.contains(key) || !j[key].is_number_unsigned())
            throw Error(ErrorKind::data, std::string("report JSON field ") + key);
        return j[key].get<std::uint64_t>();
    };
    for (const auto& j : arr) {
        RoundReport r;
        r.slice = count(j, "slice");
        if (!j.contains("strategy") || !j["strategy"].is_string()) throw Error(ErrorKind::data, "report JSON field strategy");
        r.strategy = j["strategy"].get<std::string>();
        if (!(j.contains("r") && j["r"].is_string() && j["r"] == "skip")) r.r = count(j, "r");
        r.beta = count(j, "beta");
        r.mmd = onum(j, "mmd");
        r.delta_bytes = count(j, "delta_bytes");
        r.cum_bytes = count(j, "cum_bytes");
        r.cloud.at5 = {num(j, "cloud_p5"), num(j, "cloud_n5")};
        r.cloud.at10 = {num(j, "cloud_p10"), num(j, "cloud_n10")};
        r.device.at5 = {num(j, "dev_p5"), num(j, "dev_n5")};
        r.device.at10 = {num(j, "dev_p10"), num(j, "dev_n10")};
        r.cr_model = num(j, "cr_model");
        r.cr_update = onum(j, "cr_update");
        r.cr_total = onum(j, "cr_total");
        r.secs = num(j, "secs");
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string metrics_row(const MetricsAt5And10& m) {
    return fmt(m.at5.prec) + "," + fmt(m.at5.ndcg) + "," + fmt(m.at10.prec) + "," + fmt(m.at10.ndcg);
}

// Loads every slice checkpoint from the output directory when all exist,
// otherwise trains the cloud inline.
CloudRun cloud_for(const ExperimentConfig& cfg, const SlicedData& data) {
    CloudRun run;
    for (std::size_t t = 1; t <= data.slices.size(); ++t) {
        const auto path = cfg.out_dir / slice_file("cloud", t, ".odck");
        if (!std::filesystem::exists(path)) return train_cloud(cfg, data);
    }
    for (std::size_t t = 1; t <= data.slices.size(); ++t) {
        const auto path = cfg.out_dir / slice_file("cloud", t, ".odck");
        RecModel m = decode_checkpoint(read_file(path));
        if (m.vocab_size() != data.vocab_size || m.dim() != cfg.dim || m.encoder.kind != cfg.encoder)
            throw Error(ErrorKind::data, "checkpoint " + path.string() + " does not match the config");
        run.metrics.push_back(evaluate_5_10(m.embeddings, m.encoder, data.test));
        run.final_loss.push_back(rec_loss(m, data.slices[t - 1].pairs, cfg.rec.l2));
        run.models.push_back(std::move(m));
    }
    return run;
}

}  // namespace

void cmd_synth(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.out_dir);
    SynthConfig sc = cfg.synth;
    sc.plan = cfg.plan();
    sc.test_fraction = cfg.test_fraction;
    Rng rng(mix_seed(cfg.seed, 0x53594e5448ULL));
    const SynthData synth = synth_generate(rng, sc);
    std::ostringstream events;
    write_event_log(events, synth_to_event_log(synth), '\t');
    write_text(cfg.out_dir / "events.tsv", events.str());
    save_dataset_cache(cfg.out_dir / "dataset.odds",
                       prepare_slices(synth.sessions, synth.vocab_size, sc.plan, cfg.test_fraction));
}

void cmd_train(const ExperimentConfig& cfg) {
    const SlicedData data = load_data(cfg);
    ensure_dir(cfg.out_dir);
    const CloudRun run = train_cloud(cfg, data);
    std::string csv = "slice,pairs,loss,cloud_p5,cloud_n5,cloud_p10,cloud_n10\n";
    for (std::size_t t = 1; t <= run.models.size(); ++t) {
        write_file(cfg.out_dir / slice_file("cloud", t, ".odck"), encode_checkpoint(run.models[t - 1]));
        csv += std::to_string(t) + "," + std::to_string(data.slices[t - 1].size()) + "," + fmt(run.final_loss[t - 1]) +
               "," + metrics_row(run.metrics[t - 1]) + "\n";
    }
    write_text(cfg.out_dir / "train_metrics.csv", csv);
}

void cmd_compress(const ExperimentConfig& cfg) {
    const SlicedData data = load_data(cfg);
    ensure_dir(cfg.out_dir);
    const CloudRun run = cloud_for(cfg, data);
    const std::size_t V = data.vocab_size;
    std::string csv = "slice,rel_mse,cr_model,model_bytes,table_bytes,cloud_p10,dev_p10\n";
    for (std::size_t t = 1; t <= run.models.size(); ++t) {
        const RecModel& m = run.models[t - 1];
        auto trained = train_codec(m.embeddings, cfg.codec_for_slice(t));
        CompressedModel cm{CodebookStore(cfg.codec.n, cfg.codec.k, round_to_f32(trained.store.rows())),
                           harden(trained.encoder, m.embeddings)};
        const Bytes bytes = encode_model(cm);
        write_file(cfg.out_dir / slice_file("model", t, ".odcm"), bytes);
        const Matrix table = reconstruct_table(cm.store, cm.codes);
        const auto dev = evaluate_5_10(table, m.encoder, data.test);
        csv += std::to_string(t) + "," + fmt(relative_mse(table, m.embeddings)) + "," +
               fmt(model_cr(V, cfg.dim, cfg.codec.n, cfg.codec.k)) + "," + std::to_string(bytes.size()) + "," +
               std::to_string(table_bytes(V, cfg.dim)) + "," + fmt(run.metrics[t - 1].at10.prec) + "," +
               fmt(dev.at10.prec) + "\n";
    }
    write_text(cfg.out_dir / "compress.csv", csv);
}

void cmd_simulate(const ExperimentConfig& cfg) {
    const SlicedData data = load_data(cfg);
    ensure_dir(cfg.out_dir);
    const CloudRun cloud = cloud_for(cfg, data);
    const SimulationOutput sim = simulate(cfg, data, cloud);
    ensure_dir(cfg.out_dir / "frames");
    for (std::size_t t = 1; t <= sim.frames.size(); ++t)
        if (!sim.frames[t - 1].empty())
            write_file(cfg.out_dir / "frames" / slice_file("delta", t, ".odup"), sim.frames[t - 1]);
    write_text(cfg.out_dir / "report.csv", reports_to_csv(sim.rounds));
    write_text(cfg.out_dir / "report.json", reports_to_json(sim.rounds));
    write_text(cfg.out_dir / "config.txt", cfg.to_text());
}

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same(const std::optional<double>& a, const std::optional<double>& b) {
    return a.has_value() == b.has_value() && (!a || same(*a, *b));
}

bool same(const MetricsAt5And10& a, const MetricsAt5And10& b) {
    return same(a.at5.prec, b.at5.prec) && same(a.at5.ndcg, b.at5.ndcg) && same(a.at10.prec, b.at10.prec) &&
           same(a.at10.ndcg, b.at10.ndcg);
}

bool same(const RoundReport& a, const RoundReport& b) {
    return a.slice == b.slice && a.strategy == b.strategy && a.r == b.r && a.beta == b.beta && same(a.mmd, b.mmd) &&
           a.delta_bytes == b.delta_bytes && a.cum_bytes == b.cum_bytes && same(a.cloud, b.cloud) &&
           same(a.device, b.device) && same(a.cr_model, b.cr_model) && same(a.cr_update, b.cr_update) &&
           same(a.cr_total, b.cr_total) && same(a.secs, b.secs);
}

std::vector<RoundReport> load_run(const std::filesystem::path& dir) {
    const auto csv_path = dir / "report.csv";
    const auto json_path = dir / "report.json";
    std::ifstream csv(csv_path);
    if (!csv) throw Error(ErrorKind::data, "missing report " + csv_path.string());
    std::ifstream json(json_path);
    if (!json) throw Error(ErrorKind::data, "missing report " + json_path.string());
    std::vector<RoundReport> a, b;
    try {
        a = reports_from_csv(csv);
    } catch (const Error& e) {
        throw Error(ErrorKind::data, "corrupt report " + csv_path.string() + ": " + e.what());
    }
    try {
        b = reports_from_json(json);
    } catch (const Error& e) {
        throw Error(ErrorKind::data, "corrupt report " + json_path.string() + ": " + e.what());
    }
    if (a.size() != b.size()) throw Error(ErrorKind::data, "reports in " + dir.string() + " have different lengths");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same(a[i], b[i]))
            throw Error(ErrorKind::data, "reports in " + dir.string() + " disagree on slice " + std::to_string(a[i].slice));
    return a;
}

}  // namespace

std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir) {
    if (run_dirs.empty()) config_error("report needs at least one run directory");
    std::vector<std::string> labels;
    std::vector<std::vector<RoundReport>> runs;
    for (const auto& dir : run_dirs) {
        runs.push_back(load_run(dir));
        auto label = dir.filename().string();
        if (label.empty()) label = dir.parent_path().filename().string();
        labels.push_back(label);
    }
    ensure_dir(out_dir);

    std::size_t max_slice = 0;
    for (const auto& run : runs)
        for (const auto& r : run) max_slice = std::max(max_slice, r.slice);

    // Accuracy against bytes, one column group per run, keyed by slice.
    std::string side = "slice";
    for (const auto& l : labels) side += "," + l + "_strategy," + l + "_r," + l + "_beta," + l + "_cum_bytes," + l + "_dev_p10," + l + "_dev_n10," + l + "_cloud_p10";
    side += "\n";
    std::ostringstream text;
    text << std::left << std::setw(6) << "slice";
    for (const auto& l : labels) text << std::setw(28) << (l + " dev_p10 / cum_bytes");
    text << "\n";
    for (std::size_t s = 1; s <= max_slice; ++s) {
        side += std::to_string(s);
        text << std::setw(6) << s;
        for (const auto& run : runs) {
            auto it = std::find_if(run.begin(), run.end(), [&](const RoundReport& r) { return r.slice == s; });
            if (it == run.end()) {
                side += ",,,,,,,";
                text << std::setw(28) << "-";
                continue;
            }
            side += "," + it->strategy + "," + (it->r ? std::to_string(*it->r) : "skip") + "," + std::to_string(it->beta) +
                    "," + std::to_string(it->cum_bytes) + "," + fmt(it->device.at10.prec) + "," +
                    fmt(it->device.at10.ndcg) + "," + fmt(it->cloud.at10.prec);
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4) << it->device.at10.prec << " / " << it->cum_bytes;
            text << std::setw(28) << cell.str();
        }
        side += "\n";
        text << "\n";
    }
    write_text(out_dir / "summary_by_slice.csv", side);

    // Accuracy against ratio, one row per run over the update rounds.
    std::string per_run = "run,strategy,r,beta,update_rounds,mean_dev_p10,mean_cloud_p10,update_bytes,total_bytes\n";
    text << "\nrun  strategy  r  beta  mean_dev_p10  total_bytes\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& run = runs[i];
        double dev = 0, cl = 0;
        std::size_t rounds = 0, total = run.empty() ? 0 : run.back().cum_bytes;
        std::string r_text, beta_text;
        std::size_t update_bytes = 0;
        for (const auto& r : run) {
            if (r.slice == 1) continue;
            ++rounds;
            dev += r.device.at10.prec;
            cl += r.cloud.at10.prec;
            update_bytes += r.delta_bytes;
            const std::string rv = r.r ? std::to_string(*r.r) : "skip";
            if (r_text.empty()) r_text = rv;
            else if (r_text != rv) r_text = "mixed";
            const std::string bv = std::to_string(r.beta);
            if (beta_text.empty()) beta_text = bv;
            else if (beta_text != bv) beta_text = "mixed";
        }
        const double mean_dev = rounds ? dev / static_cast<double>(rounds) : 0.0;
        const double mean_cloud = rounds ? cl / static_cast<double>(rounds) : 0.0;
        per_run += labels[i] + "," + (run.empty() ? "" : run.front().strategy) + "," + r_text + "," + beta_text + "," +
                   std::to_string(rounds) + "," + fmt(mean_dev) + "," + fmt(mean_cloud) + "," + std::to_string(update_bytes) +
                   "," + std::to_string(total) + "\n";
        text << labels[i] << "  " << (run.empty() ? "" : run.front().strategy) << "  " << r_text << "  " << beta_text
             << "  " << std::fixed << std::setprecision(4) << mean_dev << "  " << total << "\n";
    }
    write_text(out_dir / "summary_by_run.csv", per_run);
    write_text(out_dir / "summary.txt", text.str());
    return text.str();
}

}  // namespace odup
