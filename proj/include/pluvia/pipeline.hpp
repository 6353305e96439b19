#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pluvia/copula.hpp"
#include "pluvia/detail/csv.hpp"
#include "pluvia/errors.hpp"
#include "pluvia/ingest.hpp"
#include "pluvia/marginals.hpp"
#include "pluvia/mlp.hpp"
#include "pluvia/scenario.hpp"
#include "pluvia/selection.hpp"
#include "pluvia/tail_risk.hpp"

namespace pluvia {

inline constexpr const char* kPluviaVersion = "0.1.0";

// --- config schema -----------------------------------------------------------

namespace detail_pipeline {

inline void check_keys(const nlohmann::json& j, const std::string& pointer,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config " + pointer + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("config " + pointer + "/" + key + ": unknown key");
        }
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

}  // namespace detail_pipeline

struct ZGridSpec {
    std::string mode = "auto";  // auto | range | explicit
    std::size_t count = 50;
    double min = 0.0;
    double max = 0.0;
    std::string spacing = "log";  // for range mode
    std::vector<double> values;   // for explicit mode
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string city = "city";
    std::string output_dir = "out";

    WorldConfig world;

    // ingest
    std::string daily_csv;     // defaults to the simulate artifact
    std::string scenario_csv;  // defaults to the simulate artifact
    std::string week_origin = "first";
    ClaimAggregation aggregation = ClaimAggregation::Mean;
    std::vector<std::string> scenario_ids = {"s1", "s2", "s3", "s4", "s5", "s6"};

    // network
    NetworkConfig network;
    std::vector<std::string> columns;  // empty -> use the selection winner

    // selection
    double selection_fraction = 0.8;
    std::vector<std::uint64_t> selection_seeds = {1};

    // marginals
    std::vector<MarginalFamily> families = {MarginalFamily::Lognormal};
    double exposure = 1000.0;

    // copula
    std::string copula_estimator = "tau";  // tau | cml
    std::size_t bootstrap_reps = 500;

    // risk
    ZGridSpec z_grid;
    std::size_t mc_draws = 100000;
    std::string compare_with;  // optional path to another run's risk_curve.csv

    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::json canonical_json() const;
};

inline PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    using detail_pipeline::check_keys;
    using detail_pipeline::get_or;

    check_keys(j, "", {"seed", "city", "output_dir", "simulate", "ingest", "network", "selection",
                       "marginals", "copula", "risk"});
    PipelineConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.city = get_or<std::string>(j, "city", "city");
    c.output_dir = get_or<std::string>(j, "output_dir", "out");

    if (j.contains("simulate")) {
        const auto& s = j.at("simulate");
        check_keys(s, "/simulate",
                   {"n_years", "storm_rate", "storm_shape", "storm_scale", "noise_scale", "theta_true",
                    "trend_multipliers", "scenario_ids", "baseline", "x_weight", "x_lag1_weight",
                    "x_lag2_weight", "d_weight"});
        c.world.n_years = get_or<int>(s, "n_years", c.world.n_years);
        c.world.storm_rate = get_or<double>(s, "storm_rate", c.world.storm_rate);
        c.world.storm_shape = get_or<double>(s, "storm_shape", c.world.storm_shape);
        c.world.storm_scale = get_or<double>(s, "storm_scale", c.world.storm_scale);
        c.world.noise_scale = get_or<double>(s, "noise_scale", c.world.noise_scale);
        c.world.theta_true = get_or<double>(s, "theta_true", c.world.theta_true);
        c.world.link.baseline = get_or<double>(s, "baseline", c.world.link.baseline);
        c.world.link.x_weight = get_or<double>(s, "x_weight", c.world.link.x_weight);
        c.world.link.x_lag1_weight = get_or<double>(s, "x_lag1_weight", c.world.link.x_lag1_weight);
        c.world.link.x_lag2_weight = get_or<double>(s, "x_lag2_weight", c.world.link.x_lag2_weight);
        c.world.link.d_weight = get_or<double>(s, "d_weight", c.world.link.d_weight);
        if (s.contains("trend_multipliers")) {
            c.world.trend_multipliers = s.at("trend_multipliers").get<std::vector<double>>();
            c.world.n_scenarios = c.world.trend_multipliers.size();
        }
        if (s.contains("scenario_ids")) {
            c.world.scenario_ids = s.at("scenario_ids").get<std::vector<std::string>>();
            c.world.n_scenarios = c.world.scenario_ids.size();
        }
    }
    c.world.seed = c.seed;

    if (j.contains("ingest")) {
        const auto& s = j.at("ingest");
        check_keys(s, "/ingest", {"daily_csv", "scenario_csv", "week_origin", "aggregation", "scenario_ids"});
        c.daily_csv = get_or<std::string>(s, "daily_csv", "");
        c.scenario_csv = get_or<std::string>(s, "scenario_csv", "");
        c.week_origin = get_or<std::string>(s, "week_origin", "first");
        const std::string agg = get_or<std::string>(s, "aggregation", "mean");
        if (agg == "mean") {
            c.aggregation = ClaimAggregation::Mean;
        } else if (agg == "total") {
            c.aggregation = ClaimAggregation::Total;
        } else {
            throw ConfigError("config /ingest/aggregation: expected 'mean' or 'total'");
        }
        if (s.contains("scenario_ids")) c.scenario_ids = s.at("scenario_ids").get<std::vector<std::string>>();
    } else {
        c.scenario_ids = c.world.scenario_ids;
    }

    if (j.contains("network")) {
        const auto& s = j.at("network");
        check_keys(s, "/network",
                   {"hidden_layers", "dropout_rate", "l2_lambda", "learning_rate", "epochs", "batch_size",
                    "optimizer", "columns"});
        c.network.hidden_layers = get_or<std::vector<int>>(s, "hidden_layers", c.network.hidden_layers);
        c.network.dropout_rate = get_or<double>(s, "dropout_rate", c.network.dropout_rate);
        c.network.l2_lambda = get_or<double>(s, "l2_lambda", c.network.l2_lambda);
        c.network.learning_rate = get_or<double>(s, "learning_rate", c.network.learning_rate);
        c.network.epochs = get_or<int>(s, "epochs", c.network.epochs);
        c.network.batch_size = get_or<int>(s, "batch_size", c.network.batch_size);
        const std::string opt = get_or<std::string>(s, "optimizer", "adam");
        if (opt == "adam") {
            c.network.optimizer = Optimizer::Adam;
        } else if (opt == "sgd") {
            c.network.optimizer = Optimizer::Sgd;
        } else {
            throw ConfigError("config /network/optimizer: expected 'adam' or 'sgd'");
        }
        if (s.contains("columns")) c.columns = s.at("columns").get<std::vector<std::string>>();
    }
    c.network.seed = c.seed;

    if (j.contains("selection")) {
        const auto& s = j.at("selection");
        check_keys(s, "/selection", {"fraction", "seeds"});
        c.selection_fraction = get_or<double>(s, "fraction", 0.8);
        if (s.contains("seeds")) c.selection_seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    }

    if (j.contains("marginals")) {
        const auto& s = j.at("marginals");
        check_keys(s, "/marginals", {"families", "exposure"});
        if (s.contains("families")) {
            c.families.clear();
            for (const auto& name : s.at("families")) c.families.push_back(family_from_name(name.get<std::string>()));
            if (c.families.empty()) throw ConfigError("config /marginals/families: empty list");
        }
        c.exposure = get_or<double>(s, "exposure", 1000.0);
    }

    if (j.contains("copula")) {
        const auto& s = j.at("copula");
        check_keys(s, "/copula", {"estimator", "bootstrap_reps"});
        c.copula_estimator = get_or<std::string>(s, "estimator", "tau");
        if (c.copula_estimator != "tau" && c.copula_estimator != "cml") {
            throw ConfigError("config /copula/estimator: expected 'tau' or 'cml'");
        }
        c.bootstrap_reps = get_or<std::size_t>(s, "bootstrap_reps", 500);
    }

    if (j.contains("risk")) {
        const auto& s = j.at("risk");
        check_keys(s, "/risk", {"z_grid", "mc_draws", "compare_with"});
        if (s.contains("z_grid")) {
            const auto& g = s.at("z_grid");
            check_keys(g, "/risk/z_grid", {"mode", "count", "min", "max", "spacing", "values"});
            c.z_grid.mode = detail_pipeline::get_or<std::string>(g, "mode", "auto");
            c.z_grid.count = detail_pipeline::get_or<std::size_t>(g, "count", 50);
            c.z_grid.min = detail_pipeline::get_or<double>(g, "min", 0.0);
            c.z_grid.max = detail_pipeline::get_or<double>(g, "max", 0.0);
            c.z_grid.spacing = detail_pipeline::get_or<std::string>(g, "spacing", "log");
            if (g.contains("values")) c.z_grid.values = g.at("values").get<std::vector<double>>();
            if (c.z_grid.mode != "auto" && c.z_grid.mode != "range" && c.z_grid.mode != "explicit") {
                throw ConfigError("config /risk/z_grid/mode: expected 'auto', 'range' or 'explicit'");
            }
        }
        c.mc_draws = detail_pipeline::get_or<std::size_t>(s, "mc_draws", 100000);
        c.compare_with = detail_pipeline::get_or<std::string>(s, "compare_with", "");
    }

    return c;
}

inline nlohmann::json PipelineConfig::canonical_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["city"] = city;
    j["output_dir"] = output_dir;
    j["simulate"] = {{"n_years", world.n_years},
                     {"storm_rate", world.storm_rate},
                     {"storm_shape", world.storm_shape},
                     {"storm_scale", world.storm_scale},
                     {"noise_scale", world.noise_scale},
                     {"theta_true", world.theta_true},
                     {"trend_multipliers", world.trend_multipliers},
                     {"scenario_ids", world.scenario_ids},
                     {"baseline", world.link.baseline},
                     {"x_weight", world.link.x_weight},
                     {"x_lag1_weight", world.link.x_lag1_weight},
                     {"x_lag2_weight", world.link.x_lag2_weight},
                     {"d_weight", world.link.d_weight}};
    j["ingest"] = {{"daily_csv", daily_csv},
                   {"scenario_csv", scenario_csv},
                   {"week_origin", week_origin},
                   {"aggregation", aggregation == ClaimAggregation::Mean ? "mean" : "total"},
                   {"scenario_ids", scenario_ids}};
    j["network"] = {{"hidden_layers", network.hidden_layers},
                    {"dropout_rate", network.dropout_rate},
                    {"l2_lambda", network.l2_lambda},
                    {"learning_rate", network.learning_rate},
                    {"epochs", network.epochs},
                    {"batch_size", network.batch_size},
                    {"optimizer", network.optimizer == Optimizer::Adam ? "adam" : "sgd"},
                    {"columns", columns}};
    j["selection"] = {{"fraction", selection_fraction}, {"seeds", selection_seeds}};
    nlohmann::json fam = nlohmann::json::array();
    for (auto f : families) fam.push_back(family_name(f));
    j["marginals"] = {{"families", fam}, {"exposure", exposure}};
    j["copula"] = {{"estimator", copula_estimator}, {"bootstrap_reps", bootstrap_reps}};
    j["risk"] = {{"z_grid",
                  {{"mode", z_grid.mode},
                   {"count", z_grid.count},
                   {"min", z_grid.min},
                   {"max", z_grid.max},
                   {"spacing", z_grid.spacing},
                   {"values", z_grid.values}}},
                 {"mc_draws", mc_draws},
                 {"compare_with", compare_with}};
    return j;
}

// --- artifacts and manifests -----------------------------------------------------

namespace detail_pipeline {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail_pipeline

struct Artifacts {
    std::filesystem::path dir;

    std::string control_daily() const { return (dir / "control_daily.csv").string(); }
    std::string scenario_weekly() const { return (dir / "scenario_weekly.csv").string(); }
    std::string world_truth() const { return (dir / "world_truth.json").string(); }
    std::string weekly_control() const { return (dir / "weekly_control.csv").string(); }
    std::string selection_csv_path() const { return (dir / "selection.csv").string(); }
    std::string selection_json_path() const { return (dir / "selection.json").string(); }
    std::string model() const { return (dir / "model.json").string(); }
    std::string predictions() const { return (dir / "predictions.csv").string(); }
    std::string marginals() const { return (dir / "marginals.json").string(); }
    std::string copula() const { return (dir / "copula.json").string(); }
    std::string risk_curve_path() const { return (dir / "risk_curve.csv").string(); }
    std::string comparison() const { return (dir / "comparison.csv").string(); }
    std::string comparison_summary() const { return (dir / "comparison_summary.json").string(); }
    std::string density_curves() const { return (dir / "density_curves.csv").string(); }

    void require(const std::string& path, const std::string& producing_command) const {
        if (!std::filesystem::exists(path)) {
            throw DataError("missing artifact '" + path + "': run `" + producing_command + "` first");
        }
    }
};

// Runs one pipeline stage and records a manifest keyed by the digest of the
// canonical config plus all consumed inputs. Outputs carry no timestamps, so
// a rerun with identical config and inputs is byte-identical.
class PipelineRunner {
public:
    PipelineRunner(PipelineConfig config, bool quiet = false) : config_(std::move(config)), quiet_(quiet) {
        artifacts_.dir = config_.output_dir;
        std::filesystem::create_directories(artifacts_.dir);
        std::filesystem::create_directories(artifacts_.dir / "manifest");
    }

    const Artifacts& artifacts() const { return artifacts_; }
    const PipelineConfig& config() const { return config_; }

    void run(const std::string& command, const std::vector<std::string>& scenario_filter = {}) {
        inputs_.clear();
        outputs_.clear();
        if (command == "simulate") {
            simulate();
        } else if (command == "ingest") {
            ingest();
        } else if (command == "select") {
            select();
        } else if (command == "train") {
            train_model();
        } else if (command == "predict") {
            predict_scenarios(scenario_filter);
        } else if (command == "fit-marginals") {
            fit_marginals(scenario_filter);
        } else if (command == "fit-copula") {
            fit_copula(scenario_filter);
        } else if (command == "risk") {
            risk();
        } else if (command == "report") {
            report();
        } else {
            throw ConfigError("unknown command '" + command + "'");
        }
        write_manifest(command);
    }

private:
    PipelineConfig config_;
    bool quiet_ = false;
    Artifacts artifacts_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;

    void note(const std::string& msg) const {
        if (!quiet_) std::fprintf(stdout, "%s\n", msg.c_str());
    }

    void emit(const std::string& path, const std::string& content) {
        detail::write_text(path, content);
        outputs_.push_back(path);
    }

    std::string consume(const std::string& path, const std::string& producing_command) {
        artifacts_.require(path, producing_command);
        inputs_.push_back(path);
        return path;
    }

    void write_manifest(const std::string& command) {
        std::uint64_t digest = detail_pipeline::fnv1a(config_.canonical_json().dump());
        nlohmann::json input_digests = nlohmann::json::object();
        for (const auto& path : inputs_) {
            const auto bytes = detail_pipeline::read_file(path);
            const auto file_digest = detail_pipeline::fnv1a(bytes);
            digest = detail_pipeline::fnv1a(detail_pipeline::hex64(file_digest), digest);
            input_digests[std::filesystem::path(path).filename().string()] = detail_pipeline::hex64(file_digest);
        }
        nlohmann::json m;
        m["command"] = command;
        m["version"] = kPluviaVersion;
        m["seed"] = config_.seed;
        m["config_digest"] = detail_pipeline::hex64(detail_pipeline::fnv1a(config_.canonical_json().dump()));
        m["inputs"] = input_digests;
        nlohmann::json outs = nlohmann::json::array();
        for (const auto& o : outputs_) outs.push_back(std::filesystem::path(o).filename().string());
        m["outputs"] = outs;
        const auto path =
            (artifacts_.dir / "manifest" / (command + "-" + detail_pipeline::hex64(digest) + ".json")).string();
        detail::write_text(path, m.dump(2) + "\n");
    }

    std::string control_daily_path() const {
        return config_.daily_csv.empty() ? artifacts_.control_daily() : config_.daily_csv;
    }
    std::string scenario_csv_path() const {
        return config_.scenario_csv.empty() ? artifacts_.scenario_weekly() : config_.scenario_csv;
    }

    WeeklySeries load_weekly_control() { return parse_weekly_csv(consume(artifacts_.weekly_control(), "ingest")); }

    // --- stages -------------------------------------------------------------

    void simulate() {
        config_.world.validate();
        const auto days = generate_control_daily(config_.world);
        emit(artifacts_.control_daily(), daily_csv_string(days));
        const auto scenarios = generate_scenario_weekly(config_.world);
        emit(artifacts_.scenario_weekly(), scenario_csv_string(scenarios));

        nlohmann::json truth;
        truth["theta_true"] = config_.world.theta_true;
        truth["link"] = {{"baseline", config_.world.link.baseline},
                         {"x_weight", config_.world.link.x_weight},
                         {"x_lag1_weight", config_.world.link.x_lag1_weight},
                         {"x_lag2_weight", config_.world.link.x_lag2_weight},
                         {"d_weight", config_.world.link.d_weight}};
        truth["noise_scale"] = config_.world.noise_scale;
        truth["trend_multipliers"] = config_.world.trend_multipliers;
        emit(artifacts_.world_truth(), truth.dump(2) + "\n");
        note("simulate: wrote " + artifacts_.control_daily());
    }

    void ingest() {
        const auto daily = parse_daily_csv(consume(control_daily_path(), "simulate"));
        std::optional<Date> origin;
        if (config_.week_origin != "first") origin = parse_date(config_.week_origin, "config /ingest/week_origin");
        const auto weeks = aggregate_weekly(daily, origin, config_.aggregation);
        emit(artifacts_.weekly_control(), weekly_csv_string(weeks));
        note("ingest: " + std::to_string(weeks.size()) + " weeks");
    }

    void select() {
        const auto weeks = load_weekly_control();
        const auto report =
            run_selection(weeks, enumerate_candidates(), config_.network, config_.selection_fraction,
                          config_.selection_seeds);
        emit(artifacts_.selection_csv_path(), selection_csv(report));
        emit(artifacts_.selection_json_path(), selection_to_json(report).dump(2) + "\n");
        note("select: winner model " + std::to_string(report.winner_id));
    }

    std::vector<std::string> resolve_columns() {
        if (!config_.columns.empty()) return config_.columns;
        const auto path = consume(artifacts_.selection_json_path(), "select");
        const auto report = selection_from_json(nlohmann::json::parse(detail_pipeline::read_file(path)));
        for (const auto& c : report.candidates) {
            if (c.model_id == report.winner_id) return c.columns;
        }
        throw DataError("selection.json does not contain the winning candidate");
    }

    void train_model() {
        const auto weeks = load_weekly_control();
        const auto columns = resolve_columns();
        auto frame = build_features(weeks, columns);
        auto [train_frame, test_frame] = split_train_test(frame, config_.selection_fraction);
        const auto scaler = fit_scaler(train_frame);
        apply_scaler(train_frame, scaler);
        NetworkConfig net_config = config_.network;
        net_config.input_dim = static_cast<int>(columns.size());
        const auto net = train(train_frame, net_config);
        emit(artifacts_.model(), network_to_json(net).dump(2) + "\n");
        note("train: final loss " + std::to_string(net.final_loss));
    }

    std::vector<ScenarioSeries> load_scenarios(const std::vector<std::string>& filter) {
        auto scenarios = parse_scenario_csv(consume(scenario_csv_path(), "simulate"), config_.scenario_ids);
        if (!filter.empty()) {
            std::vector<ScenarioSeries> kept;
            for (const auto& id : filter) {
                const auto it = std::find_if(scenarios.begin(), scenarios.end(),
                                             [&](const ScenarioSeries& s) { return s.scenario_id == id; });
                if (it == scenarios.end()) throw DataError("scenario filter: unknown scenario '" + id + "'");
                kept.push_back(*it);
            }
            scenarios = std::move(kept);
        }
        return scenarios;
    }

    void predict_scenarios(const std::vector<std::string>& filter) {
        const auto net =
            network_from_json(nlohmann::json::parse(detail_pipeline::read_file(consume(artifacts_.model(), "train"))));
        const auto scenarios = load_scenarios(filter);

        std::ostringstream out;
        out << "week_start,scenario_id,nhat\n";
        for (const auto& s : scenarios) {
            auto frame = build_features(s.weeks, net.columns, /*with_target=*/false);
            const auto nhat = predict(net, frame);
            for (Eigen::Index i = 0; i < nhat.size(); ++i) {
                out << format_date(frame.week_start[static_cast<std::size_t>(i)]) << ',' << s.scenario_id << ','
                    << detail::format_double(nhat(i)) << '\n';
            }
        }
        emit(artifacts_.predictions(), out.str());
        note("predict: " + std::to_string(scenarios.size()) + " scenarios");
    }

    struct PredictionTable {
        std::vector<std::string> scenario_ids;
        std::vector<std::vector<double>> matrix;  // rows = weeks, cols = scenarios
        std::map<std::string, std::vector<double>> by_scenario;
    };

    PredictionTable load_predictions() {
        const auto path = consume(artifacts_.predictions(), "predict");
        const auto lines = detail::read_lines(path);
        if (lines.empty() || lines[0] != "week_start,scenario_id,nhat") {
            throw DataError(path + ": header must be 'week_start,scenario_id,nhat'");
        }
        PredictionTable table;
        std::map<std::string, std::vector<double>> cols;
        std::vector<std::string> order;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = detail::split_csv_line(lines[i]);
            if (f.size() != 3) throw DataError(path + ": line " + std::to_string(i + 1) + ": expected 3 fields");
            if (!cols.count(f[1])) order.push_back(f[1]);
            cols[f[1]].push_back(detail::parse_double(f[2], path));
        }
        if (order.empty()) throw DataError(path + ": no predictions");
        const std::size_t n = cols[order.front()].size();
        for (const auto& id : order) {
            if (cols[id].size() != n) throw DataError(path + ": scenarios have unequal week counts");
        }
        table.scenario_ids = order;
        table.by_scenario = cols;
        table.matrix.assign(n, std::vector<double>(order.size()));
        for (std::size_t c = 0; c < order.size(); ++c) {
            for (std::size_t r = 0; r < n; ++r) table.matrix[r][c] = cols[order[c]][r];
        }
        return table;
    }

    MarginalFit fit_sample(const std::vector<double>& sample) {
        const bool discrete = family_is_discrete(config_.families.front());
        const auto data = discrete ? prepare_counts(sample, config_.exposure) : sample;
        MarginalFit fit = config_.families.size() == 1 ? fit_mle(data, config_.families.front())
                                                       : select_family(data, config_.families);
        fit.exposure = discrete ? config_.exposure : 1.0;
        return fit;
    }

    void fit_marginals(const std::vector<std::string>& filter) {
        const auto table = load_predictions();
        nlohmann::json scenarios = nlohmann::json::array();
        for (const auto& id : table.scenario_ids) {
            if (!filter.empty() && std::find(filter.begin(), filter.end(), id) == filter.end()) continue;
            auto fit = fit_sample(table.by_scenario.at(id));
            nlohmann::json entry = marginal_to_json(fit);
            entry["scenario_id"] = id;
            scenarios.push_back(entry);
        }
        nlohmann::json doc;
        doc["scenarios"] = scenarios;
        // control-period marginal from observed weekly claims, when available
        if (std::filesystem::exists(artifacts_.weekly_control())) {
            const auto weeks = load_weekly_control();
            std::vector<double> observed;
            for (const auto& w : weeks) observed.push_back(w.n);
            doc["control"] = marginal_to_json(fit_sample(observed));
        }
        emit(artifacts_.marginals(), doc.dump(2) + "\n");
        note("fit-marginals: " + std::to_string(scenarios.size()) + " scenario fits");
    }

    void fit_copula(const std::vector<std::string>& filter) {
        auto table = load_predictions();
        if (!filter.empty()) {
            PredictionTable kept;
            kept.scenario_ids = filter;
            for (const auto& id : filter) {
                if (!table.by_scenario.count(id)) throw DataError("scenario filter: unknown scenario '" + id + "'");
                kept.by_scenario[id] = table.by_scenario[id];
            }
            const std::size_t n = kept.by_scenario[filter.front()].size();
            kept.matrix.assign(n, std::vector<double>(filter.size()));
            for (std::size_t c = 0; c < filter.size(); ++c)
                for (std::size_t r = 0; r < n; ++r) kept.matrix[r][c] = kept.by_scenario[filter[c]][r];
            table = std::move(kept);
        }
        const auto p = pseudo_observations(table.matrix);
        const CopulaFit fit = config_.copula_estimator == "cml"
                                  ? estimate_theta_cml(p, config_.bootstrap_reps, config_.seed)
                                  : estimate_theta_tau(p, config_.bootstrap_reps, config_.seed);
        emit(artifacts_.copula(), copula_to_json(fit).dump(2) + "\n");
        note("fit-copula: theta " + std::to_string(fit.theta) + " se " + std::to_string(fit.se));
    }

    std::vector<double> resolve_z_grid(const PredictionTable& table) {
        if (config_.z_grid.mode == "explicit") {
            if (config_.z_grid.values.empty()) throw ConfigError("config /risk/z_grid/values: empty explicit grid");
            return config_.z_grid.values;
        }
        if (config_.z_grid.mode == "range") {
            if (!(config_.z_grid.max > config_.z_grid.min)) {
                throw ConfigError("config /risk/z_grid: range mode needs max > min");
            }
            std::vector<double> grid;
            const std::size_t count = std::max<std::size_t>(2, config_.z_grid.count);
            for (std::size_t i = 0; i < count; ++i) {
                const double t = static_cast<double>(i) / static_cast<double>(count - 1);
                if (config_.z_grid.spacing == "linear") {
                    grid.push_back(config_.z_grid.min + t * (config_.z_grid.max - config_.z_grid.min));
                } else {
                    if (config_.z_grid.min <= 0.0) throw ConfigError("config /risk/z_grid: log spacing needs min > 0");
                    grid.push_back(config_.z_grid.min *
                                   std::exp(t * std::log(config_.z_grid.max / config_.z_grid.min)));
                }
            }
            return grid;
        }
        std::vector<double> pooled;
        for (const auto& row : table.matrix)
            for (double v : row) pooled.push_back(v);
        return default_z_grid(pooled, config_.z_grid.count);
    }

    void risk() {
        const auto table = load_predictions();
        const auto marginals_doc =
            nlohmann::json::parse(detail_pipeline::read_file(consume(artifacts_.marginals(), "fit-marginals")));
        const auto copula_fit =
            copula_from_json(nlohmann::json::parse(detail_pipeline::read_file(consume(artifacts_.copula(), "fit-copula"))));

        RiskQuery query;
        query.thresholds = resolve_z_grid(table);
        for (const auto& entry : marginals_doc.at("scenarios")) query.marginals.push_back(marginal_from_json(entry));
        query.copula = copula_fit;
        query.mc_draws = config_.mc_draws;
        query.mc_seed = detail::derive_seed(config_.seed, 0x7269736b);
        query.city = config_.city;
        query.period = "scenario";
        const auto curve = risk_curve(query);

        std::string csv = risk_curve_csv(curve);
        if (marginals_doc.contains("control")) {
            const auto control_fit = marginal_from_json(marginals_doc.at("control"));
            const auto control_curve =
                univariate_tail_curve(query.thresholds, control_fit, config_.city, "control");
            // append without repeating the header
            const auto control_csv = risk_curve_csv(control_curve);
            csv += control_csv.substr(control_csv.find('\n') + 1);
        }
        emit(artifacts_.risk_curve_path(), csv);
        note("risk: " + std::to_string(query.thresholds.size()) + " thresholds, theta " +
             std::to_string(copula_fit.theta));
    }

    void report() {
        const auto table = load_predictions();
        const auto marginals_doc =
            nlohmann::json::parse(detail_pipeline::read_file(consume(artifacts_.marginals(), "fit-marginals")));

        // density-curve data per scenario (plot data, no rendering)
        std::ostringstream density;
        density << "scenario_id,y,density\n";
        std::size_t idx = 0;
        for (const auto& entry : marginals_doc.at("scenarios")) {
            const auto fit = marginal_from_json(entry);
            const std::string id = entry.at("scenario_id").get<std::string>();
            const auto& sample = table.by_scenario.count(id) ? table.by_scenario.at(id)
                                                             : table.by_scenario.at(table.scenario_ids.at(idx));
            std::vector<double> sorted(sample);
            std::sort(sorted.begin(), sorted.end());
            const double lo = std::max(1e-9, sorted.front() * 0.5);
            const double hi = sorted.back() * 1.5;
            for (int i = 0; i < 120; ++i) {
                const double y = lo + (hi - lo) * static_cast<double>(i) / 119.0;
                double dens;
                if (family_is_discrete(fit.family)) {
                    // pmf of the rescaled count, mapped back to the original axis
                    const double k = std::round(y * fit.exposure);
                    dens = family_pmf_or_pdf(fit.family, fit.params, k) * fit.exposure;
                } else {
                    dens = family_pmf_or_pdf(fit.family, fit.params, y);
                }
                density << id << ',' << detail::format_double(y) << ',' << detail::format_double(dens) << '\n';
            }
            ++idx;
        }
        emit(artifacts_.density_curves(), density.str());

        // no-op without a risk curve; with one, bundle and optionally compare
        if (std::filesystem::exists(artifacts_.risk_curve_path())) {
            inputs_.push_back(artifacts_.risk_curve_path());
            if (!config_.compare_with.empty()) {
                const auto own = parse_risk_curve_csv(artifacts_.risk_curve_path());
                const auto other = parse_risk_curve_csv(consume(config_.compare_with, "risk (other city)"));
                const auto own_scenario = std::find_if(own.begin(), own.end(),
                                                       [](const RiskCurve& c) { return c.period == "scenario"; });
                const auto other_scenario = std::find_if(other.begin(), other.end(),
                                                         [](const RiskCurve& c) { return c.period == "scenario"; });
                if (own_scenario == own.end() || other_scenario == other.end()) {
                    throw DataError("report: both risk curves need scenario-period rows for comparison");
                }
                const auto cmp = compare_risk(*own_scenario, *other_scenario);
                emit(artifacts_.comparison(), comparison_csv(cmp));
                nlohmann::json summary;
                summary["city_a"] = own_scenario->city;
                summary["city_b"] = other_scenario->city;
                summary["dominance_b_over_a"] = cmp.dominance_b_over_a;
                emit(artifacts_.comparison_summary(), summary.dump(2) + "\n");
            }
        }
        note("report: density curves for " + std::to_string(idx) + " scenarios");
    }
};

}  // namespace pluvia
