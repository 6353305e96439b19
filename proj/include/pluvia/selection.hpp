#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pluvia/detail/csv.hpp"
#include "pluvia/detail/stats.hpp"
#include "pluvia/errors.hpp"
#include "pluvia/ingest.hpp"
#include "pluvia/mlp.hpp"

namespace pluvia {

struct CandidateSpec {
    int model_id = 0;
    std::vector<std::string> columns;
};

// The four candidate predictor sets under comparison.
inline std::vector<CandidateSpec> enumerate_candidates() {
    return {
        {1, {"X_t", "X_t-1", "X_t-2"}},
        {2, {"X_t", "X_t-1", "D_t"}},
        {3, {"X_t", "X_t-1", "X_t-2", "D_t"}},
        {4, {"X_t", "X_t-1", "X_t-2", "D_t", "D_t-1"}},
    };
}

struct CandidateResult {
    int model_id = 0;
    std::vector<std::string> columns;
    double rmse = 0.0;                // median over seeds when several are used
    std::vector<double> rmse_by_seed;
};

struct SelectionReport {
    std::vector<CandidateResult> candidates;
    int winner_id = 0;
    std::vector<std::uint64_t> seeds;
    double fraction = 0.8;
};

// Held-out evaluation of one candidate: build features -> chronological
// split -> standardize on the training split -> train -> RMSE on the tail.
inline double evaluate_candidate(const WeeklySeries& series, const CandidateSpec& spec, NetworkConfig config,
                                 double fraction) {
    auto frame = build_features(series, spec.columns);
    auto [train_frame, test_frame] = split_train_test(frame, fraction);
    if (test_frame.rows() == 0) throw DataError("evaluate_candidate: empty held-out split");
    const auto scaler = fit_scaler(train_frame);
    apply_scaler(train_frame, scaler);
    apply_scaler(test_frame, scaler);
    config.input_dim = static_cast<int>(spec.columns.size());
    const auto net = train(train_frame, config);
    return rmse(predict(net, test_frame), test_frame.target);
}

// Argmin over finite RMSEs; ties break towards the smaller model id.
inline SelectionReport select_best(std::vector<CandidateResult> results, std::vector<std::uint64_t> seeds,
                                   double fraction) {
    if (results.empty()) throw DataError("select_best: no candidates evaluated");
    for (const auto& r : results) {
        if (!std::isfinite(r.rmse)) {
            throw NumericError("select_best: non-finite RMSE for model " + std::to_string(r.model_id));
        }
    }
    std::stable_sort(results.begin(), results.end(),
                     [](const CandidateResult& a, const CandidateResult& b) { return a.model_id < b.model_id; });
    int winner = results.front().model_id;
    double best = results.front().rmse;
    for (const auto& r : results) {
        if (r.rmse < best) {
            best = r.rmse;
            winner = r.model_id;
        }
    }
    SelectionReport report;
    report.candidates = std::move(results);
    report.winner_id = winner;
    report.seeds = std::move(seeds);
    report.fraction = fraction;
    return report;
}

// Evaluates every candidate under every seed (one shared seed list across
// candidates, so differences reflect features rather than initialization
// luck) and ranks the per-candidate medians.
inline SelectionReport run_selection(const WeeklySeries& series, const std::vector<CandidateSpec>& specs,
                                     NetworkConfig config, double fraction,
                                     const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("run_selection: need at least one seed");
    std::vector<CandidateResult> results;
    results.reserve(specs.size());
    for (const auto& spec : specs) {
        CandidateResult r;
        r.model_id = spec.model_id;
        r.columns = spec.columns;
        for (std::uint64_t seed : seeds) {
            config.seed = seed;
            r.rmse_by_seed.push_back(evaluate_candidate(series, spec, config, fraction));
        }
        r.rmse = detail::median(r.rmse_by_seed);
        results.push_back(std::move(r));
    }
    return select_best(std::move(results), seeds, fraction);
}

inline std::string selection_csv(const SelectionReport& report) {
    std::ostringstream out;
    out << "model_id,rmse,winner\n";
    for (const auto& c : report.candidates) {
        out << c.model_id << ',' << detail::format_double(c.rmse) << ','
            << (c.model_id == report.winner_id ? 1 : 0) << '\n';
    }
    return out.str();
}

inline nlohmann::json selection_to_json(const SelectionReport& report) {
    nlohmann::json candidates = nlohmann::json::array();
    for (const auto& c : report.candidates) {
        candidates.push_back({{"model_id", c.model_id},
                              {"columns", c.columns},
                              {"rmse", c.rmse},
                              {"rmse_by_seed", c.rmse_by_seed}});
    }
    return nlohmann::json{{"candidates", candidates},
                          {"winner_id", report.winner_id},
                          {"seeds", report.seeds},
                          {"fraction", report.fraction}};
}

inline SelectionReport selection_from_json(const nlohmann::json& j) {
    SelectionReport report;
    for (const auto& c : j.at("candidates")) {
        CandidateResult r;
        r.model_id = c.at("model_id").get<int>();
        r.columns = c.at("columns").get<std::vector<std::string>>();
        r.rmse = c.at("rmse").get<double>();
        r.rmse_by_seed = c.at("rmse_by_seed").get<std::vector<double>>();
        report.candidates.push_back(std::move(r));
    }
    report.winner_id = j.at("winner_id").get<int>();
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    report.fraction = j.at("fraction").get<double>();
    return report;
}

}  // namespace pluvia
