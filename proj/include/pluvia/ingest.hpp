#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "pluvia/detail/csv.hpp"
#include "pluvia/errors.hpp"

namespace pluvia {

using Date = std::chrono::sys_days;

inline Date parse_date(std::string_view text, const std::string& context) {
    int y = 0, m = 0, d = 0;
    char extra = 0;
    const std::string s(text);
    if (std::sscanf(s.c_str(), "%d-%d-%d%c", &y, &m, &d, &extra) != 3) {
        throw DataError(context + ": invalid ISO date '" + s + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw DataError(context + ": invalid calendar date '" + s + "'");
    return Date{ymd};
}

inline std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
    return std::string(buf);
}

// One day of city-level observations. `claims` is already normalized by the
// insured-home count when that column is present in the source file.
struct DailyRecord {
    Date date;
    double precip_mm = 0.0;
    double claims = 0.0;
    std::optional<long> insured;
};

// One week: total precipitation x, max daily precipitation d, claims n.
struct WeeklyRecord {
    Date week_start;
    double x = 0.0;
    double d = 0.0;
    double n = 0.0;
};

using WeeklySeries = std::vector<WeeklyRecord>;

enum class ClaimAggregation { Mean, Total };

// Per-column standardization parameters, fitted on the training split.
struct Scaler {
    std::vector<double> mean;
    std::vector<double> sd;

    bool operator==(const Scaler&) const = default;
};

// Lagged design matrix plus (optionally) the target vector.
struct FeatureFrame {
    std::vector<std::string> columns;
    Eigen::MatrixXd x;       // rows x columns.size()
    Eigen::VectorXd target;  // empty when the frame is prediction-only
    std::vector<Date> week_start;
    Scaler scaler;
    bool standardized = false;

    Eigen::Index rows() const { return x.rows(); }
    bool has_target() const { return target.size() > 0; }
};

// Feature-name grammar: X_t, X_t-1 ... X_t-5, D_t ... D_t-5.
struct FeatureName {
    char variable = 'X';  // 'X' or 'D'
    int lag = 0;
};

inline FeatureName parse_feature_name(const std::string& name) {
    static const std::regex grammar(R"(^([XD])_t(?:-([0-9]+))?$)");
    std::smatch m;
    if (!std::regex_match(name, m, grammar)) {
        throw ConfigError("unknown feature column '" + name + "' (expected X_t, X_t-k, D_t or D_t-k)");
    }
    FeatureName f;
    f.variable = m[1].str()[0];
    f.lag = m[2].matched ? std::stoi(m[2].str()) : 0;
    if (f.lag > 5) throw ConfigError("feature column '" + name + "': lag exceeds the maximum of 5");
    return f;
}

// --- daily CSV ------------------------------------------------------------
//
// Schema (header required): date,precip_mm,claims[,insured]

inline std::vector<DailyRecord> parse_daily_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw DataError(path + ": empty file");

    const auto header = detail::split_csv_line(lines[0]);
    bool has_insured = false;
    if (header.size() == 4 && header[0] == "date" && header[1] == "precip_mm" && header[2] == "claims" &&
        header[3] == "insured") {
        has_insured = true;
    } else if (!(header.size() == 3 && header[0] == "date" && header[1] == "precip_mm" && header[2] == "claims")) {
        throw DataError(path + ": header must be 'date,precip_mm,claims[,insured]', got '" + lines[0] + "'");
    }

    std::vector<DailyRecord> records;
    records.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string context = path + ": line " + std::to_string(i + 1);
        const auto fields = detail::split_csv_line(lines[i]);
        if (fields.size() != header.size()) {
            throw DataError(context + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        DailyRecord rec;
        rec.date = parse_date(fields[0], context);
        rec.precip_mm = detail::parse_double(fields[1], context);
        rec.claims = detail::parse_double(fields[2], context);
        if (rec.precip_mm < 0.0) throw DataError(context + ": negative precip_mm");
        if (rec.claims < 0.0) throw DataError(context + ": negative claims");
        if (has_insured) {
            const long insured = detail::parse_long(fields[3], context);
            if (insured <= 0) throw DataError(context + ": insured must be positive");
            rec.insured = insured;
            rec.claims /= static_cast<double>(insured);
        }
        if (!records.empty() && !(records.back().date < rec.date)) {
            throw DataError(context + ": dates must be strictly increasing");
        }
        records.push_back(rec);
    }
    if (records.empty()) throw DataError(path + ": no data rows");
    return records;
}

inline std::string daily_csv_string(const std::vector<DailyRecord>& days, bool with_insured = false) {
    std::ostringstream out;
    out << (with_insured ? "date,precip_mm,claims,insured\n" : "date,precip_mm,claims\n");
    for (const auto& r : days) {
        out << format_date(r.date) << ',' << detail::format_double(r.precip_mm) << ','
            << detail::format_double(r.claims);
        if (with_insured) out << ',' << (r.insured ? *r.insured : 1L);
        out << '\n';
    }
    return out.str();
}

// --- weekly aggregation ----------------------------------------------------

// Fixed 7-day blocks anchored at week_origin. Gaps in the daily series are an
// error; partial leading/trailing blocks are dropped.
inline WeeklySeries aggregate_weekly(const std::vector<DailyRecord>& days, std::optional<Date> week_origin = {},
                                     ClaimAggregation mode = ClaimAggregation::Mean) {
    if (days.size() < 7) throw DataError("aggregate_weekly: need at least 7 daily records");

    const Date first = days.front().date;
    const Date origin = week_origin.value_or(first);
    if (origin > first) throw DataError("aggregate_weekly: week_origin must be on or before the first date");

    for (std::size_t i = 1; i < days.size(); ++i) {
        if (days[i].date != days[i - 1].date + std::chrono::days{1}) {
            throw DataError("aggregate_weekly: missing daily record after " + format_date(days[i - 1].date));
        }
    }

    // first block boundary at or after the first record
    const auto offset = (first - origin).count();
    const auto lead = (7 - offset % 7) % 7;
    Date block = first + std::chrono::days{lead};

    WeeklySeries weeks;
    const Date last = days.back().date;
    while (block + std::chrono::days{6} <= last) {
        const std::size_t base = static_cast<std::size_t>((block - first).count());
        WeeklyRecord w;
        w.week_start = block;
        double claim_sum = 0.0;
        for (std::size_t k = 0; k < 7; ++k) {
            const DailyRecord& r = days[base + k];
            w.x += r.precip_mm;
            w.d = std::max(w.d, r.precip_mm);
            claim_sum += r.claims;
        }
        w.n = (mode == ClaimAggregation::Mean) ? claim_sum / 7.0 : claim_sum;
        weeks.push_back(w);
        block += std::chrono::days{7};
    }
    if (weeks.empty()) throw DataError("aggregate_weekly: fewer than 7 aligned daily records, no full week");
    return weeks;
}

// --- weekly / scenario CSV ---------------------------------------------------

inline std::string weekly_csv_string(const WeeklySeries& weeks) {
    std::ostringstream out;
    out << "week_start,x,d,n\n";
    for (const auto& w : weeks) {
        out << format_date(w.week_start) << ',' << detail::format_double(w.x) << ',' << detail::format_double(w.d)
            << ',' << detail::format_double(w.n) << '\n';
    }
    return out.str();
}

inline WeeklySeries parse_weekly_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "week_start,x,d,n") {
        throw DataError(path + ": header must be 'week_start,x,d,n'");
    }
    WeeklySeries weeks;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string context = path + ": line " + std::to_string(i + 1);
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 4) throw DataError(context + ": expected 4 fields");
        WeeklyRecord w;
        w.week_start = parse_date(f[0], context);
        w.x = detail::parse_double(f[1], context);
        w.d = detail::parse_double(f[2], context);
        w.n = detail::parse_double(f[3], context);
        if (w.d > w.x + 1e-12) throw DataError(context + ": max daily precipitation exceeds weekly total");
        if (!weeks.empty() && w.week_start != weeks.back().week_start + std::chrono::days{7}) {
            throw DataError(context + ": weeks must be contiguous");
        }
        weeks.push_back(w);
    }
    if (weeks.empty()) throw DataError(path + ": no data rows");
    return weeks;
}

// Scenario precipitation for the projection period, one block per scenario:
// week_start,scenario_id,x,d
struct ScenarioSeries {
    std::string scenario_id;
    WeeklySeries weeks;  // n is not populated for scenarios
};

inline std::string scenario_csv_string(const std::vector<ScenarioSeries>& scenarios) {
    std::ostringstream out;
    out << "week_start,scenario_id,x,d\n";
    for (const auto& s : scenarios) {
        for (const auto& w : s.weeks) {
            out << format_date(w.week_start) << ',' << s.scenario_id << ',' << detail::format_double(w.x) << ','
                << detail::format_double(w.d) << '\n';
        }
    }
    return out.str();
}

inline std::vector<ScenarioSeries> parse_scenario_csv(const std::string& path,
                                                      const std::vector<std::string>& allowed_ids) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "week_start,scenario_id,x,d") {
        throw DataError(path + ": header must be 'week_start,scenario_id,x,d'");
    }
    std::vector<ScenarioSeries> scenarios;
    auto find = [&](const std::string& id) -> ScenarioSeries& {
        for (auto& s : scenarios)
            if (s.scenario_id == id) return s;
        if (!allowed_ids.empty() &&
            std::find(allowed_ids.begin(), allowed_ids.end(), id) == allowed_ids.end()) {
            throw DataError(path + ": unknown scenario_id '" + id + "'");
        }
        scenarios.push_back(ScenarioSeries{id, {}});
        return scenarios.back();
    };
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string context = path + ": line " + std::to_string(i + 1);
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 4) throw DataError(context + ": expected 4 fields");
        WeeklyRecord w;
        w.week_start = parse_date(f[0], context);
        w.x = detail::parse_double(f[2], context);
        w.d = detail::parse_double(f[3], context);
        if (w.d > w.x + 1e-12) throw DataError(context + ": max daily precipitation exceeds weekly total");
        auto& s = find(f[1]);
        if (!s.weeks.empty() && w.week_start != s.weeks.back().week_start + std::chrono::days{7}) {
            throw DataError(context + ": weeks must be contiguous within a scenario");
        }
        s.weeks.push_back(w);
    }
    if (scenarios.empty()) throw DataError(path + ": no data rows");
    const std::size_t n = scenarios.front().weeks.size();
    for (const auto& s : scenarios) {
        if (s.weeks.size() != n || s.weeks.front().week_start != scenarios.front().weeks.front().week_start) {
            throw DataError(path + ": scenarios must share an identical week grid");
        }
    }
    return scenarios;
}

// --- feature frames ----------------------------------------------------------

// Builds the lagged design matrix; the first max-lag rows are dropped so no
// row reaches before the series start. Values are raw (unstandardized).
inline FeatureFrame build_features(const WeeklySeries& series, const std::vector<std::string>& columns,
                                   bool with_target = true) {
    if (columns.empty()) throw ConfigError("build_features: empty column list");
    std::vector<FeatureName> parsed;
    parsed.reserve(columns.size());
    int max_lag = 0;
    for (const auto& c : columns) {
        parsed.push_back(parse_feature_name(c));
        max_lag = std::max(max_lag, parsed.back().lag);
    }
    const auto n_weeks = static_cast<Eigen::Index>(series.size());
    const Eigen::Index rows = n_weeks - max_lag;
    if (rows <= 0) throw DataError("build_features: series shorter than the maximum lag");

    FeatureFrame frame;
    frame.columns = columns;
    frame.x.resize(rows, static_cast<Eigen::Index>(columns.size()));
    frame.week_start.reserve(static_cast<std::size_t>(rows));
    if (with_target) frame.target.resize(rows);

    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t t = static_cast<std::size_t>(r + max_lag);
        for (std::size_t c = 0; c < parsed.size(); ++c) {
            const auto& w = series[t - static_cast<std::size_t>(parsed[c].lag)];
            frame.x(r, static_cast<Eigen::Index>(c)) = (parsed[c].variable == 'X') ? w.x : w.d;
        }
        if (with_target) frame.target(r) = series[t].n;
        frame.week_start.push_back(series[t].week_start);
    }
    frame.scaler.mean.assign(columns.size(), 0.0);
    frame.scaler.sd.assign(columns.size(), 1.0);
    return frame;
}

// Chronological split; train takes the first ceil(fraction * rows) rows.
inline std::pair<FeatureFrame, FeatureFrame> split_train_test(const FeatureFrame& frame, double fraction) {
    if (frame.rows() == 0) throw DataError("split_train_test: empty frame");
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split_train_test: fraction must lie in (0,1)");
    const Eigen::Index n = frame.rows();
    // epsilon guards the ceiling against float drift when fraction*n is integral
    const Eigen::Index n_train =
        static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    const Eigen::Index n_test = n - n_train;

    auto slice = [&](Eigen::Index begin, Eigen::Index count) {
        FeatureFrame part;
        part.columns = frame.columns;
        part.x = frame.x.middleRows(begin, count);
        if (frame.has_target()) part.target = frame.target.segment(begin, count);
        part.week_start.assign(frame.week_start.begin() + begin, frame.week_start.begin() + begin + count);
        part.scaler = frame.scaler;
        part.standardized = frame.standardized;
        return part;
    };
    return {slice(0, n_train), slice(n_train, n_test)};
}

// Fits mean/sd on `train`, then standardizes every frame passed in `frames`
// (train itself included by the caller). Zero-variance columns are an error.
inline Scaler fit_scaler(const FeatureFrame& train) {
    if (train.rows() < 2) throw DataError("fit_scaler: need at least two rows");
    Scaler s;
    const auto cols = train.x.cols();
    s.mean.resize(static_cast<std::size_t>(cols));
    s.sd.resize(static_cast<std::size_t>(cols));
    for (Eigen::Index c = 0; c < cols; ++c) {
        const double m = train.x.col(c).mean();
        const double var = (train.x.col(c).array() - m).square().sum() / static_cast<double>(train.rows() - 1);
        if (var <= 0.0) throw DataError("fit_scaler: column '" + train.columns[static_cast<std::size_t>(c)] +
                                        "' is constant on the training split");
        s.mean[static_cast<std::size_t>(c)] = m;
        s.sd[static_cast<std::size_t>(c)] = std::sqrt(var);
    }
    return s;
}

inline void apply_scaler(FeatureFrame& frame, const Scaler& scaler) {
    if (frame.standardized) throw DataError("apply_scaler: frame already standardized");
    if (scaler.mean.size() != static_cast<std::size_t>(frame.x.cols())) {
        throw DataError("apply_scaler: scaler dimension mismatch");
    }
    for (Eigen::Index c = 0; c < frame.x.cols(); ++c) {
        frame.x.col(c) =
            (frame.x.col(c).array() - scaler.mean[static_cast<std::size_t>(c)]) / scaler.sd[static_cast<std::size_t>(c)];
    }
    frame.scaler = scaler;
    frame.standardized = true;
}

}  // namespace pluvia
