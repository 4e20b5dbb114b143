#pragma once

#include <iomanip>

#include "vidrl/config.hpp"

namespace vidrl {

/// One metrics row. Column order is fixed and part of the output contract.
struct MetricsRow {
    std::string experiment;
    std::string algo;
    long seed = 0;
    std::size_t resolution = 0;  // height (= width) of the toy world
    std::size_t step = 0;
    std::size_t reward_queries = 0;
    double wallclock_s = 0;
    double mean_reward = 0;
    double std_reward = 0;
};

inline const char* kMetricsHeader =
    "experiment,algo,seed,resolution,step,reward_queries,wallclock_s,mean_reward,std_reward";

namespace detail {

inline std::string fmt_metric(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace detail

inline std::string format_row(const MetricsRow& r) {
    std::ostringstream os;
    os << r.experiment << ',' << r.algo << ',' << r.seed << ',' << r.resolution << ',' << r.step
       << ',' << r.reward_queries << ',' << detail::fmt_metric(r.wallclock_s) << ','
       << detail::fmt_metric(r.mean_reward) << ',' << detail::fmt_metric(r.std_reward);
    return os.str();
}

/// Append-only CSV writer; every row is flushed as soon as it is written so a
/// crashed run still leaves a usable file.
class MetricsSink {
public:
    explicit MetricsSink(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
        if (!out_) throw ConfigError("metrics: cannot open '" + path + "' for writing");
        out_ << kMetricsHeader << '\n';
        out_.flush();
    }

    void write(const MetricsRow& r) {
        out_ << format_row(r) << '\n';
        out_.flush();
        if (!out_) throw ConfigError("metrics: write failed on '" + path_ + "'");
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
};

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("metrics: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("metrics: empty file '" + path + "'");
    if (line != kMetricsHeader)
        throw ConfigError("metrics: unexpected header in '" + path + "'");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cols;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cols.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        cols.push_back(cur);
        if (cols.size() != 9)
            throw ConfigError("metrics: " + path + ":" + std::to_string(lineno) +
                              ": expected 9 columns, got " + std::to_string(cols.size()));
        MetricsRow r;
        try {
            r.experiment = cols[0];
            r.algo = cols[1];
            r.seed = detail::parse_long(cols[2]);
            r.resolution = detail::parse_size(cols[3]);
            r.step = detail::parse_size(cols[4]);
            r.reward_queries = detail::parse_size(cols[5]);
            r.wallclock_s = detail::parse_double(cols[6]);
            r.mean_reward = detail::parse_double(cols[7]);
            r.std_reward = detail::parse_double(cols[8]);
        } catch (const std::exception& e) {
            throw ConfigError("metrics: " + path + ":" + std::to_string(lineno) +
                              ": bad value (" + e.what() + ")");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Deterministic plaintext plotting
// ---------------------------------------------------------------------------

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

/// Fixed-size ASCII chart; identical inputs yield byte-identical output.
inline std::string render_ascii_plot(const std::vector<PlotSeries>& series,
                                     const std::string& title, const std::string& xlabel,
                                     const std::string& ylabel, std::size_t width = 72,
                                     std::size_t height = 20) {
    static const char kMarks[] = "*o+x#@";
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    std::vector<std::string> grid(height, std::string(width, ' '));
    for (std::size_t si = 0; si < series.size(); ++si) {
        const char mark = kMarks[si % (sizeof(kMarks) - 1)];
        const auto& s = series[si];
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const std::size_t cx = static_cast<std::size_t>(
                std::llround((s.x[i] - xmin) / (xmax - xmin) * double(width - 1)));
            const std::size_t cy = static_cast<std::size_t>(
                std::llround((s.y[i] - ymin) / (ymax - ymin) * double(height - 1)));
            grid[height - 1 - cy][cx] = mark;
        }
    }
    std::ostringstream os;
    os << title << "\n";
    os << detail::fmt_metric(ymax) << " (" << ylabel << " max)\n";
    for (const auto& row : grid) os << "|" << row << "\n";
    os << detail::fmt_metric(ymin) << " (" << ylabel << " min)  " << xlabel << ": ["
       << detail::fmt_metric(xmin) << ", " << detail::fmt_metric(xmax) << "]\n";
    for (std::size_t si = 0; si < series.size(); ++si)
        os << kMarks[si % (sizeof(kMarks) - 1)] << " = " << series[si].label << "\n";
    return os.str();
}

}  // namespace vidrl
