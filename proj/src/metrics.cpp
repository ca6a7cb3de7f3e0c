#include "nfad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "nfad/errors.hpp"

namespace nfad {

namespace {

void split_scores(const std::vector<AnomalyScore>& scores, std::vector<double>& normal,
                  std::vector<double>& anomaly) {
    for (const auto& s : scores) {
        if (!std::isfinite(s.score))
            throw SingleClassError("non-finite score for '" + s.recording + "'");
        (s.label == Label::anomaly ? anomaly : normal).push_back(s.score);
    }
    if (normal.empty() || anomaly.empty())
        throw SingleClassError("need both normal and anomaly scores, got " +
                               std::to_string(normal.size()) + " normal / " +
                               std::to_string(anomaly.size()) + " anomaly");
}

// ROC points as the decision threshold sweeps down through the distinct
// score values: (0,0), then one point per distinct score with
// fpr = P(normal >= s), tpr = P(anomaly >= s), ending at (1,1). Tied
// scores advance both rates at once, which the trapezoidal integral
// turns into the half-credit convention.
std::vector<std::pair<double, double>> roc_points(std::vector<double> normal,
                                                  std::vector<double> anomaly) {
    std::sort(normal.begin(), normal.end(), std::greater<double>());
    std::sort(anomaly.begin(), anomaly.end(), std::greater<double>());
    std::vector<std::pair<double, double>> pts;
    pts.emplace_back(0.0, 0.0);
    size_t i = 0, j = 0;
    double nn = static_cast<double>(normal.size());
    double na = static_cast<double>(anomaly.size());
    while (i < normal.size() || j < anomaly.size()) {
        double s;
        if (i < normal.size() && j < anomaly.size())
            s = std::max(normal[i], anomaly[j]);
        else if (i < normal.size())
            s = normal[i];
        else
            s = anomaly[j];
        while (i < normal.size() && normal[i] == s) ++i;
        while (j < anomaly.size() && anomaly[j] == s) ++j;
        pts.emplace_back(static_cast<double>(i) / nn, static_cast<double>(j) / na);
    }
    return pts;
}

void append_csv_field(std::string& out, const std::string& field) {
    bool quote = field.find_first_of(",\"\n") != std::string::npos;
    if (!quote) {
        out += field;
        return;
    }
    out += '"';
    for (char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
}

std::string format_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

std::string aggregation_name(ScoreAggregation a) {
    return a == ScoreAggregation::mean ? "mean" : "max";
}

ScoreAggregation aggregation_from_name(const std::string& s) {
    if (s == "mean") return ScoreAggregation::mean;
    if (s == "max") return ScoreAggregation::max;
    throw ConfigError("unknown aggregation '" + s + "' (expected mean or max)");
}

double auc(const std::vector<AnomalyScore>& scores) {
    std::vector<double> normal, anomaly;
    split_scores(scores, normal, anomaly);

    // rank-sum form: sort everything, give tied runs their average
    // rank, and read the pair count off the anomaly rank total
    struct Tagged {
        double score;
        bool anomaly;
    };
    std::vector<Tagged> all;
    all.reserve(normal.size() + anomaly.size());
    for (double v : normal) all.push_back({v, false});
    for (double v : anomaly) all.push_back({v, true});
    std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score < b.score; });

    double anomaly_rank_sum = 0.0;
    size_t idx = 0;
    while (idx < all.size()) {
        size_t end = idx;
        while (end < all.size() && all[end].score == all[idx].score) ++end;
        // ranks idx+1 .. end averaged; the sum of that run is exact in
        // halves, so the final ratio matches pairwise counting bit for bit
        double avg_rank = (static_cast<double>(idx + 1) + static_cast<double>(end)) / 2.0;
        for (size_t t = idx; t < end; ++t)
            if (all[t].anomaly) anomaly_rank_sum += avg_rank;
        idx = end;
    }
    double na = static_cast<double>(anomaly.size());
    double nn = static_cast<double>(normal.size());
    double u = anomaly_rank_sum - na * (na + 1.0) / 2.0;
    return u / (na * nn);
}

double pauc(const std::vector<AnomalyScore>& scores, double p) {
    if (!(p > 0.0 && p <= 1.0))
        throw ConfigError("pauc needs 0 < p <= 1, got " + std::to_string(p));
    std::vector<double> normal, anomaly;
    split_scores(scores, normal, anomaly);
    auto pts = roc_points(std::move(normal), std::move(anomaly));

    double area = 0.0;
    double prev_f = 0.0, prev_t = 0.0;
    for (const auto& [f, t] : pts) {
        if (f >= p) {
            if (f > prev_f) {
                double cut_t = prev_t + (t - prev_t) * (p - prev_f) / (f - prev_f);
                area += (p - prev_f) * (prev_t + cut_t) / 2.0;
            }
            return area / p;
        }
        area += (f - prev_f) * (prev_t + t) / 2.0;
        prev_f = f;
        prev_t = t;
    }
    return area / p; // p == 1 and the last point is exactly (1,1)
}

Scorer::Scorer(const FlowModel& model, FeatureConfig features, FeatureStats stats,
               ScoreAggregation aggregation)
    : model_(model),
      features_(std::move(features)),
      stats_(std::move(stats)),
      offset_total_(stats_.empty() ? 0.0 : features_.window_frames * log_std_sum(stats_)),
      aggregation_(aggregation) {
    int expect = features_.window_frames * features_.n_mels;
    if (model_.input_dim() != expect)
        throw ShapeError("model input_dim " + std::to_string(model_.input_dim()) +
                         " does not match window size " + std::to_string(expect));
}

double Scorer::score_windows(const std::vector<FeatureWindow>& windows) const {
    if (windows.empty()) throw EmptyBatchError("no windows to score");
    int dim = model_.input_dim();
    int batch = static_cast<int>(windows.size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(batch) * dim);
    for (const auto& w : windows) flat.insert(flat.end(), w.values.begin(), w.values.end());
    auto values = nll(model_, flat, batch);

    double offset = offset_total_;
    if (model_.nll_normalization() == NllNorm::per_dim) offset /= dim;
    double agg = aggregation_ == ScoreAggregation::max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (const auto& v : values) {
        double s = v.value + offset;
        if (aggregation_ == ScoreAggregation::max)
            agg = std::max(agg, s);
        else
            agg += s / static_cast<double>(batch);
    }
    return agg;
}

AnomalyScore Scorer::score_recording(const Recording& rec) const {
    LogMelSpectrogram spec = compute_log_mel(rec, features_);
    if (!stats_.empty()) standardize_in_place(spec, stats_);
    auto windows = make_windows(spec, features_.window_frames, features_.window_hop, rec.source_path);
    AnomalyScore out;
    out.recording = rec.source_path;
    out.label = rec.label;
    out.score = score_windows(windows);
    return out;
}

EvalReport evaluate_id(const Scorer& scorer, const std::vector<DatasetEntry>& test_entries,
                       const std::string& machine_type, const std::string& machine_id, double p) {
    EvalReport report;
    report.machine_type = machine_type;
    report.machine_id = machine_id;
    report.p = p;
    for (const auto& e : test_entries) {
        if (e.machine_type != machine_type || e.machine_id != machine_id || e.train) continue;
        Recording rec = load_entry(e);
        AnomalyScore s = scorer.score_recording(rec);
        if (s.label == Label::anomaly)
            ++report.n_anomaly;
        else
            ++report.n_normal;
        report.scores.push_back(std::move(s));
    }
    report.auc = auc(report.scores);
    report.pauc = pauc(report.scores, p);
    return report;
}

std::vector<AggregateRow> aggregate_reports(const std::vector<EvalReport>& reports) {
    std::vector<AggregateRow> rows;
    std::vector<std::string> types;
    for (const auto& r : reports)
        if (std::find(types.begin(), types.end(), r.machine_type) == types.end())
            types.push_back(r.machine_type);
    for (const auto& t : types) {
        AggregateRow row{t, "mean", 0.0, 0.0};
        int n = 0;
        for (const auto& r : reports) {
            if (r.machine_type != t) continue;
            row.auc += r.auc;
            row.pauc += r.pauc;
            ++n;
        }
        row.auc /= n;
        row.pauc /= n;
        rows.push_back(row);
    }
    if (!reports.empty()) {
        AggregateRow total{"all", "total", 0.0, 0.0};
        for (const auto& r : reports) {
            total.auc += r.auc;
            total.pauc += r.pauc;
        }
        total.auc /= static_cast<double>(reports.size());
        total.pauc /= static_cast<double>(reports.size());
        rows.push_back(total);
    }
    return rows;
}

std::string report_csv(const std::vector<EvalReport>& reports) {
    std::string out = "machine_type,machine_id,auc,pauc,n_normal,n_anomaly\n";
    for (const auto& r : reports) {
        append_csv_field(out, r.machine_type);
        out += ',';
        append_csv_field(out, r.machine_id);
        out += ',';
        out += format_num(r.auc);
        out += ',';
        out += format_num(r.pauc);
        out += ',';
        out += std::to_string(r.n_normal);
        out += ',';
        out += std::to_string(r.n_anomaly);
        out += '\n';
    }
    return out;
}

std::string scores_csv(const EvalReport& report) {
    std::string out = "path,score,label\n";
    for (const auto& s : report.scores) {
        append_csv_field(out, s.recording);
        out += ',';
        out += format_num(s.score);
        out += ',';
        out += label_name(s.label);
        out += '\n';
    }
    return out;
}

std::string report_table(const std::vector<EvalReport>& reports) {
    // pAUC uses linear normalization: area over [0, p] divided by p.
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-14s %-10s %8s %8s %8s %9s\n", "machine_type", "id", "auc",
                  "pauc", "normal", "anomaly");
    out += line;
    for (const auto& r : reports) {
        std::snprintf(line, sizeof(line), "%-14s %-10s %8.4f %8.4f %8d %9d\n",
                      r.machine_type.c_str(), r.machine_id.c_str(), r.auc, r.pauc, r.n_normal,
                      r.n_anomaly);
        out += line;
    }
    for (const auto& row : aggregate_reports(reports)) {
        std::snprintf(line, sizeof(line), "%-14s %-10s %8.4f %8.4f\n", row.machine_type.c_str(),
                      row.machine_id.c_str(), row.auc, row.pauc);
        out += line;
    }
    return out;
}

} // namespace nfad
