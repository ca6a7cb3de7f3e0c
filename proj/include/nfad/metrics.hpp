#pragma once

#include <string>
#include <vector>

#include "nfad/dataset.hpp"
#include "nfad/features.hpp"
#include "nfad/flow.hpp"

namespace nfad {

struct AnomalyScore {
    std::string recording; // source path
    double score = 0.0;
    Label label = Label::normal;
};

struct EvalReport {
    std::string machine_type;
    std::string machine_id;
    double auc = 0.0;
    double pauc = 0.0;
    double p = 0.1;
    int n_normal = 0;
    int n_anomaly = 0;
    std::vector<AnomalyScore> scores;
};

enum class ScoreAggregation { mean, max };
std::string aggregation_name(ScoreAggregation a);
ScoreAggregation aggregation_from_name(const std::string& s);

// Fraction of (normal, anomaly) score pairs where the anomaly scores
// higher; ties count one half. SingleClassError unless both labels are
// present.
double auc(const std::vector<AnomalyScore>& scores);

// Area under the empirical ROC restricted to false-positive rate in
// [0, p], linearly interpolated at the cut and divided by p.
// SingleClassError / ConfigError on bad inputs.
double pauc(const std::vector<AnomalyScore>& scores, double p);

// Scores recordings through a model: log-mel features, per-bin
// standardization, window NLLs shifted back into pre-standardization
// units, aggregated per recording.
class Scorer {
public:
    Scorer(const FlowModel& model, FeatureConfig features, FeatureStats stats,
           ScoreAggregation aggregation = ScoreAggregation::mean);

    double score_windows(const std::vector<FeatureWindow>& windows) const;
    AnomalyScore score_recording(const Recording& rec) const;

    const FeatureConfig& features() const { return features_; }

private:
    const FlowModel& model_;
    FeatureConfig features_;
    FeatureStats stats_;
    double offset_total_; // window_frames * sum(log stdev)
    ScoreAggregation aggregation_;
};

// Scores one machine ID's labeled test recordings and computes both
// metrics (p = 0.1).
EvalReport evaluate_id(const Scorer& scorer, const std::vector<DatasetEntry>& test_entries,
                       const std::string& machine_type, const std::string& machine_id,
                       double p = 0.1);

// Mean AUC/pAUC per machine type plus a "total" row over all reports,
// mirroring how multi-machine results tables are usually presented.
struct AggregateRow {
    std::string machine_type;
    std::string machine_id; // "mean" for per-type rows, "total" for the last
    double auc = 0.0;
    double pauc = 0.0;
};
std::vector<AggregateRow> aggregate_reports(const std::vector<EvalReport>& reports);

// CSV: machine_type,machine_id,auc,pauc,n_normal,n_anomaly
std::string report_csv(const std::vector<EvalReport>& reports);
// CSV: path,score,label for one report
std::string scores_csv(const EvalReport& report);
// Human-readable table including the aggregate rows.
std::string report_table(const std::vector<EvalReport>& reports);

} // namespace nfad
