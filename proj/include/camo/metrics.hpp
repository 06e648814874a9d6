// Detection and attack metrics plus the paired report tables the command
// line emits. Scores follow the library-wide convention: higher = more
// adversarial, so "positive" always means adversarial.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camo/attacks.hpp"

namespace camo::metrics {

// Mann-Whitney AUC: P(pos > neg) + half credit for ties. Computed from
// midranks; agrees exactly with pairwise counting.
double auc(const std::vector<double>& neg, const std::vector<double>& pos);

// Fraction of positives at or above the tnr-percentile of the negatives
// ("higher" interpolation: the detector keeps at least tnr of the negs).
double tpr_at_tnr(const std::vector<double>& neg, const std::vector<double>& pos,
                  double tnr = 0.9);

double adv_acc(const std::vector<attacks::AttackResult>& results, std::size_t target);

struct ScoreReport {
    std::string detector;
    std::string attack; // label without the variant suffix
    bool hfc = false;
    std::vector<double> clean_scores;
    std::vector<double> adv_scores;
    double auc_value = 0.0;
    double tpr90 = 0.0;
};

ScoreReport make_report(std::string detector, std::string attack, bool hfc,
                        std::vector<double> clean, std::vector<double> adv);

// Rows = detectors, columns = attacks; each cell pairs the plain and the
// constrained variant. When the input holds only one variant the other half
// is absent and marked so.
struct PairedTable {
    struct Cell {
        double auc_plain = -1.0, tpr_plain = -1.0; // -1 = absent
        double auc_hfc = -1.0, tpr_hfc = -1.0;
    };
    std::vector<std::string> detectors;
    std::vector<std::string> attacks;
    std::vector<std::vector<Cell>> cells; // [detector][attack]
    bool paired = false;
};

PairedTable assemble_table(const std::vector<ScoreReport>& reports);

// CSV with a config-hash comment line; %.17g values round-trip exactly.
std::string table_to_csv(const PairedTable& table, std::uint64_t config_hash);
std::string reports_to_csv(const std::vector<ScoreReport>& reports, std::uint64_t config_hash);

struct ParsedCsv {
    std::uint64_t config_hash = 0;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
ParsedCsv parse_csv(const std::string& text);

} // namespace camo::metrics
