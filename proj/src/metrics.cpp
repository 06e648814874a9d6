#include "camo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "camo/errors.hpp"
#include "camo/hashing.hpp"

namespace camo::metrics {

namespace {

void check_scores(const std::vector<double>& neg, const std::vector<double>& pos) {
    if (neg.empty() || pos.empty()) {
        throw ConfigError("auc/tpr need at least one score on each side");
    }
    for (double v : neg) {
        if (!std::isfinite(v)) throw PreconditionError("non-finite negative score");
    }
    for (double v : pos) {
        if (!std::isfinite(v)) throw PreconditionError("non-finite positive score");
    }
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double auc(const std::vector<double>& neg, const std::vector<double>& pos) {
    check_scores(neg, pos);
    const std::size_t n = neg.size(), m = pos.size();

    // Tag each score with its side, sort, then assign midranks to tie runs.
    std::vector<std::pair<double, bool>> all; // (score, is_positive)
    all.reserve(n + m);
    for (double v : neg) all.emplace_back(v, false);
    for (double v : pos) all.emplace_back(v, true);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        // ranks i+1 .. j (1-based); midrank is their mean, a half-integer
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (all[t].second) rank_sum_pos += midrank;
        }
        i = j;
    }

    const double m_d = static_cast<double>(m);
    const double u = rank_sum_pos - m_d * (m_d + 1.0) / 2.0;
    return u / (static_cast<double>(n) * m_d);
}

double tpr_at_tnr(const std::vector<double>& neg, const std::vector<double>& pos,
                  double tnr) {
    check_scores(neg, pos);
    if (!(tnr > 0.0 && tnr < 1.0)) throw ConfigError("tnr must lie in (0,1)");
    std::vector<double> sorted_neg = neg;
    std::sort(sorted_neg.begin(), sorted_neg.end());
    const auto n = static_cast<double>(sorted_neg.size());
    auto idx = static_cast<std::size_t>(std::ceil(tnr * (n - 1.0)));
    if (idx >= sorted_neg.size()) idx = sorted_neg.size() - 1;
    const double threshold = sorted_neg[idx];
    std::size_t hits = 0;
    for (double v : pos) {
        if (v >= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pos.size());
}

double adv_acc(const std::vector<attacks::AttackResult>& results, std::size_t target) {
    if (results.empty()) throw ConfigError("adv_acc over an empty batch");
    std::size_t hits = 0;
    for (const auto& r : results) {
        if (r.final_prediction == target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

ScoreReport make_report(std::string detector, std::string attack, bool hfc,
                        std::vector<double> clean, std::vector<double> adv) {
    ScoreReport r;
    r.detector = std::move(detector);
    r.attack = std::move(attack);
    r.hfc = hfc;
    r.auc_value = auc(clean, adv);
    r.tpr90 = tpr_at_tnr(clean, adv, 0.9);
    r.clean_scores = std::move(clean);
    r.adv_scores = std::move(adv);
    return r;
}

PairedTable assemble_table(const std::vector<ScoreReport>& reports) {
    if (reports.empty()) throw ConfigError("assemble_table with no reports");

    bool any_plain = false, any_hfc = false;
    for (const auto& r : reports) (r.hfc ? any_hfc : any_plain) = true;
    const bool paired = any_plain && any_hfc;

    // preserve first-appearance order for rows and columns
    PairedTable table;
    table.paired = paired;
    auto index_of = [](std::vector<std::string>& names, const std::string& name) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return i;
        }
        names.push_back(name);
        return names.size() - 1;
    };
    std::map<std::pair<std::size_t, std::size_t>, std::pair<bool, bool>> seen;
    for (const auto& r : reports) {
        const std::size_t di = index_of(table.detectors, r.detector);
        const std::size_t ai = index_of(table.attacks, r.attack);
        auto& flags = seen[{di, ai}];
        if ((r.hfc ? flags.second : flags.first)) {
            throw ConfigError("duplicate report for detector '" + r.detector +
                              "', attack '" + r.attack + "'");
        }
        (r.hfc ? flags.second : flags.first) = true;
    }
    if (paired) {
        for (std::size_t di = 0; di < table.detectors.size(); ++di) {
            for (std::size_t ai = 0; ai < table.attacks.size(); ++ai) {
                auto it = seen.find({di, ai});
                if (it == seen.end() || !it->second.first || !it->second.second) {
                    throw MissingPairError("detector '" + table.detectors[di] +
                                           "', attack '" + table.attacks[ai] +
                                           "' lacks its counterpart variant");
                }
            }
        }
    }

    table.cells.assign(table.detectors.size(),
                       std::vector<PairedTable::Cell>(table.attacks.size()));
    for (const auto& r : reports) {
        const std::size_t di = index_of(table.detectors, r.detector);
        const std::size_t ai = index_of(table.attacks, r.attack);
        auto& cell = table.cells[di][ai];
        if (r.hfc) {
            cell.auc_hfc = r.auc_value;
            cell.tpr_hfc = r.tpr90;
        } else {
            cell.auc_plain = r.auc_value;
            cell.tpr_plain = r.tpr90;
        }
    }
    return table;
}

std::string table_to_csv(const PairedTable& table, std::uint64_t config_hash) {
    std::ostringstream out;
    out << "# config_hash=" << hex64(config_hash) << "\n";
    out << "detector,attack,auc_plain,tpr90_plain,auc_hfc,tpr90_hfc\n";
    for (std::size_t di = 0; di < table.detectors.size(); ++di) {
        for (std::size_t ai = 0; ai < table.attacks.size(); ++ai) {
            const auto& c = table.cells[di][ai];
            out << table.detectors[di] << ',' << table.attacks[ai] << ',';
            out << (c.auc_plain >= 0.0 ? fmt17(c.auc_plain) : "") << ',';
            out << (c.tpr_plain >= 0.0 ? fmt17(c.tpr_plain) : "") << ',';
            out << (c.auc_hfc >= 0.0 ? fmt17(c.auc_hfc) : "") << ',';
            out << (c.tpr_hfc >= 0.0 ? fmt17(c.tpr_hfc) : "") << '\n';
        }
    }
    return out.str();
}

std::string reports_to_csv(const std::vector<ScoreReport>& reports,
                           std::uint64_t config_hash) {
    if (reports.empty()) throw ConfigError("reports_to_csv with no reports");
    std::ostringstream out;
    out << "# config_hash=" << hex64(config_hash) << "\n";
    out << "detector,attack,variant,auc,tpr90\n";
    for (const auto& r : reports) {
        out << r.detector << ',' << r.attack << ',' << (r.hfc ? "hfc" : "plain") << ','
            << fmt17(r.auc_value) << ',' << fmt17(r.tpr90) << '\n';
    }
    return out.str();
}

ParsedCsv parse_csv(const std::string& text) {
    ParsedCsv parsed;
    std::istringstream in(text);
    std::string line;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# config_hash=", 0) == 0) {
            parsed.config_hash = parse_hex64(line.substr(14));
            continue;
        }
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (!header_done) {
            parsed.header = std::move(fields);
            header_done = true;
        } else {
            if (fields.size() != parsed.header.size()) {
                throw PreconditionError("csv row width differs from header");
            }
            parsed.rows.push_back(std::move(fields));
        }
    }
    return parsed;
}

} // namespace camo::metrics
