#include "larc/metrics.hpp"

#include <cmath>
#include <sstream>

namespace larc {

EvalReport weighted_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                       int num_classes) {
    if (num_classes < 2) throw ConfigError("weighted_f1 needs at least 2 classes");
    if (y_true.empty()) throw DataError("weighted_f1 called on an empty label set");
    if (y_true.size() != y_pred.size())
        throw DataError("weighted_f1 label vectors differ in length");

    EvalReport r;
    r.num_classes = num_classes;
    r.total = static_cast<long long>(y_true.size());
    r.confusion.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw DataError("weighted_f1 label out of range [0, K)");
        ++r.confusion[static_cast<std::size_t>(t) * num_classes + p];
    }

    r.per_class.resize(num_classes);
    double f1_acc = 0.0, rec_acc = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        long long tp = r.at(k, k), support = 0, predicted = 0;
        for (int j = 0; j < num_classes; ++j) {
            support += r.at(k, j);
            predicted += r.at(j, k);
        }
        ClassScore& s = r.per_class[k];
        s.support = support;
        s.precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        s.recall = support > 0 ? static_cast<double>(tp) / support : 0.0;
        if (s.precision + s.recall > 0.0)
            s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
        else
            ++r.zero_division_classes;
        f1_acc += static_cast<double>(support) * s.f1;
        rec_acc += static_cast<double>(support) * s.recall;
    }
    r.weighted_f1 = f1_acc / static_cast<double>(r.total);
    r.weighted_recall = rec_acc / static_cast<double>(r.total);
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : r.per_class)
        per.push_back({{"precision", s.precision},
                       {"recall", s.recall},
                       {"f1", s.f1},
                       {"support", s.support}});
    nlohmann::json conf = nlohmann::json::array();
    for (int t = 0; t < r.num_classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < r.num_classes; ++p) row.push_back(r.at(t, p));
        conf.push_back(row);
    }
    return {{"num_classes", r.num_classes},
            {"total", r.total},
            {"weighted_f1", r.weighted_f1},
            {"weighted_recall", r.weighted_recall},
            {"per_class", per},
            {"confusion", conf},
            {"zero_division_classes", r.zero_division_classes}};
}

std::string confusion_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "true_class";
    for (int p = 0; p < r.num_classes; ++p) out << ",pred_" << p;
    out << "\n";
    for (int t = 0; t < r.num_classes; ++t) {
        out << t;
        for (int p = 0; p < r.num_classes; ++p) out << "," << r.at(t, p);
        out << "\n";
    }
    return out.str();
}

namespace {

double cosine_rows(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

} // namespace

GeometryReport geometry(const std::vector<std::vector<double>>& rows, const std::vector<int>& y,
                        int num_classes) {
    if (num_classes < 2) throw ConfigError("geometry needs at least 2 classes");
    if (rows.size() < 2) throw DataError("geometry needs at least 2 vectors");
    if (rows.size() != y.size()) throw DataError("geometry rows and labels differ in length");

    const int n = static_cast<int>(rows.size());
    const std::size_t d = rows[0].size();
    std::vector<bool> present(num_classes, false);
    for (int i = 0; i < n; ++i) {
        if (y[i] < 0 || y[i] >= num_classes) throw DataError("geometry label out of range [0, K)");
        if (rows[i].size() != d) throw ShapeError("geometry rows have inconsistent width");
        present[y[i]] = true;
    }
    int distinct = 0;
    for (bool b : present) distinct += b ? 1 : 0;
    if (distinct < 2) throw DataError("geometry needs at least 2 distinct classes present");

    GeometryReport r;
    r.num_classes = num_classes;
    const std::size_t kk = static_cast<std::size_t>(num_classes) * num_classes;
    std::vector<double> sum(kk, 0.0);
    std::vector<long long> count(kk, 0);
    double intra_sum = 0.0, inter_sum = 0.0;
    long long intra_n = 0, inter_n = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double c = cosine_rows(rows[i], rows[j]);
            const int a = std::min(y[i], y[j]), b = std::max(y[i], y[j]);
            sum[static_cast<std::size_t>(a) * num_classes + b] += c;
            ++count[static_cast<std::size_t>(a) * num_classes + b];
            if (y[i] == y[j]) {
                intra_sum += c;
                ++intra_n;
            } else {
                inter_sum += c;
                ++inter_n;
            }
        }
    }
    r.mean_intra = intra_n > 0 ? intra_sum / static_cast<double>(intra_n) : 0.0;
    r.mean_inter = inter_n > 0 ? inter_sum / static_cast<double>(inter_n) : 0.0;
    r.margin = r.mean_intra - r.mean_inter;
    r.pair_mean.assign(kk, 0.0);
    for (int a = 0; a < num_classes; ++a) {
        for (int b = a; b < num_classes; ++b) {
            const std::size_t u = static_cast<std::size_t>(a) * num_classes + b;
            const double mean = count[u] > 0 ? sum[u] / static_cast<double>(count[u]) : 0.0;
            r.pair_mean[u] = mean;
            r.pair_mean[static_cast<std::size_t>(b) * num_classes + a] = mean;
        }
    }
    return r;
}

nlohmann::json to_json(const GeometryReport& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (int a = 0; a < r.num_classes; ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (int b = 0; b < r.num_classes; ++b) row.push_back(r.pair(a, b));
        pairs.push_back(row);
    }
    return {{"num_classes", r.num_classes},
            {"mean_intra", r.mean_intra},
            {"mean_inter", r.mean_inter},
            {"margin", r.margin},
            {"pair_mean", pairs}};
}

} // namespace larc
