#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "larc/common.hpp"
#include "larc/tensor.hpp"

// Evaluation metrics (support-weighted F1/recall over a confusion matrix) and
// representation-geometry diagnostics (mean intra/inter-class cosine
// similarity and their gap). Labels here are 0-based class indices in [0, K).

namespace larc {

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
};

struct EvalReport {
    int num_classes = 0;
    long long total = 0;
    double weighted_f1 = 0.0;
    double weighted_recall = 0.0;
    std::vector<ClassScore> per_class;
    std::vector<long long> confusion; // K*K row-major, rows indexed by true class
    int zero_division_classes = 0;    // classes whose F1 was forced to 0 by P+R=0

    long long at(int truth, int pred) const {
        return confusion[static_cast<std::size_t>(truth) * num_classes + pred];
    }
};

EvalReport weighted_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                       int num_classes);

nlohmann::json to_json(const EvalReport& r);
std::string confusion_csv(const EvalReport& r);

struct GeometryReport {
    int num_classes = 0;
    double mean_intra = 0.0; // mean cosine over all same-class pairs
    double mean_inter = 0.0; // mean cosine over all cross-class pairs
    double margin = 0.0;     // mean_intra - mean_inter
    // K*K symmetric matrix of mean pairwise cosine between classes i and j;
    // diagonal entries are the per-class intra means. Cells with no pairs
    // (singleton or absent classes) hold 0.
    std::vector<double> pair_mean;

    double pair(int i, int j) const {
        return pair_mean[static_cast<std::size_t>(i) * num_classes + j];
    }
};

nlohmann::json to_json(const GeometryReport& r);

// Exact O(N^2) pairwise cosine statistics over row vectors. Requires at
// least two rows and at least two distinct classes present.
GeometryReport geometry(const std::vector<std::vector<double>>& rows, const std::vector<int>& y,
                        int num_classes);

// Convenience adapter for [N, d] projection tensors.
template <class S>
GeometryReport geometry(const TensorT<S>& c, const std::vector<int>& y, int num_classes) {
    if (c.shape().size() != 2) throw ShapeError("geometry expects a rank-2 [N, d] tensor");
    const int n = c.shape()[0];
    const int d = c.shape()[1];
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            rows[i][j] = static_cast<double>(c.data()[static_cast<std::size_t>(i) * d + j]);
    return geometry(rows, y, num_classes);
}

} // namespace larc
