#include "taco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace taco {

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw DataError("roc_auc_binary: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(labels.size()) + " labels");
    std::int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y == 1)
            ++n_pos;
        else if (y == 0)
            ++n_neg;
        else
            throw DataError("roc_auc_binary: labels must be 0/1");
    }
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_auc_binary: both classes must be present");

    // Rank-sum formulation with midranks for ties; equals the brute-force
    // pairwise count with ties at 1/2.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double roc_auc_ovo(const std::vector<double>& probabilities, std::int64_t n_classes,
                   const std::vector<int>& labels) {
    if (n_classes < 2) throw DataError("roc_auc_ovo: need at least two classes");
    const auto t = static_cast<std::int64_t>(labels.size());
    if (probabilities.size() != static_cast<std::size_t>(t * n_classes))
        throw DataError("roc_auc_ovo: probability matrix shape mismatch");

    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw DataError("roc_auc_ovo: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    std::int64_t present = 0;
    for (std::int64_t c : counts) present += c > 0 ? 1 : 0;
    if (present < 2) throw DataError("roc_auc_ovo: need at least two classes present");

    double sum = 0.0;
    std::int64_t pairs = 0;
    for (std::int64_t a = 0; a < n_classes; ++a) {
        for (std::int64_t b = 0; b < n_classes; ++b) {
            if (a == b || counts[a] == 0 || counts[b] == 0) continue;
            std::vector<double> scores;
            std::vector<int> pair_labels;
            for (std::int64_t r = 0; r < t; ++r) {
                if (labels[r] != a && labels[r] != b) continue;
                const double pa = probabilities[static_cast<std::size_t>(r * n_classes + a)];
                const double pb = probabilities[static_cast<std::size_t>(r * n_classes + b)];
                const double denom = pa + pb;
                scores.push_back(denom > 0.0 ? pa / denom : 0.5);
                pair_labels.push_back(labels[r] == a ? 1 : 0);
            }
            sum += roc_auc_binary(scores, pair_labels);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

double accuracy(const std::vector<double>& probabilities, std::int64_t n_classes,
                const std::vector<int>& labels) {
    const auto t = static_cast<std::int64_t>(labels.size());
    std::int64_t hits = 0;
    for (std::int64_t r = 0; r < t; ++r) {
        const double* p = probabilities.data() + r * n_classes;
        const auto arg = std::max_element(p, p + n_classes) - p;
        hits += arg == labels[static_cast<std::size_t>(r)] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(t);
}

double log_loss(const std::vector<double>& probabilities, std::int64_t n_classes,
                const std::vector<int>& labels) {
    const auto t = static_cast<std::int64_t>(labels.size());
    double sum = 0.0;
    for (std::int64_t r = 0; r < t; ++r) {
        const double p =
            probabilities[static_cast<std::size_t>(r * n_classes + labels[static_cast<std::size_t>(r)])];
        sum -= std::log(std::max(p, 1e-15));
    }
    return sum / static_cast<double>(t);
}

}  // namespace taco
