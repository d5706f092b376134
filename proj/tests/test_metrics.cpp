#include <doctest.h>

#include <cmath>

#include "taco/metrics.hpp"
#include "taco/rng.hpp"

using namespace taco;

namespace {

// Brute-force pairwise oracle: P(score_pos > score_neg) + 0.5 P(tie).
double auc_brute(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

double ovo_brute(const std::vector<double>& probs, std::int64_t c, const std::vector<int>& labels) {
    double sum = 0.0;
    std::int64_t pairs = 0;
    for (std::int64_t a = 0; a < c; ++a) {
        for (std::int64_t b = 0; b < c; ++b) {
            if (a == b) continue;
            std::vector<double> scores;
            std::vector<int> pair_labels;
            for (std::size_t r = 0; r < labels.size(); ++r) {
                if (labels[r] != a && labels[r] != b) continue;
                const double pa = probs[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(a)];
                const double pb = probs[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(b)];
                scores.push_back(pa + pb > 0 ? pa / (pa + pb) : 0.5);
                pair_labels.push_back(labels[r] == a ? 1 : 0);
            }
            bool both = false, pos = false, neg = false;
            for (int y : pair_labels) (y ? pos : neg) = true;
            both = pos && neg;
            if (!both) continue;
            sum += auc_brute(scores, pair_labels);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("binary auc hand example and edge cases") {
    CHECK(roc_auc_binary({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
    CHECK(roc_auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    CHECK(roc_auc_binary({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(roc_auc_binary({0.5, 0.6}, {1, 1}), DataError);
}

TEST_CASE("ovo reduces to binary for two classes") {
    const std::vector<double> probs{0.9, 0.1, 0.3, 0.7, 0.4, 0.6, 0.2, 0.8};
    const std::vector<int> labels{0, 1, 1, 0};
    std::vector<double> p1(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) p1[i] = probs[i * 2 + 1];
    CHECK(roc_auc_ovo(probs, 2, labels) == doctest::Approx(roc_auc_binary(p1, labels)).epsilon(1e-12));
}

TEST_CASE("ovo: perfect one-hot predictions score 1") {
    const std::vector<int> labels{0, 1, 2, 1, 0, 2};
    std::vector<double> probs(labels.size() * 3, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) probs[i * 3 + static_cast<std::size_t>(labels[i])] = 1.0;
    CHECK(roc_auc_ovo(probs, 3, labels) == doctest::Approx(1.0));
}

TEST_CASE("ovo matches brute force on a handcrafted 3-class case") {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const std::vector<double> probs{
        0.6, 0.3, 0.1, 0.5, 0.25, 0.25, 0.2, 0.5, 0.3,
        0.3, 0.4, 0.3, 0.1, 0.2,  0.7,  0.25, 0.25, 0.5,
    };
    CHECK(roc_auc_ovo(probs, 3, labels) == doctest::Approx(ovo_brute(probs, 3, labels)).epsilon(1e-12));
}

TEST_CASE("metric oracle equivalence on 200 random small instances") {
    Rng rng(12);
    int done = 0;
    while (done < 200) {
        const auto rows = rng.uniform_int(4, 30);
        const auto classes = rng.uniform_int(2, 4);
        std::vector<int> labels(static_cast<std::size_t>(rows));
        for (auto& y : labels) y = static_cast<int>(rng.uniform_int(0, classes - 1));
        std::vector<bool> present(static_cast<std::size_t>(classes), false);
        for (int y : labels) present[static_cast<std::size_t>(y)] = true;
        int n_present = 0;
        for (bool b : present) n_present += b;
        if (n_present < 2) continue;

        std::vector<double> probs(static_cast<std::size_t>(rows * classes));
        for (std::int64_t r = 0; r < rows; ++r) {
            double sum = 0;
            for (std::int64_t c = 0; c < classes; ++c) {
                // quantized so ties actually occur
                const double v = std::floor(rng.uniform() * 8) / 8.0 + 0.01;
                probs[static_cast<std::size_t>(r * classes + c)] = v;
                sum += v;
            }
            for (std::int64_t c = 0; c < classes; ++c)
                probs[static_cast<std::size_t>(r * classes + c)] /= sum;
        }
        if (classes == 2) {
            std::vector<double> p1(static_cast<std::size_t>(rows));
            for (std::int64_t r = 0; r < rows; ++r) p1[static_cast<std::size_t>(r)] =
                probs[static_cast<std::size_t>(r * 2 + 1)];
            CHECK(std::abs(roc_auc_binary(p1, labels) - auc_brute(p1, labels)) < 1e-12);
        }
        CHECK(std::abs(roc_auc_ovo(probs, classes, labels) - ovo_brute(probs, classes, labels)) <
              1e-12);
        ++done;
    }
}

TEST_CASE("accuracy and log loss") {
    const std::vector<double> probs{0.8, 0.2, 0.3, 0.7};
    const std::vector<int> labels{0, 1};
    CHECK(accuracy(probs, 2, labels) == doctest::Approx(1.0));
    CHECK(log_loss(probs, 2, labels) ==
          doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2.0));
}
