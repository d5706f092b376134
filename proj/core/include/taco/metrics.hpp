#pragma once

#include <cstdint>
#include <vector>

#include "taco/errors.hpp"

namespace taco {

// P(random positive outranks random negative), ties counted 1/2.
// Throws DataError unless both classes are present.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Multiclass one-vs-one AUC: unweighted mean over all ordered class pairs
// (i,j), i != j, of the binary AUC on rows labeled i or j, scoring each row
// by p_i / (p_i + p_j). For two classes this reduces to roc_auc_binary.
// `probabilities` is row-major T x C.
double roc_auc_ovo(const std::vector<double>& probabilities, std::int64_t n_classes,
                   const std::vector<int>& labels);

double accuracy(const std::vector<double>& probabilities, std::int64_t n_classes,
                const std::vector<int>& labels);

double log_loss(const std::vector<double>& probabilities, std::int64_t n_classes,
                const std::vector<int>& labels);

}  // namespace taco
