#pragma once

// Classification metrics over plain label/score vectors: accuracy, macro-F1,
// and one-vs-rest macro-AUC via the Mann-Whitney rank statistic with average
// ranks for ties. These operate on already-decoded predictions, not tensors,
// so the training loop can call them after detaching from the graph.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "loasp/common.hpp"

namespace loasp {

inline double accuracy(const std::vector<long>& preds, const std::vector<long>& labels) {
    if (labels.empty()) throw ContractError("accuracy: empty input");
    if (preds.size() != labels.size())
        throw ContractError("accuracy: got " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    long hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Unweighted mean of per-class F1 over every class that appears in either
// vector. A class with zero precision+recall denominator contributes 0.
inline double macro_f1(const std::vector<long>& preds, const std::vector<long>& labels) {
    if (labels.empty()) throw ContractError("macro_f1: empty input");
    if (preds.size() != labels.size())
        throw ContractError("macro_f1: got " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    std::set<long> classes(labels.begin(), labels.end());
    classes.insert(preds.begin(), preds.end());
    double sum = 0.0;
    for (long c : classes) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            bool is_pred = preds[i] == c;
            bool is_true = labels[i] == c;
            if (is_pred && is_true) ++tp;
            else if (is_pred) ++fp;
            else if (is_true) ++fn;
        }
        long denom = 2 * tp + fp + fn;
        if (denom > 0) sum += 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(classes.size());
}

// One-vs-rest AUC for a single class given its score column. Computes the
// rank-sum form U / (n_pos * n_neg); tied scores share their average rank,
// which is exactly the 1/2-credit tie correction of the Mann-Whitney U.
inline double binary_auc_rank(const std::vector<double>& scores, const std::vector<bool>& positive) {
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        // 1-based ranks i+1..j+1 averaged across the tie group
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }

    double rank_sum = 0.0;
    long n_pos = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (positive[t]) {
            rank_sum += rank[t];
            ++n_pos;
        }
    }
    long n_neg = static_cast<long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw ContractError("binary_auc_rank: need at least one positive and one negative example");
    double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// scores is row-major [N, num_classes]; labels holds N class ids. Classes with
// no positive or no negative example are skipped with a note on `warn` and do
// not enter the mean. Throws if every class is degenerate that way.
inline double macro_auc(const std::vector<double>& scores, const std::vector<long>& labels,
                        long num_classes, std::ostream* warn = &std::cerr) {
    if (labels.empty()) throw ContractError("macro_auc: empty input");
    if (num_classes < 2)
        throw ContractError("macro_auc: need at least 2 classes, got " + std::to_string(num_classes));
    std::size_t n = labels.size();
    if (scores.size() != n * static_cast<std::size_t>(num_classes))
        throw ContractError("macro_auc: got " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(n) + " labels over " + std::to_string(num_classes) +
                            " classes");
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ContractError("macro_auc: label at index " + std::to_string(i) + " is " +
                                std::to_string(labels[i]) + ", outside [0," +
                                std::to_string(num_classes) + ")");

    double sum = 0.0;
    long kept = 0;
    std::vector<double> column(n);
    std::vector<bool> positive(n);
    for (long c = 0; c < num_classes; ++c) {
        long n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = scores[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)];
            positive[i] = labels[i] == c;
            if (positive[i]) ++n_pos;
        }
        if (n_pos == 0 || n_pos == static_cast<long>(n)) {
            if (warn != nullptr)
                *warn << "macro_auc: class " << c << " has no "
                      << (n_pos == 0 ? "positive" : "negative") << " examples, skipping\n";
            continue;
        }
        sum += binary_auc_rank(column, positive);
        ++kept;
    }
    if (kept == 0) throw ContractError("macro_auc: no class has both positive and negative examples");
    return sum / static_cast<double>(kept);
}

}  // namespace loasp
