#pragma once

#include <vector>

namespace muscl::metrics {

/// Classification report. Sensitivity = TP/(TP+FN) and specificity =
/// TN/(TN+FP) are one-vs-rest per class; macro F1 is the mean of per-class F1.
struct ProbeReport {
    int n_classes = 0;
    double accuracy = 0.0;
    std::vector<double> sensitivity;  // per class
    std::vector<double> specificity;  // per class
    std::vector<double> f1;           // per class
    double macro_f1 = 0.0;
    std::vector<std::vector<long>> confusion;  // confusion[truth][pred]
};

ProbeReport compute_report(const std::vector<int>& truth, const std::vector<int>& pred,
                           int n_classes);

}  // namespace muscl::metrics
