#include "muscl/metrics.hpp"

#include <stdexcept>

namespace muscl::metrics {

ProbeReport compute_report(const std::vector<int>& truth, const std::vector<int>& pred,
                           int n_classes) {
    if (truth.size() != pred.size() || truth.empty())
        throw std::invalid_argument("compute_report: truth/pred size mismatch or empty");
    ProbeReport r;
    r.n_classes = n_classes;
    r.confusion.assign(n_classes, std::vector<long>(n_classes, 0));
    long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes)
            throw std::invalid_argument("compute_report: label out of range");
        r.confusion[truth[i]][pred[i]] += 1;
        if (truth[i] == pred[i]) ++correct;
    }
    long total = static_cast<long>(truth.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(total);

    for (int c = 0; c < n_classes; ++c) {
        long tp = r.confusion[c][c];
        long fn = 0, fp = 0;
        for (int k = 0; k < n_classes; ++k) {
            if (k != c) {
                fn += r.confusion[c][k];
                fp += r.confusion[k][c];
            }
        }
        long tn = total - tp - fn - fp;
        r.sensitivity.push_back(tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0);
        r.specificity.push_back(tn + fp > 0 ? static_cast<double>(tn) / (tn + fp) : 0.0);
        double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        r.f1.push_back(prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0);
        r.macro_f1 += r.f1.back();
    }
    r.macro_f1 /= n_classes;
    return r;
}

}  // namespace muscl::metrics
