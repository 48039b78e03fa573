#include "rrrn/metrics.hpp"

#include <numeric>

#include "rrrn/error.hpp"

namespace rrrn {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
    if (classes < 1) throw Error(ErrorCode::ShapeMismatch, "confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<long long> counts) : ConfusionMatrix(classes) {
    if (counts.size() != counts_.size()) throw Error(ErrorCode::ShapeMismatch, "confusion counts size mismatch");
    for (auto c : counts) {
        if (c < 0) throw Error(ErrorCode::ShapeMismatch, "negative confusion count");
    }
    counts_ = std::move(counts);
}

std::size_t ConfusionMatrix::index(int truth, int predicted) const {
    if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
        throw Error(ErrorCode::LabelOutOfRange, "class index outside confusion matrix");
    }
    return static_cast<std::size_t>(truth) * classes_ + predicted;
}

void ConfusionMatrix::add(int truth, int predicted, long long n) { counts_[index(truth, predicted)] += n; }

long long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0LL); }

long long ConfusionMatrix::support(int cls) const {
    long long n = 0;
    for (int p = 0; p < classes_; ++p) n += at(cls, p);
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw Error(ErrorCode::ShapeMismatch, "cannot pool matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::vector<std::vector<long long>> ConfusionMatrix::rows() const {
    std::vector<std::vector<long long>> out(static_cast<std::size_t>(classes_));
    for (int t = 0; t < classes_; ++t) {
        for (int p = 0; p < classes_; ++p) out[static_cast<std::size_t>(t)].push_back(at(t, p));
    }
    return out;
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<long long>>& rows) {
    ConfusionMatrix cm(static_cast<int>(rows.size()));
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].size() != rows.size()) throw Error(ErrorCode::ShapeMismatch, "confusion matrix must be square");
        for (std::size_t p = 0; p < rows.size(); ++p) {
            if (rows[t][p] < 0) throw Error(ErrorCode::ShapeMismatch, "negative confusion count");
            cm.add(static_cast<int>(t), static_cast<int>(p), rows[t][p]);
        }
    }
    return cm;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
    const long long n = cm.total();
    if (n <= 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
    const int classes = cm.classes();

    Metrics m;
    long long tp_sum = 0;
    double recall_sum = 0.0, f1_sum = 0.0, wf1 = 0.0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
        const long long tp = cm.at(c, c);
        const long long support = cm.support(c);
        long long predicted = 0;
        for (int t = 0; t < classes; ++t) predicted += cm.at(t, c);
        const long long fn = support - tp;
        const long long fp = predicted - tp;
        tp_sum += tp;
        if (support == 0) {
            m.excluded_classes.push_back(c);
            continue;
        }
        ++counted;
        const double f1_c = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        recall_sum += static_cast<double>(tp) / support;
        f1_sum += f1_c;
        wf1 += static_cast<double>(support) / n * f1_c;
    }
    m.war = static_cast<double>(tp_sum) / n;
    m.uar = recall_sum / counted;
    m.f1 = f1_sum / counted;
    m.wf1 = wf1;
    return m;
}

}  // namespace rrrn
