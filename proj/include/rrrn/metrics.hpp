#pragma once

#include <vector>

namespace rrrn {

/// Rows are true classes, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes = 5);
    ConfusionMatrix(int classes, std::vector<long long> counts);

    int classes() const { return classes_; }
    long long at(int truth, int predicted) const { return counts_[index(truth, predicted)]; }
    void add(int truth, int predicted, long long n = 1);
    long long total() const;
    long long support(int cls) const;  // N_c, row sum
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    std::vector<std::vector<long long>> rows() const;
    static ConfusionMatrix from_rows(const std::vector<std::vector<long long>>& rows);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t index(int truth, int predicted) const;

    int classes_;
    std::vector<long long> counts_;
};

struct Metrics {
    double war = 0.0;
    double uar = 0.0;
    double f1 = 0.0;
    double wf1 = 0.0;
    /// Classes without test samples; left out of the UAR and F1 macro averages.
    std::vector<int> excluded_classes;
};

Metrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace rrrn
