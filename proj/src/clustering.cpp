#include "sacvit/clustering.hpp"

#include <algorithm>
#include <numeric>

namespace sacvit {

std::vector<double> moving_average_scores(const AttentionTrace& trace, double beta) {
    if (trace.per_layer_cls_rows.empty()) {
        throw_invalid("moving_average_scores: empty trace");
    }
    const size_t n = trace.per_layer_cls_rows.front().size();
    std::vector<double> avg(n, 0.0);
    for (const auto& row : trace.per_layer_cls_rows) {
        if (row.size() != n) throw_shape("moving_average_scores: ragged trace");
        for (size_t i = 0; i < n; ++i) {
            avg[i] = beta * avg[i] + (1.0 - beta) * row[i];
        }
    }
    return avg;
}

std::pair<std::vector<int>, std::vector<int>> select_targets(const std::vector<double>& scores,
                                                             double alpha) {
    const int n = static_cast<int>(scores.size());
    if (n < 2) throw_invalid("select_targets: need at least 2 tokens");
    if (!(alpha > 0.0 && alpha < 1.0)) throw_invalid("select_targets: alpha out of range");
    const int m = std::clamp(static_cast<int>(alpha * n), 1, n - 1);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<int> target(order.begin(), order.begin() + m);
    std::vector<int> rest(order.begin() + m, order.end());
    std::sort(target.begin(), target.end());
    std::sort(rest.begin(), rest.end());
    return {std::move(target), std::move(rest)};
}

std::array<int, 4> map_to_high_res(int index, int grid_h, int grid_w) {
    const int n = grid_h * grid_w;
    if (index < 0 || index >= n) throw_invalid("map_to_high_res: index out of range");
    const int r = index / grid_w;
    const int c = index % grid_w;
    const int high_w = 2 * grid_w;
    const int id1 = 2 * r * high_w + 2 * c;
    return {id1, id1 + 1, id1 + high_w, id1 + high_w + 1};
}

void validate_partition(const ClusterPartition& p, int n_low) {
    const int m = p.num_targets();
    if (m < 1 || m > n_low - 1) throw_internal("partition: target count out of range");
    if (static_cast<int>(p.nontarget_low.size()) != n_low - m) {
        throw_internal("partition: non-target count mismatch");
    }
    std::vector<char> seen(n_low, 0);
    for (int i : p.target_low) {
        if (i < 0 || i >= n_low || seen[i]) throw_internal("partition: bad target index");
        seen[i] = 1;
    }
    for (int i : p.nontarget_low) {
        if (i < 0 || i >= n_low || seen[i]) throw_internal("partition: bad non-target index");
        seen[i] = 1;
    }
    if (static_cast<int>(p.target_high.size()) != 4 * m) {
        throw_internal("partition: mapped index count mismatch");
    }
    std::vector<char> seen_high(4 * n_low, 0);
    for (int i : p.target_high) {
        if (i < 0 || i >= 4 * n_low || seen_high[i]) {
            throw_internal("partition: bad high-res index");
        }
        seen_high[i] = 1;
    }
}

ClusterPartition build_partition(const AttentionTrace& trace, const ModelConfig& cfg) {
    const std::vector<double> scores = moving_average_scores(trace, cfg.beta);
    if (static_cast<int>(scores.size()) != cfg.num_low_tokens()) {
        throw_shape("build_partition: trace length does not match the low-res grid");
    }
    ClusterPartition p;
    std::tie(p.target_low, p.nontarget_low) = select_targets(scores, cfg.alpha);
    p.target_high.reserve(4 * p.target_low.size());
    for (int i : p.target_low) {
        const auto ids = map_to_high_res(i, cfg.grid_h(), cfg.grid_w());
        p.target_high.insert(p.target_high.end(), ids.begin(), ids.end());
    }
    validate_partition(p, cfg.num_low_tokens());
    return p;
}

} // namespace sacvit
