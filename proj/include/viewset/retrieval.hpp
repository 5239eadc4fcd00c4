#pragma once

#include "viewset/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace viewset {

// What the retrieval pipeline knows about one shape: ground truth plus the
// two models' predictions.
struct ShapePrediction {
    long shape_id = 0;
    int true_label = 0;
    int true_sublabel = 0;
    std::size_t pred_class = 0;
    double pred_class_prob = 0.0; // probability of pred_class
    std::size_t pred_subclass = 0;
    bool has_subclass = false;
};

struct RankedEntry {
    long shape_id = 0;
    double class_prob = 0.0;
};

struct RankList {
    long query_id = 0;
    std::vector<RankedEntry> entries;
};

struct QueryMetrics {
    double p_at_n = 0.0, r_at_n = 0.0, f1_at_n = 0.0, ap = 0.0, ndcg = 0.0;
};

struct MetricReport {
    QueryMetrics micro, macro;
    std::size_t n = 1000;
};

// Pass 1: gallery shapes sharing the query's predicted category, by that
// category's probability descending (ties: shape id ascending), query itself
// excluded. Pass 2 (when use_subcat): stable partition moving shapes whose
// predicted subcategory matches the query's to the front, order otherwise
// preserved.
RankList build_rank_list(const ShapePrediction& query,
                         const std::vector<ShapePrediction>& gallery, bool use_subcat);

// Over the first min(N, len) entries: P = hits/returned, R = hits/total
// (0 if total = 0), F1 = harmonic mean or 0.
void precision_recall_f1_at_n(const std::vector<int>& rels, std::size_t total_relevant,
                              std::size_t n, double& p, double& r, double& f1);

// Mean of precision-at-hit over relevant positions; 0 when nothing relevant.
double average_precision(const std::vector<int>& rels, std::size_t total_relevant);

// Graded gains, DCG discount log2(k+1), normalized by the ideal ordering of
// the returned gains; 0 when the ideal DCG is 0.
double ndcg(const std::vector<double>& gains, std::size_t n);

// Metrics of one rank list against ground truth: binary relevance = same true
// category; NDCG gains 2 (category+subcategory), 1 (category), 0.
QueryMetrics score_rank_list(const RankList& list, const ShapePrediction& query,
                             const std::vector<ShapePrediction>& gallery, std::size_t n);

// micro = mean over queries; macro = mean over true categories of the
// per-category query means.
MetricReport aggregate(const std::vector<QueryMetrics>& per_query,
                       const std::vector<int>& query_categories, std::size_t n);

struct RetrievalResult {
    MetricReport report;
    std::vector<RankList> lists;
};

// Every shape queries the whole gallery (itself excluded).
RetrievalResult evaluate_retrieval(const std::vector<ShapePrediction>& shapes, std::size_t n,
                                   bool use_subcat);

// `query_id: id1 id2 ...` per line.
void save_rank_lists(const std::string& path, const std::vector<RankList>& lists);
// CSV: header + one micro row + one macro row.
void save_metric_report(const std::string& path, const MetricReport& report);

} // namespace viewset
