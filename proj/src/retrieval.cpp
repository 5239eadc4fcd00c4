#include "viewset/retrieval.hpp"

#include "viewset/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace viewset {

RankList build_rank_list(const ShapePrediction& query,
                         const std::vector<ShapePrediction>& gallery, bool use_subcat) {
    RankList out;
    out.query_id = query.shape_id;
    for (const ShapePrediction& g : gallery) {
        if (g.shape_id == query.shape_id) continue;
        if (g.pred_class != query.pred_class) continue;
        out.entries.push_back({g.shape_id, g.pred_class_prob});
    }
    std::sort(out.entries.begin(), out.entries.end(),
              [](const RankedEntry& a, const RankedEntry& b) {
                  if (a.class_prob != b.class_prob) return a.class_prob > b.class_prob;
                  return a.shape_id < b.shape_id;
              });
    if (use_subcat) {
        std::map<long, std::size_t> sub;
        for (const ShapePrediction& g : gallery) sub[g.shape_id] = g.pred_subclass;
        std::stable_partition(out.entries.begin(), out.entries.end(),
                              [&](const RankedEntry& e) {
                                  return sub.at(e.shape_id) == query.pred_subclass;
                              });
    }
    return out;
}

void precision_recall_f1_at_n(const std::vector<int>& rels, std::size_t total_relevant,
                              std::size_t n, double& p, double& r, double& f1) {
    const std::size_t returned = std::min(n, rels.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < returned; ++k)
        if (rels[k]) ++hits;
    p = returned == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(returned);
    r = total_relevant == 0 ? 0.0
                            : static_cast<double>(hits) / static_cast<double>(total_relevant);
    f1 = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double average_precision(const std::vector<int>& rels, std::size_t total_relevant) {
    if (total_relevant == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rels.size(); ++k) {
        if (!rels[k]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return sum / static_cast<double>(total_relevant);
}

double ndcg(const std::vector<double>& gains, std::size_t n) {
    const std::size_t returned = std::min(n, gains.size());
    double dcg = 0.0;
    for (std::size_t k = 0; k < returned; ++k)
        dcg += gains[k] / std::log2(static_cast<double>(k) + 2.0);
    std::vector<double> ideal(gains.begin(), gains.begin() + static_cast<long>(returned));
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t k = 0; k < returned; ++k)
        idcg += ideal[k] / std::log2(static_cast<double>(k) + 2.0);
    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

QueryMetrics score_rank_list(const RankList& list, const ShapePrediction& query,
                             const std::vector<ShapePrediction>& gallery, std::size_t n) {
    std::map<long, const ShapePrediction*> by_id;
    std::size_t total_relevant = 0;
    for (const ShapePrediction& g : gallery) {
        by_id[g.shape_id] = &g;
        if (g.shape_id != query.shape_id && g.true_label == query.true_label) ++total_relevant;
    }
    std::vector<int> rels;
    std::vector<double> gains;
    rels.reserve(list.entries.size());
    gains.reserve(list.entries.size());
    for (const RankedEntry& e : list.entries) {
        auto it = by_id.find(e.shape_id);
        if (it == by_id.end()) throw ContractError("rank list names a shape absent from the gallery");
        const ShapePrediction& g = *it->second;
        const bool cat = g.true_label == query.true_label;
        const bool sub = cat && g.true_sublabel == query.true_sublabel;
        rels.push_back(cat ? 1 : 0);
        gains.push_back(sub ? 2.0 : (cat ? 1.0 : 0.0));
    }
    QueryMetrics m;
    precision_recall_f1_at_n(rels, total_relevant, n, m.p_at_n, m.r_at_n, m.f1_at_n);
    m.ap = average_precision(rels, total_relevant);
    m.ndcg = ndcg(gains, n);
    return m;
}

MetricReport aggregate(const std::vector<QueryMetrics>& per_query,
                       const std::vector<int>& query_categories, std::size_t n) {
    if (per_query.size() != query_categories.size())
        throw ContractError("per-query metrics and categories must pair up");
    if (per_query.empty()) throw ContractError("cannot aggregate zero queries");
    MetricReport rep;
    rep.n = n;
    auto add = [](QueryMetrics& acc, const QueryMetrics& m) {
        acc.p_at_n += m.p_at_n;
        acc.r_at_n += m.r_at_n;
        acc.f1_at_n += m.f1_at_n;
        acc.ap += m.ap;
        acc.ndcg += m.ndcg;
    };
    auto div = [](QueryMetrics& acc, double d) {
        acc.p_at_n /= d;
        acc.r_at_n /= d;
        acc.f1_at_n /= d;
        acc.ap /= d;
        acc.ndcg /= d;
    };
    std::map<int, QueryMetrics> per_cat;
    std::map<int, std::size_t> cat_counts;
    for (std::size_t i = 0; i < per_query.size(); ++i) {
        add(rep.micro, per_query[i]);
        add(per_cat[query_categories[i]], per_query[i]);
        ++cat_counts[query_categories[i]];
    }
    div(rep.micro, static_cast<double>(per_query.size()));
    for (auto& [cat, acc] : per_cat) {
        div(acc, static_cast<double>(cat_counts.at(cat)));
        add(rep.macro, acc);
    }
    div(rep.macro, static_cast<double>(per_cat.size()));
    return rep;
}

RetrievalResult evaluate_retrieval(const std::vector<ShapePrediction>& shapes, std::size_t n,
                                   bool use_subcat) {
    if (shapes.empty()) throw ContractError("retrieval needs at least one shape");
    RetrievalResult out;
    std::vector<QueryMetrics> per_query;
    std::vector<int> cats;
    per_query.reserve(shapes.size());
    cats.reserve(shapes.size());
    for (const ShapePrediction& q : shapes) {
        RankList list = build_rank_list(q, shapes, use_subcat);
        per_query.push_back(score_rank_list(list, q, shapes, n));
        cats.push_back(q.true_label);
        out.lists.push_back(std::move(list));
    }
    out.report = aggregate(per_query, cats, n);
    return out;
}

void save_rank_lists(const std::string& path, const std::vector<RankList>& lists) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open for writing: " + path);
    for (const RankList& l : lists) {
        f << l.query_id << ':';
        for (const RankedEntry& e : l.entries) f << ' ' << e.shape_id;
        f << '\n';
    }
    if (!f.good()) throw InputError("write failed: " + path);
}

void save_metric_report(const std::string& path, const MetricReport& report) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open for writing: " + path);
    char buf[512];
    f << "avg,p_at_n,r_at_n,f1_at_n,map,ndcg\n";
    auto row = [&](const char* name, const QueryMetrics& m) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", name, m.p_at_n,
                      m.r_at_n, m.f1_at_n, m.ap, m.ndcg);
        f << buf;
    };
    row("micro", report.micro);
    row("macro", report.macro);
    if (!f.good()) throw InputError("write failed: " + path);
}

} // namespace viewset
