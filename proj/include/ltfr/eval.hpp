#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ltfr/data.hpp"

namespace ltfr {

// Candidates ranked for one query: scores strictly descending, ties broken
// by ascending id, query excluded.
struct RankedList {
  std::string query;
  std::vector<std::pair<std::string, double>> items;  // (id, score)
};

using RelevanceMap = std::map<std::string, std::set<std::string>>;

// K highest-cosine candidates (all of them when K exceeds the catalog).
RankedList topk_retrieve(const EmbeddingMatrix& emb, const std::string& query, size_t k);

// Fraction of scored queries (those with >= 1 relevant item) whose top-K
// holds at least one relevant item. Throws ValidationError when no query is
// scorable.
double hit_ratio_at_k(const std::vector<RankedList>& ranked, const RelevanceMap& relevance,
                      size_t k);
// Mean average precision over the full ranking of scored queries.
double map_metric(const std::vector<RankedList>& ranked, const RelevanceMap& relevance);
// Binary-gain DCG@K (discount 1/log2(rank+1)) over ideal DCG.
double ndcg_metric(const std::vector<RankedList>& ranked, const RelevanceMap& relevance,
                   size_t k);

// Mean over queries of the mean fraction of matching meta fields (genre,
// region, popularity) in the top-K. `strict` counts only full-tuple matches.
double consistent_at_k(const std::vector<RankedList>& ranked,
                       const std::map<std::string, const EntityRecord*>& catalog, size_t k,
                       bool strict = false);

struct EvalReport {
  std::string task_kind;
  std::vector<size_t> ks;
  struct AllSegment {
    size_t query_count = 0;         // every evaluated query
    size_t scored_query_count = 0;  // queries with >= 1 relevance edge
    std::map<size_t, double> hr;
    std::map<size_t, double> ndcg;
    std::map<size_t, double> consistent;
    double map = 0.0;
  } all;
  struct TailSegment {
    size_t query_count = 0;
    std::map<size_t, double> consistent;
  } long_tail;
};

// Full protocol over one split: candidates are the split's task entities,
// relevance edges are those with both endpoints inside the split. Relevance
// metrics cover segment {all}; Consistent@K additionally covers the
// long-tail segment (whose queries have no relevance edges by definition).
EvalReport evaluate(const EmbeddingMatrix& emb, const DatasetBundle& bundle,
                    const std::set<std::string>& long_tail, const std::vector<size_t>& ks,
                    bool strict_consistent = false, Split split = Split::test);

// Machine/human renderings; the JSON schema is versioned (see README).
std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace ltfr
