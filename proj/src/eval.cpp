#include "ltfr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltfr/error.hpp"

namespace ltfr {

using nlohmann::json;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace

RankedList topk_retrieve(const EmbeddingMatrix& emb, const std::string& query, size_t k) {
  if (k < 1) throw ValidationError("topk_retrieve: K must be >= 1");
  auto qit = emb.index.find(query);
  if (qit == emb.index.end()) {
    throw UnknownIdError("topk_retrieve: unknown query id '" + query + "'");
  }
  const std::vector<double> q = emb.values.row(qit->second);

  RankedList out;
  out.query = query;
  out.items.reserve(emb.count() > 0 ? emb.count() - 1 : 0);
  for (size_t i = 0; i < emb.count(); ++i) {
    if (i == qit->second) continue;
    out.items.push_back({emb.ids[i], cosine(q, emb.values.row(i))});
  }
  std::sort(out.items.begin(), out.items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.items.size() > k) out.items.resize(k);
  return out;
}

double hit_ratio_at_k(const std::vector<RankedList>& ranked, const RelevanceMap& relevance,
                      size_t k) {
  size_t scored = 0, hits = 0;
  for (const auto& list : ranked) {
    auto rit = relevance.find(list.query);
    if (rit == relevance.end() || rit->second.empty()) continue;
    ++scored;
    const size_t limit = std::min(k, list.items.size());
    for (size_t r = 0; r < limit; ++r) {
      if (rit->second.count(list.items[r].first)) {
        ++hits;
        break;
      }
    }
  }
  if (scored == 0) throw ValidationError("hit_ratio_at_k: no scorable query");
  return static_cast<double>(hits) / static_cast<double>(scored);
}

double map_metric(const std::vector<RankedList>& ranked, const RelevanceMap& relevance) {
  size_t scored = 0;
  double total = 0.0;
  for (const auto& list : ranked) {
    auto rit = relevance.find(list.query);
    if (rit == relevance.end() || rit->second.empty()) continue;
    ++scored;
    size_t hits = 0;
    double ap = 0.0;
    for (size_t r = 0; r < list.items.size(); ++r) {
      if (rit->second.count(list.items[r].first)) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    total += ap / static_cast<double>(rit->second.size());
  }
  if (scored == 0) throw ValidationError("map_metric: no scorable query");
  return total / static_cast<double>(scored);
}

double ndcg_metric(const std::vector<RankedList>& ranked, const RelevanceMap& relevance,
                   size_t k) {
  size_t scored = 0;
  double total = 0.0;
  for (const auto& list : ranked) {
    auto rit = relevance.find(list.query);
    if (rit == relevance.end() || rit->second.empty()) continue;
    ++scored;
    double dcg = 0.0;
    const size_t limit = std::min(k, list.items.size());
    for (size_t r = 0; r < limit; ++r) {
      if (rit->second.count(list.items[r].first)) {
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    double idcg = 0.0;
    const size_t ideal = std::min(k, rit->second.size());
    for (size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    total += idcg > 0.0 ? dcg / idcg : 0.0;
  }
  if (scored == 0) throw ValidationError("ndcg_metric: no scorable query");
  return total / static_cast<double>(scored);
}

double consistent_at_k(const std::vector<RankedList>& ranked,
                       const std::map<std::string, const EntityRecord*>& catalog, size_t k,
                       bool strict) {
  auto lookup = [&](const std::string& id) -> const EntityRecord& {
    auto it = catalog.find(id);
    if (it == catalog.end()) {
      throw ValidationError("consistent_at_k: missing metadata for '" + id + "'");
    }
    return *it->second;
  };
  size_t queries = 0;
  double total = 0.0;
  for (const auto& list : ranked) {
    const size_t limit = std::min(k, list.items.size());
    if (limit == 0) continue;
    const EntityRecord& q = lookup(list.query);
    double acc = 0.0;
    for (size_t r = 0; r < limit; ++r) {
      const EntityRecord& d = lookup(list.items[r].first);
      int matches = (q.genre == d.genre) + (q.region == d.region) +
                    (q.popularity == d.popularity);
      acc += strict ? (matches == 3 ? 1.0 : 0.0) : matches / 3.0;
    }
    total += acc / static_cast<double>(limit);
    ++queries;
  }
  if (queries == 0) throw ValidationError("consistent_at_k: no query with candidates");
  return total / static_cast<double>(queries);
}

EvalReport evaluate(const EmbeddingMatrix& emb, const DatasetBundle& bundle,
                    const std::set<std::string>& long_tail, const std::vector<size_t>& ks,
                    bool strict_consistent, Split split) {
  if (ks.empty()) throw ValidationError("evaluate: need at least one K");
  const std::vector<std::string> ids = bundle.task_ids_in_split(split);
  if (ids.empty()) throw ValidationError("evaluate: split has no task entities");

  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (!emb.has(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "evaluate: embeddings missing for " + std::to_string(missing.size()) +
                      " entities:";
    for (size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw CoverageError(msg);
  }

  const EmbeddingMatrix view = emb.subset(ids);

  RelevanceMap relevance;
  for (const auto& rel : bundle.relations) {
    if (bundle.split_of(rel.src) != split || bundle.split_of(rel.dst) != split) continue;
    relevance[rel.src].insert(rel.dst);
    relevance[rel.dst].insert(rel.src);
  }

  std::map<std::string, const EntityRecord*> catalog;
  for (const auto& id : ids) catalog.emplace(id, &bundle.entity(id));

  const size_t max_k = ids.size();  // full ranking (MAP needs it)
  std::vector<RankedList> ranked;
  std::vector<RankedList> ranked_tail;
  ranked.reserve(ids.size());
  for (const auto& id : ids) {
    ranked.push_back(topk_retrieve(view, id, max_k));
    if (long_tail.count(id)) ranked_tail.push_back(ranked.back());
  }

  EvalReport report;
  report.task_kind = to_string(bundle.task_kind);
  report.ks = ks;
  report.all.query_count = ids.size();
  report.all.scored_query_count = relevance.size();
  for (size_t k : ks) {
    report.all.hr[k] = hit_ratio_at_k(ranked, relevance, k);
    report.all.ndcg[k] = ndcg_metric(ranked, relevance, k);
    report.all.consistent[k] = consistent_at_k(ranked, catalog, k, strict_consistent);
  }
  report.all.map = map_metric(ranked, relevance);

  report.long_tail.query_count = ranked_tail.size();
  if (!ranked_tail.empty()) {
    for (size_t k : ks) {
      report.long_tail.consistent[k] = consistent_at_k(ranked_tail, catalog, k, strict_consistent);
    }
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["schema_version"] = 1;
  j["task_kind"] = report.task_kind;
  j["ks"] = report.ks;
  json all;
  all["query_count"] = report.all.query_count;
  all["scored_query_count"] = report.all.scored_query_count;
  all["map"] = report.all.map;
  for (const auto& [k, v] : report.all.hr) all["hr"][std::to_string(k)] = v;
  for (const auto& [k, v] : report.all.ndcg) all["ndcg"][std::to_string(k)] = v;
  for (const auto& [k, v] : report.all.consistent) all["consistent"][std::to_string(k)] = v;
  j["segments"]["all"] = all;
  json tail;
  tail["query_count"] = report.long_tail.query_count;
  for (const auto& [k, v] : report.long_tail.consistent) {
    tail["consistent"][std::to_string(k)] = v;
  }
  j["segments"]["long_tail"] = tail;
  return j.dump(2);
}

std::string report_to_table(const EvalReport& report) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-14s %8s\n", "segment", "metric", "value");
  os << buf;
  os << "-------------------------------------\n";
  auto row = [&](const char* seg, const std::string& metric, double value) {
    std::snprintf(buf, sizeof buf, "%-10s %-14s %8.4f\n", seg, metric.c_str(), value);
    os << buf;
  };
  for (const auto& [k, v] : report.all.hr) row("all", "hr@" + std::to_string(k), v);
  row("all", "map", report.all.map);
  for (const auto& [k, v] : report.all.ndcg) row("all", "ndcg@" + std::to_string(k), v);
  for (const auto& [k, v] : report.all.consistent) {
    row("all", "consistent@" + std::to_string(k), v);
  }
  for (const auto& [k, v] : report.long_tail.consistent) {
    row("long_tail", "consistent@" + std::to_string(k), v);
  }
  std::snprintf(buf, sizeof buf, "queries: all=%zu scored=%zu long_tail=%zu\n",
                report.all.query_count, report.all.scored_query_count,
                report.long_tail.query_count);
  os << buf;
  return os.str();
}

}  // namespace ltfr
