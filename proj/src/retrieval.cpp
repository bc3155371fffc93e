#include "neurosem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

namespace neurosem {

std::vector<RankedCaption> topk_captions(const RowVec<double>& query, const Mat<double>& candidates,
                                         const std::vector<std::string>& ids, int k) {
  if (candidates.rows() == 0) throw ContractError("topk_captions: empty candidate set");
  if (k < 1) throw ContractError("topk_captions: k must be >= 1, got " + std::to_string(k));
  if (static_cast<Eigen::Index>(ids.size()) != candidates.rows()) {
    throw DimensionError("topk_captions: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(candidates.rows()) + " candidates");
  }
  if (query.size() != candidates.cols()) {
    throw DimensionError("topk_captions: query dimension " + std::to_string(query.size()) + ", candidates have " +
                         std::to_string(candidates.cols()));
  }
  const double qn = query.norm();
  std::vector<double> scores(static_cast<std::size_t>(candidates.rows()), 0.0);
  for (Eigen::Index r = 0; r < candidates.rows(); ++r) {
    const double cn = candidates.row(r).norm();
    if (qn > 0.0 && cn > 0.0) scores[r] = std::clamp(candidates.row(r).dot(query) / (qn * cn), -1.0, 1.0);
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return ids[a] < ids[b];
                    });
  std::vector<RankedCaption> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({order[i], ids[order[i]], scores[order[i]]});
  return out;
}

std::vector<RankedCaption> topk_captions(const RowVec<double>& query, const CaptionBank& bank,
                                         std::string_view category, int k) {
  const auto& idx = bank.category_indices(category);
  std::vector<std::string> ids;
  ids.reserve(idx.size());
  for (auto i : idx) ids.push_back(bank.entries()[i].id);
  auto ranked = topk_captions(query, bank.category_embeddings(category), ids, k);
  for (auto& r : ranked) r.entry = idx[r.entry];
  return ranked;
}

RetrievalResult retrieve(const HeadEmbeddings<float>& embeddings, Eigen::Index row, const CaptionBank& bank, int k) {
  RetrievalResult out;
  for (std::size_t h = 0; h < embeddings.size(); ++h) {
    RowVec<double> q = embeddings.embeddings[h].row(row).cast<double>();
    out.heads.push_back({embeddings.heads[h], topk_captions(q, bank, embeddings.heads[h], k)});
  }
  return out;
}

std::vector<RetrievalResult> retrieve_all(const HeadEmbeddings<float>& embeddings, const CaptionBank& bank, int k) {
  std::vector<RetrievalResult> out;
  if (embeddings.embeddings.empty()) return out;
  for (Eigen::Index r = 0; r < embeddings.embeddings.front().rows(); ++r) out.push_back(retrieve(embeddings, r, bank, k));
  return out;
}

PromptBundle assemble_prompt(const RetrievalResult& result, const CaptionBank& bank, const PromptPolicy& policy,
                             std::size_t epoch_index) {
  const auto& tax = bank.taxonomy();
  std::vector<const HeadRetrieval*> heads;
  for (const auto& h : result.heads) {
    if (!h.captions.empty()) heads.push_back(&h);
  }
  if (policy.kind == PromptPolicy::Kind::TopHeads) {
    if (policy.top_heads < 1) throw ContractError("top-heads prompt policy needs at least one head");
    std::stable_sort(heads.begin(), heads.end(), [&](const HeadRetrieval* a, const HeadRetrieval* b) {
      if (a->captions[0].score != b->captions[0].score) return a->captions[0].score > b->captions[0].score;
      return tax.index_of(a->head) < tax.index_of(b->head);
    });
    if (heads.size() > static_cast<std::size_t>(policy.top_heads)) heads.resize(static_cast<std::size_t>(policy.top_heads));
  }
  std::stable_sort(heads.begin(), heads.end(), [&](const HeadRetrieval* a, const HeadRetrieval* b) {
    const auto la = tax.level_of(a->head), lb = tax.level_of(b->head);
    if (la != lb) return la < lb;
    return tax.index_of(a->head) < tax.index_of(b->head);
  });

  PromptBundle bundle;
  bundle.epoch_index = epoch_index;
  std::set<std::string> seen;
  for (const auto* h : heads) {
    const auto& entry = bank.entry(h->captions[0].id);
    bundle.sources.push_back({h->head, entry.id});
    if (!seen.insert(entry.text).second) continue;
    if (!bundle.prompt.empty()) bundle.prompt += ", ";
    bundle.prompt += entry.text;
  }
  return bundle;
}

int ensemble_classify(const RetrievalResult& result, const CaptionBank& bank) {
  std::map<int, std::vector<double>> votes;
  for (const auto& h : result.heads) {
    if (h.captions.empty()) continue;
    votes[bank.class_of(h.captions[0].id)].push_back(h.captions[0].score);
  }
  if (votes.empty()) throw ContractError("ensemble_classify: no head retrieved a caption");
  int best = -1;
  std::size_t best_count = 0;
  double best_sum = 0.0;
  for (auto& [cls, scores] : votes) {
    // Summing in sorted order makes the total independent of head order.
    std::sort(scores.begin(), scores.end());
    const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
    if (best < 0 || scores.size() > best_count || (scores.size() == best_count && total > best_sum)) {
      best = cls;
      best_count = scores.size();
      best_sum = total;
    }
  }
  return best;
}

DominanceReport head_dominance(const std::vector<RetrievalResult>& results, const Taxonomy& taxonomy) {
  if (results.empty()) throw ContractError("head_dominance needs at least one epoch");
  DominanceReport report;
  report.heads = taxonomy.names();
  report.counts.assign(report.heads.size(), 0);
  for (const auto& r : results) {
    std::size_t best = report.heads.size();
    double best_score = 0.0;
    for (const auto& h : r.heads) {
      if (h.captions.empty()) continue;
      const auto idx = taxonomy.index_of(h.head);
      const double s = h.captions[0].score;
      if (best == report.heads.size() || s > best_score || (s == best_score && idx < best)) {
        best = idx;
        best_score = s;
      }
    }
    if (best == report.heads.size()) throw ContractError("head_dominance: epoch without any retrieval");
    ++report.counts[best];
  }
  for (auto c : report.counts) report.fractions.push_back(static_cast<double>(c) / static_cast<double>(results.size()));
  return report;
}

void write_dominance_csv(const std::filesystem::path& path, const DominanceReport& report) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "head,count,fraction\n";
  for (std::size_t i = 0; i < report.heads.size(); ++i) {
    out << report.heads[i] << ',' << report.counts[i] << ',' << nlohmann::json(report.fractions[i]).dump() << '\n';
  }
}

void write_retrieval_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  for (const auto& row : rows) {
    nlohmann::ordered_json j;
    j["epoch"] = row.epoch;
    j["true_class"] = row.true_class;
    j["predicted_class"] = row.predicted_class;
    nlohmann::ordered_json per_head = nlohmann::ordered_json::object();
    for (const auto& h : row.result.heads) {
      auto list = nlohmann::ordered_json::array();
      for (const auto& c : h.captions) list.push_back({{"id", c.id}, {"score", c.score}});
      per_head[h.head] = list;
    }
    j["per_head"] = per_head;
    j["prompt"] = row.prompt;
    out << j.dump() << '\n';
  }
}

std::vector<ManifestRow> read_retrieval_manifest(const std::filesystem::path& path, const CaptionBank& bank) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::ordered_json::parse(line);
      ManifestRow row;
      row.epoch = j.at("epoch").get<std::size_t>();
      row.true_class = j.at("true_class").get<int>();
      row.predicted_class = j.at("predicted_class").get<int>();
      row.prompt = j.at("prompt").get<std::string>();
      for (const auto& [head, list] : j.at("per_head").items()) {
        HeadRetrieval h{head, {}};
        for (const auto& c : list) {
          const auto id = c.at("id").get<std::string>();
          const auto& entries = bank.entries();
          const auto& e = bank.entry(id);
          h.captions.push_back({static_cast<std::size_t>(&e - entries.data()), id, c.at("score").get<double>()});
        }
        row.result.heads.push_back(std::move(h));
      }
      rows.push_back(std::move(row));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("retrieval manifest line " + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace neurosem
