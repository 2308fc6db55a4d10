#include "wal/eval.hpp"

#include <cstdio>

namespace wal {

int relevant_rank(std::span<const double> scores, std::size_t relevant) {
  if (scores.empty()) throw ValidationError("ranking over an empty candidate list");
  if (relevant >= scores.size()) throw ValidationError("relevant index out of range");
  const double target = scores[relevant];
  int rank = 1;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > target || (scores[c] == target && c < relevant)) ++rank;
  }
  return rank;
}

double average_precision(std::span<const double> scores, std::size_t relevant) {
  return 1.0 / relevant_rank(scores, relevant);
}

int recall_at_k(std::span<const double> scores, std::size_t relevant, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size())
    throw ValidationError("k = " + std::to_string(k) + " out of range for " + std::to_string(scores.size()) +
                          " candidates");
  return relevant_rank(scores, relevant) <= k ? 1 : 0;
}

Mat score_matrix(const ModelParams& params, std::span<const ClipRecord> pairs) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  std::vector<Vec> sentences;
  std::vector<std::vector<Vec>> videos;
  for (const auto& p : pairs) {
    sentences.push_back(embed_sentence(params, p.sentence_raw));
    videos.push_back(embed_frames(params, p.frames_raw));
  }
  Mat scores(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vec& s = sentences[i];
      const Vec v = pool_video(attention_weights(params.attention, s, videos[j]), videos[j]);
      scores(i, j) = s.dot(v);
    }
  return scores;
}

RetrievalReport report_from_scores(const Mat& scores) {
  const auto n = scores.rows();
  if (n < 2 || scores.cols() != n) throw ValidationError("retrieval needs at least 2 test pairs");
  RetrievalReport r;
  const int k10 = static_cast<int>(std::min<Eigen::Index>(10, n));
  const int k5 = static_cast<int>(std::min<Eigen::Index>(5, n));
  std::vector<double> row(n);
  auto accumulate = [&](DirectionScores& d, std::vector<int>& ranks, std::size_t relevant) {
    const int rank = relevant_rank(row, relevant);
    ranks.push_back(rank);
    d.map += 1.0 / rank;
    d.rec5 += rank <= k5 ? 1.0 : 0.0;
    d.rec10 += rank <= k10 ? 1.0 : 0.0;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) row[j] = scores(i, j);
    accumulate(r.video_search, r.video_search_ranks, static_cast<std::size_t>(i));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) row[i] = scores(i, j);
    accumulate(r.sentence_search, r.sentence_search_ranks, static_cast<std::size_t>(j));
  }
  for (auto* d : {&r.video_search, &r.sentence_search}) {
    d->map *= 100.0 / n;
    d->rec5 *= 100.0 / n;
    d->rec10 *= 100.0 / n;
  }
  return r;
}

RetrievalReport bidirectional_retrieval(const ModelParams& params, std::span<const ClipRecord> test_pairs) {
  if (test_pairs.size() < 2) throw ValidationError("retrieval needs at least 2 test pairs");
  return report_from_scores(score_matrix(params, test_pairs));
}

GateStats gate_statistics(std::span<const EpochMetrics> history) {
  if (history.empty()) throw ValidationError("gate statistics need a non-empty history");
  GateStats g;
  for (const auto& m : history) {
    g.epochs.push_back(m.epoch);
    g.z0_percent.push_back(100.0 * m.z0_fraction);
    std::array<double, 3> by_tag{};
    for (std::size_t t = 0; t < 3; ++t) by_tag[t] = m.z1_rate_by_tag[t] < 0 ? -1.0 : 100.0 * m.z1_rate_by_tag[t];
    g.z1_percent_by_tag.push_back(by_tag);
  }
  return g;
}

std::vector<FrameScore> export_attention(const ModelParams& params, const ClipRecord& pair) {
  if (pair.frames_raw.empty()) throw ValidationError("pair '" + pair.id + "' has no frames");
  const Vec s = embed_sentence(params, pair.sentence_raw);
  const Vec alpha = attention_weights(params.attention, s, embed_frames(params, pair.frames_raw));
  const double top = alpha.maxCoeff();
  std::vector<FrameScore> out;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) out.push_back({static_cast<std::size_t>(i), alpha[i] / top});
  return out;
}

std::string report_csv(const RetrievalReport& r) {
  std::string out = "metric,direction,value\n";
  char buf[128];
  auto emit = [&](const char* metric, const char* dir, double v) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f\n", metric, dir, v);
    out += buf;
  };
  for (auto [name, d] : {std::pair{"video_search", &r.video_search}, std::pair{"sentence_search", &r.sentence_search}}) {
    emit("map", name, d->map);
    emit("rec5", name, d->rec5);
    emit("rec10", name, d->rec10);
  }
  return out;
}

std::string report_summary(const RetrievalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "video_search.map=%.2f video_search.rec5=%.2f video_search.rec10=%.2f "
                "sentence_search.map=%.2f sentence_search.rec5=%.2f sentence_search.rec10=%.2f",
                r.video_search.map, r.video_search.rec5, r.video_search.rec10, r.sentence_search.map,
                r.sentence_search.rec5, r.sentence_search.rec10);
  return buf;
}

}  // namespace wal
