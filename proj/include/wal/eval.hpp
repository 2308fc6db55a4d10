#pragma once

#include "wal/corpus.hpp"
#include "wal/model.hpp"
#include "wal/training.hpp"

#include <string>
#include <vector>

namespace wal {

struct DirectionScores {
  double map = 0.0;    // x100
  double rec5 = 0.0;   // x100
  double rec10 = 0.0;  // x100
};

struct RetrievalReport {
  DirectionScores video_search;     // sentence queries, video candidates
  DirectionScores sentence_search;  // video queries, sentence candidates
  std::vector<int> video_search_ranks;
  std::vector<int> sentence_search_ranks;
};

/// 1-based rank of `relevant` under descending score; ties go to the lower
/// candidate index.
int relevant_rank(std::span<const double> scores, std::size_t relevant);
// With a single relevant candidate this is 1 / rank.
double average_precision(std::span<const double> scores, std::size_t relevant);
int recall_at_k(std::span<const double> scores, std::size_t relevant, int k);

// score(i, j) = s_i . v(s_i, all frames of clip j).
Mat score_matrix(const ModelParams& params, std::span<const ClipRecord> pairs);
RetrievalReport report_from_scores(const Mat& scores);
RetrievalReport bidirectional_retrieval(const ModelParams& params, std::span<const ClipRecord> test_pairs);

struct GateStats {
  std::vector<int> epochs;
  std::vector<double> z0_percent;
  // Per epoch, gate-out percentage for (clean, loose, noise); -1 if unseen.
  std::vector<std::array<double, 3>> z1_percent_by_tag;
};

GateStats gate_statistics(std::span<const EpochMetrics> history);

struct FrameScore {
  std::size_t frame_index = 0;
  double score = 0.0;  // attention weight divided by the largest weight
};

std::vector<FrameScore> export_attention(const ModelParams& params, const ClipRecord& pair);

std::string report_csv(const RetrievalReport& r);
std::string report_summary(const RetrievalReport& r);

}  // namespace wal
