#pragma once

#include "wal/rng.hpp"
#include "wal/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wal {

// Planted correspondence label of a sentence-video pair.
enum class Tag { clean, loose, noise };

std::string_view to_string(Tag tag);
Tag parse_tag(std::string_view text);

/// Fixed random unit vectors standing in for the frozen feature extractors.
/// Every sentence and frame feature is built from sums of these concepts.
struct ConceptBank {
  std::vector<Vec> concepts;
  std::uint64_t seed = 0;

  static ConceptBank random(int count, int dim, std::uint64_t seed);
  int dim() const { return concepts.empty() ? 0 : static_cast<int>(concepts.front().size()); }
};

/// One sentence-video pair. The sentence at index i of a corpus is the
/// paired sentence of the clip at index i.
struct ClipRecord {
  std::string id;
  Vec sentence_raw;
  std::vector<Vec> frames_raw;
  Tag tag = Tag::clean;
  std::vector<bool> grounded;

  bool operator==(const ClipRecord& other) const;
};

struct CorpusSpec {
  int n_train = 2000;
  int n_test = 100;
  int d = 32;
  int concept_count = 50;
  double frac_clean = 0.5;
  double frac_loose = 0.3;
  double frac_noise = 0.2;
  int concepts_per_pair = 3;
  double feature_noise_sigma = 0.05;
  int frame_len_min = 4;
  int frame_len_max = 10;
  std::uint64_t seed = 1;

  // Throws ValidationError naming the offending field.
  void validate() const;
};

struct Corpus {
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> test;
};

// Deterministic in spec.seed. Test records are always tagged clean.
Corpus generate_corpus(const CorpusSpec& spec);

// Line-delimited JSON: a header line {"format","version","d"} followed by one
// record per line. Doubles are written with shortest round-trip digits.
void save_corpus(std::span<const ClipRecord> records, const std::filesystem::path& path);
std::vector<ClipRecord> load_corpus(const std::filesystem::path& path);
// Feature dimension recorded in a corpus file header (0 for an empty corpus).
int corpus_dimension(const std::filesystem::path& path);

struct PairEntry {
  std::size_t sentence = 0;
  std::size_t clip = 0;
  int label = 0;

  bool operator==(const PairEntry&) const = default;
};

// Half positives (clip with its own sentence), half negatives (clip with a
// uniformly drawn other sentence).
struct PairBatch {
  std::vector<PairEntry> entries;
};

PairBatch sample_training_batch(std::size_t corpus_size, std::size_t batch_size, Rng& rng);

// Builds a batch whose positives are exactly the given clips; one negative per
// positive, each on a uniformly drawn clip.
PairBatch make_batch(std::span<const std::size_t> positive_clips, std::size_t corpus_size, Rng& rng);

/// Splits one epoch into balanced batches such that every clip is used as a
/// positive at least once. The last batch is topped up with random clips.
std::vector<PairBatch> epoch_batches(std::size_t corpus_size, std::size_t batch_size, Rng& rng);

// Indices into a clip's frames: without replacement when the clip is long
// enough, otherwise every frame once plus uniform resampling for the shortfall.
// Returned in temporal order.
std::vector<std::size_t> sample_frame_indices(std::size_t frame_count, int n_f, Rng& rng);
std::vector<Vec> sample_frames(const ClipRecord& clip, int n_f, Rng& rng);

}  // namespace wal
