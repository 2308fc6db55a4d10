#include "wal/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wal {

namespace {

constexpr const char* kCorpusFormat = "wal-corpus";
constexpr int kCorpusVersion = 1;

Vec normalized(const Vec& v) {
  const double n = v.norm();
  return n > 0.0 ? Vec(v / n) : v;
}

Vec gaussian(int d, Rng& rng) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

// Draws `count` distinct concept ids from [0, k) excluding `banned`.
std::vector<int> draw_concepts(int k, int count, const std::vector<int>& banned, Rng& rng) {
  std::vector<int> pool;
  pool.reserve(k);
  for (int c = 0; c < k; ++c)
    if (std::find(banned.begin(), banned.end(), c) == banned.end()) pool.push_back(c);
  for (int i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

// Normalized concept sum plus isotropic perturbation, re-normalized.
Vec compose(const ConceptBank& bank, const std::vector<int>& ids, double sigma, Rng& rng) {
  Vec sum = Vec::Zero(bank.dim());
  for (int id : ids) sum += bank.concepts[id];
  Vec v = normalized(sum) + sigma * gaussian(bank.dim(), rng);
  return normalized(v);
}

Tag draw_tag(const CorpusSpec& spec, Rng& rng) {
  const double u = rng.uniform();
  if (u < spec.frac_clean) return Tag::clean;
  if (u < spec.frac_clean + spec.frac_loose) return Tag::loose;
  return Tag::noise;
}

ClipRecord make_record(const CorpusSpec& spec, const ConceptBank& bank, Tag tag, std::string id, Rng& rng) {
  const int k = spec.concept_count;
  const int m = spec.concepts_per_pair;
  ClipRecord rec;
  rec.id = std::move(id);
  rec.tag = tag;

  const std::vector<int> sentence_ids = draw_concepts(k, m, {}, rng);
  rec.sentence_raw = compose(bank, sentence_ids, spec.feature_noise_sigma, rng);

  const int len = spec.frame_len_min +
                  static_cast<int>(rng.index(static_cast<std::size_t>(spec.frame_len_max - spec.frame_len_min + 1)));
  rec.grounded.assign(len, false);

  std::vector<int> order(len);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  switch (tag) {
    case Tag::clean: {
      const int min_grounded = (len + 1) / 2;
      const int n_grounded = min_grounded + static_cast<int>(rng.index(static_cast<std::size_t>(len - min_grounded + 1)));
      for (int i = 0; i < n_grounded; ++i) rec.grounded[order[i]] = true;
      break;
    }
    case Tag::loose:
      rec.grounded[order[0]] = true;
      break;
    case Tag::noise:
      break;
  }

  rec.frames_raw.reserve(len);
  for (int f = 0; f < len; ++f) {
    std::vector<int> ids;
    if (!rec.grounded[f]) {
      ids = draw_concepts(k, m, sentence_ids, rng);
    } else if (tag == Tag::clean) {
      ids = sentence_ids;
    } else {
      // Loose: exactly one concept shared with the sentence.
      ids.push_back(sentence_ids[rng.index(sentence_ids.size())]);
      const auto rest = draw_concepts(k, m - 1, sentence_ids, rng);
      ids.insert(ids.end(), rest.begin(), rest.end());
    }
    rec.frames_raw.push_back(compose(bank, ids, spec.feature_noise_sigma, rng));
  }
  return rec;
}

std::string location(std::size_t line, std::string_view field) {
  std::ostringstream os;
  os << "line " << line << ", field '" << field << "'";
  return os.str();
}

Vec vec_from_json(const nlohmann::json& j, std::size_t line, std::string_view field) {
  if (!j.is_array()) throw ValidationError(location(line, field) + ": expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(location(line, field) + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    if (!std::isfinite(v[static_cast<Eigen::Index>(i)]))
      throw ValidationError(location(line, field) + ": non-finite entry");
  }
  return v;
}

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::clean: return "clean";
    case Tag::loose: return "loose";
    case Tag::noise: return "noise";
  }
  return "clean";
}

Tag parse_tag(std::string_view text) {
  if (text == "clean") return Tag::clean;
  if (text == "loose") return Tag::loose;
  if (text == "noise") return Tag::noise;
  throw ValidationError("unknown tag '" + std::string(text) + "'");
}

ConceptBank ConceptBank::random(int count, int dim, std::uint64_t seed) {
  if (count < 2) throw ValidationError("concept_count must be at least 2");
  if (dim < 2) throw ValidationError("d must be at least 2");
  ConceptBank bank;
  bank.seed = seed;
  Rng rng(seed);
  bank.concepts.reserve(count);
  for (int i = 0; i < count; ++i) {
    Vec v = gaussian(dim, rng);
    while (v.norm() == 0.0) v = gaussian(dim, rng);
    bank.concepts.push_back(v / v.norm());
  }
  return bank;
}

bool ClipRecord::operator==(const ClipRecord& other) const {
  if (id != other.id || tag != other.tag || grounded != other.grounded) return false;
  if (sentence_raw.size() != other.sentence_raw.size() || sentence_raw != other.sentence_raw) return false;
  if (frames_raw.size() != other.frames_raw.size()) return false;
  for (std::size_t i = 0; i < frames_raw.size(); ++i)
    if (frames_raw[i].size() != other.frames_raw[i].size() || frames_raw[i] != other.frames_raw[i]) return false;
  return true;
}

void CorpusSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("invalid " + field + ": " + why);
  };
  if (frac_clean < 0) fail("frac_clean", "must be nonnegative");
  if (frac_loose < 0) fail("frac_loose", "must be nonnegative");
  if (frac_noise < 0) fail("frac_noise", "must be nonnegative");
  if (std::abs(frac_clean + frac_loose + frac_noise - 1.0) > 1e-12)
    fail("frac_clean/frac_loose/frac_noise", "fractions must sum to 1");
  if (n_train < 0) fail("n_train", "must be nonnegative");
  if (n_test < 1) fail("n_test", "must be at least 1");
  if (d < 2) fail("d", "must be at least 2");
  if (concepts_per_pair < 1) fail("concepts_per_pair", "must be at least 1");
  if (concept_count < 2 || concept_count < 2 * concepts_per_pair)
    fail("concept_count", "must be at least 2 and at least 2 * concepts_per_pair");
  if (!(feature_noise_sigma >= 0)) fail("feature_noise_sigma", "must be nonnegative");
  if (frame_len_min < 1) fail("frame_len_min", "must be at least 1");
  if (frame_len_max < frame_len_min) fail("frame_len_max", "must be >= frame_len_min");
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const ConceptBank bank = ConceptBank::random(spec.concept_count, spec.d, derive_seed(spec.seed, {0}));
  Rng rng(derive_seed(spec.seed, {1}));
  Corpus corpus;
  corpus.train.reserve(spec.n_train);
  for (int i = 0; i < spec.n_train; ++i)
    corpus.train.push_back(make_record(spec, bank, draw_tag(spec, rng), "train-" + std::to_string(i), rng));
  corpus.test.reserve(spec.n_test);
  for (int i = 0; i < spec.n_test; ++i)
    corpus.test.push_back(make_record(spec, bank, Tag::clean, "test-" + std::to_string(i), rng));
  return corpus;
}

void save_corpus(std::span<const ClipRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write corpus file " + path.string());
  const int d = records.empty() ? 0 : static_cast<int>(records.front().sentence_raw.size());
  out << nlohmann::json{{"format", kCorpusFormat}, {"version", kCorpusVersion}, {"d", d}}.dump() << '\n';
  for (const auto& rec : records) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : rec.frames_raw) frames.push_back(vec_to_json(f));
    nlohmann::json grounded = nlohmann::json::array();
    for (bool g : rec.grounded) grounded.push_back(g);
    nlohmann::json line = {{"id", rec.id},
                           {"tag", to_string(rec.tag)},
                           {"sentence", vec_to_json(rec.sentence_raw)},
                           {"frames", std::move(frames)},
                           {"grounded", std::move(grounded)}};
    out << line.dump() << '\n';
  }
  if (!out) throw ValidationError("failed writing corpus file " + path.string());
}

namespace {

struct CorpusHeader {
  int d = 0;
  bool present = false;
};

CorpusHeader parse_header(const std::string& text) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(location(1, "header") + ": " + e.what());
  }
  if (!h.is_object() || h.value("format", "") != kCorpusFormat)
    throw ValidationError(location(1, "format") + ": not a corpus file");
  if (h.value("version", -1) != kCorpusVersion)
    throw ValidationError(location(1, "version") + ": unsupported version");
  if (!h.contains("d") || !h["d"].is_number_integer()) throw ValidationError(location(1, "d") + ": missing");
  return {h["d"].get<int>(), true};
}

}  // namespace

int corpus_dimension(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read corpus file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) return 0;
  return parse_header(line).d;
}

std::vector<ClipRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read corpus file " + path.string());
  std::vector<ClipRecord> records;
  std::string text;
  std::size_t line_no = 0;
  CorpusHeader header;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    if (!header.present) {
      header = parse_header(text);
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(location(line_no, "record") + ": " + e.what());
    }
    for (const char* field : {"id", "tag", "sentence", "frames", "grounded"})
      if (!j.contains(field)) throw ValidationError(location(line_no, field) + ": missing");
    ClipRecord rec;
    if (!j["id"].is_string()) throw ValidationError(location(line_no, "id") + ": expected a string");
    rec.id = j["id"].get<std::string>();
    if (!j["tag"].is_string()) throw ValidationError(location(line_no, "tag") + ": expected a string");
    try {
      rec.tag = parse_tag(j["tag"].get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(location(line_no, "tag") + ": " + e.what());
    }
    rec.sentence_raw = vec_from_json(j["sentence"], line_no, "sentence");
    if (rec.sentence_raw.size() != header.d)
      throw ValidationError(location(line_no, "sentence") + ": dimension mismatch (expected " +
                            std::to_string(header.d) + ", got " + std::to_string(rec.sentence_raw.size()) + ")");
    if (!j["frames"].is_array() || j["frames"].empty())
      throw ValidationError(location(line_no, "frames") + ": expected a non-empty array");
    for (const auto& f : j["frames"]) {
      Vec v = vec_from_json(f, line_no, "frames");
      if (v.size() != header.d)
        throw ValidationError(location(line_no, "frames") + ": dimension mismatch (expected " +
                              std::to_string(header.d) + ", got " + std::to_string(v.size()) + ")");
      rec.frames_raw.push_back(std::move(v));
    }
    if (!j["grounded"].is_array()) throw ValidationError(location(line_no, "grounded") + ": expected an array");
    for (const auto& g : j["grounded"]) {
      if (!g.is_boolean()) throw ValidationError(location(line_no, "grounded") + ": expected booleans");
      rec.grounded.push_back(g.get<bool>());
    }
    if (rec.grounded.size() != rec.frames_raw.size())
      throw ValidationError(location(line_no, "grounded") + ": length differs from frames");
    records.push_back(std::move(rec));
  }
  return records;
}

PairBatch make_batch(std::span<const std::size_t> positive_clips, std::size_t corpus_size, Rng& rng) {
  if (corpus_size < 2) throw ValidationError("corpus needs at least 2 clips to draw negatives");
  PairBatch batch;
  batch.entries.reserve(2 * positive_clips.size());
  for (std::size_t clip : positive_clips) batch.entries.push_back({clip, clip, 1});
  for (std::size_t i = 0; i < positive_clips.size(); ++i) {
    const std::size_t clip = rng.index(corpus_size);
    std::size_t sentence = rng.index(corpus_size - 1);
    if (sentence >= clip) ++sentence;
    batch.entries.push_back({sentence, clip, 0});
  }
  return batch;
}

PairBatch sample_training_batch(std::size_t corpus_size, std::size_t batch_size, Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ValidationError("batch_size must be even and at least 2, got " + std::to_string(batch_size));
  if (corpus_size < 2) throw ValidationError("corpus needs at least 2 clips to draw negatives");
  std::vector<std::size_t> positives(batch_size / 2);
  for (auto& p : positives) p = rng.index(corpus_size);
  return make_batch(positives, corpus_size, rng);
}

std::vector<PairBatch> epoch_batches(std::size_t corpus_size, std::size_t batch_size, Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ValidationError("batch_size must be even and at least 2, got " + std::to_string(batch_size));
  if (corpus_size < 2) throw ValidationError("corpus needs at least 2 clips to draw negatives");
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t half = batch_size / 2;
  while (order.size() % half != 0) order.push_back(rng.index(corpus_size));
  std::vector<PairBatch> batches;
  batches.reserve(order.size() / half);
  for (std::size_t start = 0; start < order.size(); start += half)
    batches.push_back(make_batch(std::span<const std::size_t>(order).subspan(start, half), corpus_size, rng));
  return batches;
}

std::vector<std::size_t> sample_frame_indices(std::size_t frame_count, int n_f, Rng& rng) {
  if (frame_count == 0) throw ValidationError("cannot sample frames from an empty clip");
  if (n_f < 1) throw ValidationError("n_f must be at least 1");
  const auto want = static_cast<std::size_t>(n_f);
  std::vector<std::size_t> picked(frame_count);
  std::iota(picked.begin(), picked.end(), std::size_t{0});
  if (frame_count >= want) {
    for (std::size_t i = 0; i < want; ++i) std::swap(picked[i], picked[i + rng.index(frame_count - i)]);
    picked.resize(want);
  } else {
    while (picked.size() < want) picked.push_back(rng.index(frame_count));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<Vec> sample_frames(const ClipRecord& clip, int n_f, Rng& rng) {
  std::vector<Vec> out;
  for (std::size_t i : sample_frame_indices(clip.frames_raw.size(), n_f, rng)) out.push_back(clip.frames_raw[i]);
  return out;
}

}  // namespace wal
