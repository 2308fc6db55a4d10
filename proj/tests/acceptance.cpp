// Acceptance run: one PASS/FAIL line per criterion, followed by the numbers
// behind it. Exit status is non-zero if any criterion fails.

#include "oracle.hpp"
#include "support.hpp"

#include "wal/config.hpp"
#include "wal/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

using namespace wal;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double mean_map(const RetrievalReport& r) { return 0.5 * (r.video_search.map + r.sentence_search.map); }

// ---------------------------------------------------------------------------

Verdict random_baseline() {
  const int seeds = 20;
  std::vector<double> video, sentence, rec5;
  for (int seed = 1; seed <= seeds; ++seed) {
    CorpusSpec spec;
    spec.n_train = 0;
    spec.n_test = 100;
    spec.seed = static_cast<std::uint64_t>(seed);
    const Corpus c = generate_corpus(spec);
    TrainConfig t;
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), {0x4a4d}));
    const RetrievalReport r = bidirectional_retrieval(init_params(t.shape(spec.d), rng), c.test);
    video.push_back(r.video_search.map);
    sentence.push_back(r.sentence_search.map);
    rec5.push_back(0.5 * (r.video_search.rec5 + r.sentence_search.rec5));
  }
  Rng rng(12345);
  const int trials = 100000;
  double ap = 0.0;
  std::vector<double> scores(100);
  for (int t = 0; t < trials; ++t) {
    for (auto& s : scores) s = rng.uniform();
    ap += average_precision(scores, 0);
  }
  double harmonic = 0.0;
  for (int r = 1; r <= 100; ++r) harmonic += 1.0 / r;
  const double mc = ap / trials, expect = harmonic / 100.0;

  const double mv = mean_of(video), ms = mean_of(sentence), mr = mean_of(rec5);
  Verdict v;
  v.pass = mv >= 3.5 && mv <= 7.5 && ms >= 3.5 && ms <= 7.5 && mr >= 2 && mr <= 9 && std::abs(mc - expect) <= 0.002;
  v.detail = fmt("%d seeds: video mAP %.2f, sentence mAP %.2f, mean Rec@5 %.2f; Monte-Carlo AP %.5f vs H100/100 %.5f",
                 seeds, mv, ms, mr, mc, expect);
  return v;
}

Verdict gradient_oracle() {
  int configs = 0, failed = 0;
  std::size_t coords = 0;
  double worst = 0.0;
  std::string worst_case;
  std::uint64_t seed = 9000;
  for (auto attention : {AttentionKind::dot, AttentionKind::multiplicative, AttentionKind::additive})
    for (auto mode : {InputMode::residual, InputMode::concat, InputMode::adv_only})
      for (auto loss : {LossKind::bce, LossKind::triplet})
        for (auto sampler : {SamplerKind::gumbel_hard, SamplerKind::softmax_soft})
          for (auto phase : {Phase::freeze, Phase::joint}) {
            const auto c = oracle::random_case(seed++, attention, mode, loss, sampler, phase);
            const oracle::GradientCheck r = oracle::check_gradient(c);
            ++configs;
            coords += r.coordinates;
            if (r.failures > 0) ++failed;
            if (r.worst_excess > worst) {
              worst = r.worst_excess;
              worst_case = std::string(to_string(attention)) + "/" + std::string(to_string(mode)) + "/" +
                           std::string(to_string(loss)) + "/" + std::string(to_string(sampler)) + "/" +
                           std::string(to_string(phase)) + " " + r.worst_tensor;
            }
          }
  Verdict v;
  v.pass = failed == 0 && configs >= 50;
  v.detail = fmt("%d configurations, %zu coordinates, %d failing; worst error %.3g of tolerance (%s)", configs, coords,
                 failed, worst, worst_case.c_str());
  return v;
}

Verdict gate_distribution() {
  Rng rng(2718);
  const int n = 100000;
  bool pass = true;
  std::string detail;
  for (double tau : {0.5, 1.0})
    for (double f : {-2.0, 0.0, 1.0}) {
      int ones = 0;
      for (int i = 0; i < n; ++i) ones += sample_gate(f, tau, SamplerKind::gumbel_hard, rng).z;
      const double p = 1.0 / (1.0 + std::exp(-f));
      const double se = std::sqrt(p * (1 - p) / n);
      const double z = (ones / double(n) - p) / se;
      pass = pass && std::abs(z) <= 3.0;
      detail += fmt("%sf=%g tau=%g: %.4f vs %.4f (%+.2f se)", detail.empty() ? "" : "; ", f, tau, ones / double(n), p, z);
    }
  return {pass, detail};
}

// ---------------------------------------------------------------------------

struct Run {
  RetrievalReport report;
  std::vector<EpochMetrics> history;
  ModelParams params;
};

struct Experiments {
  Corpus corpus;
  std::map<std::string, std::vector<Run>> runs;  // variant -> one run per seed
  static constexpr int kSeeds = 5;

  Experiments() : corpus(generate_corpus(CorpusSpec{})) {}

  const std::vector<Run>& get(const std::string& variant) {
    auto it = runs.find(variant);
    if (it != runs.end()) return it->second;
    std::vector<Run> out;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      RunConfig c;
      c.train.seed = static_cast<std::uint64_t>(seed);
      if (!variant.empty()) {
        std::stringstream ss(variant);
        std::string kv;
        while (std::getline(ss, kv, ' ')) {
          const auto eq = kv.find('=');
          set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
      }
      TrainResult r = train(c.train, corpus.train);
      out.push_back({bidirectional_retrieval(r.params, corpus.test), std::move(r.history), std::move(r.params)});
    }
    return runs.emplace(variant, std::move(out)).first->second;
  }

  std::vector<double> maps(const std::string& variant) {
    std::vector<double> m;
    for (const auto& r : get(variant)) m.push_back(mean_map(r.report));
    return m;
  }
};

Verdict curriculum_trend(Experiments& ex) {
  const Run& run = ex.get("").front();  // default config, seed 1
  const TrainConfig defaults;
  const GateStats g = gate_statistics(run.history);
  const auto first_joint = static_cast<std::size_t>(defaults.freeze_epochs);
  std::vector<double> avg;
  for (std::size_t e = 2; e < g.z0_percent.size(); ++e)
    avg.push_back((g.z0_percent[e] + g.z0_percent[e - 1] + g.z0_percent[e - 2]) / 3.0);
  double worst_step = 0.0, worst_from_peak = 0.0, peak = avg.front();
  for (std::size_t i = 1; i < avg.size(); ++i) {
    worst_step = std::max(worst_step, avg[i - 1] - avg[i]);
    peak = std::max(peak, avg[i]);
    worst_from_peak = std::max(worst_from_peak, peak - avg[i]);
  }
  const double first = g.z0_percent[first_joint], last = g.z0_percent.back();
  std::string series;
  for (double z : g.z0_percent) series += fmt("%s%.1f", series.empty() ? "" : " ", z);
  Verdict v;
  v.pass = last > first && worst_from_peak <= 2.0;
  v.detail = fmt("z0%% first joint epoch %.2f -> final %.2f; largest moving-average drop %.2f pp (%.2f pp from peak); "
                 "series [%s]",
                 first, last, worst_step, worst_from_peak, series.c_str());
  return v;
}

Verdict noise_separation(Experiments& ex) {
  std::vector<double> gap;
  std::string per_seed;
  for (const auto& r : ex.get("")) {
    const auto& m = r.history.back();
    gap.push_back(100.0 * (m.z1_rate(Tag::noise) - m.z1_rate(Tag::clean)));
    per_seed += fmt("%s%.1f/%.1f", per_seed.empty() ? "" : " ", 100.0 * m.z1_rate(Tag::clean),
                    100.0 * m.z1_rate(Tag::noise));
  }
  Verdict v;
  v.pass = mean_of(gap) >= 10.0;
  v.detail = fmt("noise minus clean gate-out %.2f pp over %d seeds (clean/noise %%: %s)", mean_of(gap),
                 Experiments::kSeeds, per_seed.c_str());
  return v;
}

Verdict ordering(Experiments& ex) {
  const auto adv = ex.maps("");
  const auto att = ex.maps("discriminator=off");
  const auto wal = ex.maps("discriminator=off attention_kind=uniform");
  int adv_wins = 0, att_wins = 0;
  for (int s = 0; s < Experiments::kSeeds; ++s) {
    adv_wins += adv[s] > att[s];
    att_wins += att[s] > wal[s];
  }
  // One-sided sign test: all 5 of 5 gives p = 1/32 < 0.05.
  Verdict v;
  v.pass = adv_wins == Experiments::kSeeds && att_wins == Experiments::kSeeds;
  v.detail = fmt("mean mAP WAL %.2f < WAL-att %.2f < WAL-att-adv %.2f; per-seed wins att>WAL %d/5, adv>att %d/5",
                 mean_of(wal), mean_of(att), mean_of(adv), att_wins, adv_wins);
  return v;
}

Verdict ablation_bands(Experiments& ex) {
  const double b4 = mean_of(ex.maps("")), b16 = mean_of(ex.maps("bvf_count=16")),
               b64 = mean_of(ex.maps("bvf_count=64"));
  const double spread = std::max({b4, b16, b64}) - std::min({b4, b16, b64});
  const double off = mean_of(ex.maps("discriminator=off"));
  const double soft = mean_of(ex.maps("sampler_kind=softmax_soft"));
  const double triplet = mean_of(ex.maps("loss_kind=triplet"));
  const bool bvf_ok = spread <= 2.0;
  const bool soft_ok = off < soft && soft < b4;
  const bool triplet_ok = std::abs(triplet - b4) <= 2.0;
  Verdict v;
  v.pass = bvf_ok && soft_ok && triplet_ok;
  v.detail = fmt("BVF 4/16/64 mAP %.2f/%.2f/%.2f (spread %.2f) [%s]; gate-off %.2f < soft %.2f < gumbel %.2f [%s]; "
                 "triplet %.2f vs bce %.2f (diff %+.2f) [%s]",
                 b4, b16, b64, spread, bvf_ok ? "ok" : "out of band", off, soft, b4, soft_ok ? "ok" : "out of band",
                 triplet, b4, triplet - b4, triplet_ok ? "ok" : "out of band");
  return v;
}

Verdict determinism(Experiments& ex) {
  const Run& first = ex.get("").front();
  std::string csv_a = metrics_csv_header() + "\n", csv_b = csv_a;
  for (const auto& m : first.history) csv_a += metrics_csv_row(m) + "\n";
  TrainConfig t;  // default config, seed 1
  for (const auto& m : train(t, ex.corpus.train).history) csv_b += metrics_csv_row(m) + "\n";
  const bool metrics_ok = csv_a == csv_b;

  TempDir dir("acceptance");
  save_corpus(ex.corpus.train, dir / "train.jsonl");
  const auto loaded = load_corpus(dir / "train.jsonl");
  save_corpus(loaded, dir / "again.jsonl");
  const bool corpus_ok = loaded == ex.corpus.train && read_file(dir / "train.jsonl") == read_file(dir / "again.jsonl");

  save_checkpoint(first.params, dir / "ckpt.json");
  const ModelParams back = load_checkpoint(dir / "ckpt.json");
  bool ckpt_ok = true;
  for_each_tensor_pair(first.params, back, [&](std::string_view, auto a, auto b) {
    ckpt_ok = ckpt_ok && std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
  });

  Rng rng(31337);
  double worst = 0.0;
  const int cases = 10000;
  const AttentionKind kinds[] = {AttentionKind::dot, AttentionKind::multiplicative, AttentionKind::additive};
  for (int c = 0; c < cases; ++c) {
    ModelShape shape;
    shape.d_in = 2 + static_cast<int>(rng.index(6));
    shape.d_emb = 2 + static_cast<int>(rng.index(6));
    shape.attention = kinds[c % 3];
    ModelParams p = init_params(shape, rng);
    if (shape.attention == AttentionKind::multiplicative)
      for (Eigen::Index i = 0; i < p.attention.bilinear.size(); ++i) p.attention.bilinear(i) = 3.0 * rng.normal();
    auto rand_vec = [&](int d) {
      Vec x(d);
      for (int i = 0; i < d; ++i) x[i] = 2.0 * rng.normal();
      return x;
    };
    std::vector<Vec> frames;
    const int n = 1 + static_cast<int>(rng.index(12));
    for (int i = 0; i < n; ++i) frames.push_back(rand_vec(shape.d_in));
    const Vec s = embed_sentence(p, rand_vec(shape.d_in));
    const Vec alpha = attention_weights(p.attention, s, embed_frames(p, frames));
    worst = std::max(worst, std::abs(alpha.sum() - 1.0));
  }
  const bool attn_ok = worst <= 1e-12;

  Verdict v;
  v.pass = metrics_ok && corpus_ok && ckpt_ok && attn_ok;
  v.detail = fmt("metrics CSV rerun identical: %s; corpus round-trip: %s; checkpoint round-trip: %s; "
                 "%d attention cases, worst |sum-1| = %.2g",
                 metrics_ok ? "yes" : "no", corpus_ok ? "yes" : "no", ckpt_ok ? "yes" : "no", cases, worst);
  return v;
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  Experiments ex;
  struct Entry {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Entry> criteria = {
      {1, "random baseline", random_baseline},
      {2, "gradient oracle", gradient_oracle},
      {3, "gate distribution", gate_distribution},
      {4, "curriculum trend", [&] { return curriculum_trend(ex); }},
      {5, "noise separation", [&] { return noise_separation(ex); }},
      {6, "ordering", [&] { return ordering(ex); }},
      {7, "ablation bands", [&] { return ablation_bands(ex); }},
      {8, "determinism and round-trips", [&] { return determinism(ex); }},
  };
  int failures = 0;
  std::vector<std::string> details;
  for (const auto& c : criteria) {
    const auto t0 = clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    std::printf("CRITERION %d %s: %s\n", c.id, v.pass ? "PASS" : "FAIL", c.name);
    std::fflush(stdout);
    details.push_back(fmt("  [%d] (%.1fs) ", c.id, secs) + v.detail);
    failures += v.pass ? 0 : 1;
  }
  std::printf("\n");
  for (const auto& d : details) std::printf("%s\n", d.c_str());
  std::printf("\n%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
