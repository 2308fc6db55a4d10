// wal: corpus generation, training, evaluation and ablation sweeps.
//
//   wal gen-corpus     --config run.cfg --out data/
//   wal train          --config run.cfg --corpus data/ --out runs/a/
//   wal eval           --checkpoint runs/a/checkpoint_final.json --test data/test.jsonl --out runs/a/
//   wal ablate         --config run.cfg --corpus data/ --axis bvf_count --values 4,16,64 --out runs/abl/
//   wal attention-dump --checkpoint runs/a/checkpoint_final.json --test data/test.jsonl --out attn.csv
//
// Exit codes: 0 success, 1 validation error, 2 numeric failure.

#include "wal/config.hpp"
#include "wal/corpus.hpp"
#include "wal/eval.hpp"
#include "wal/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace wal;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "flat key = value config file");
  cmd->add_option("--set", o.overrides, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", o.seed, "seed override");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

fs::path train_file(const fs::path& corpus) { return fs::is_directory(corpus) ? corpus / "train.jsonl" : corpus; }

fs::path test_file(const fs::path& corpus) {
  return fs::is_directory(corpus) ? corpus / "test.jsonl" : corpus.parent_path() / "test.jsonl";
}

int cmd_gen_corpus(const CommonOptions& o, const fs::path& out) {
  RunConfig c = resolve_config(o);
  if (o.seed) c.corpus.seed = *o.seed;
  c.corpus.validate();
  ensure_dir(out);
  const Corpus corpus = generate_corpus(c.corpus);
  save_corpus(corpus.train, out / "train.jsonl");
  save_corpus(corpus.test, out / "test.jsonl");
  write_text(out / "manifest.txt", format_manifest(c, {{"train", (out / "train.jsonl").string()},
                                                       {"test", (out / "test.jsonl").string()}}));
  std::cout << "wrote " << corpus.train.size() << " train and " << corpus.test.size() << " test pairs to "
            << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, const fs::path& corpus_path, const fs::path& out) {
  RunConfig c = resolve_config(o);
  if (o.seed) c.train.seed = *o.seed;
  c.train.validate();
  const auto records = load_corpus(train_file(corpus_path));
  if (records.empty()) throw ValidationError("training corpus " + train_file(corpus_path).string() + " is empty");
  ensure_dir(out);
  write_text(out / "manifest.txt",
             format_manifest(c, {{"corpus", train_file(corpus_path).string()},
                                 {"metrics", (out / "metrics.csv").string()},
                                 {"checkpoint", (out / "checkpoint_final.json").string()}}));

  std::ofstream metrics(out / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!metrics) throw ValidationError("cannot write " + (out / "metrics.csv").string());
  metrics << metrics_csv_header() << "\n";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    metrics << metrics_csv_row(m) << "\n";
    metrics.flush();
    std::fprintf(stderr, "epoch %d [%s] lr=%.4g loss_lvc=%.4f loss_adv=%.4f z0=%.1f%%\n", m.epoch,
                 std::string(to_string(m.phase)).c_str(), m.lr, m.loss_lvc, m.loss_adv, 100.0 * m.z0_fraction);
  };
  hooks.on_phase_end = [&](const ModelParams& p, Phase phase) {
    const bool last = phase == Phase::joint || c.train.joint_epochs == 0;
    save_checkpoint(p, out / (last ? "checkpoint_final.json" : "checkpoint_freeze.json"));
    if (last && phase == Phase::freeze) save_checkpoint(p, out / "checkpoint_freeze.json");
  };
  train(c.train, records, hooks);
  std::cout << "trained " << c.train.total_epochs() << " epochs; outputs in " << out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& test, const std::optional<fs::path>& out) {
  if (!fs::exists(checkpoint)) throw ValidationError("checkpoint " + checkpoint.string() + " does not exist");
  const ModelParams params = load_checkpoint(checkpoint);
  const auto pairs = load_corpus(test);
  if (!pairs.empty() && pairs.front().sentence_raw.size() != params.input_dim())
    throw ValidationError("dimension mismatch: checkpoint expects d=" + std::to_string(params.input_dim()) +
                          ", corpus has d=" + std::to_string(pairs.front().sentence_raw.size()));
  const RetrievalReport report = bidirectional_retrieval(params, pairs);
  if (out) {
    ensure_dir(*out);
    write_text(*out / "report.csv", report_csv(report));
  }
  std::cout << report_summary(report) << "\n";
  return 0;
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const CommonOptions& o, const std::optional<fs::path>& corpus_path, const std::string& axis,
               std::string values_text, const fs::path& out) {
  RunConfig base = resolve_config(o);
  if (o.seed) base.train.seed = *o.seed;
  static const std::vector<std::string> axes = {"bvf_count", "sampler_kind",   "input_mode",
                                                "loss_kind", "attention_kind", "discriminator_on_off"};
  if (std::find(axes.begin(), axes.end(), axis) == axes.end())
    throw ValidationError("unknown ablation axis '" + axis + "'");
  if (values_text.empty() && axis == "discriminator_on_off") values_text = "off,on";
  const auto values = split_values(values_text);
  if (values.empty()) throw ValidationError("--values must list at least one value");

  std::vector<ClipRecord> train_set, test_set;
  if (corpus_path) {
    train_set = load_corpus(train_file(*corpus_path));
    test_set = load_corpus(test_file(*corpus_path));
  } else {
    base.corpus.validate();
    Corpus corpus = generate_corpus(base.corpus);
    train_set = std::move(corpus.train);
    test_set = std::move(corpus.test);
  }

  // Validate every member before spending time on training.
  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig c = base;
    set_config_value(c, axis == "discriminator_on_off" ? "discriminator" : axis, v);
    c.train.validate();
    runs.push_back(c);
  }

  ensure_dir(out);
  write_text(out / "manifest.txt", format_manifest(base, {{"axis", axis}, {"values", values_text}}));
  std::string csv = "axis,value,label,seed,video_map,video_rec5,sentence_map,sentence_rec5,final_z0_percent\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const TrainResult r = train(runs[i].train, train_set);
    const RetrievalReport rep = bidirectional_retrieval(r.params, test_set);
    std::string label = axis + "=" + values[i];
    if (axis == "discriminator_on_off") label = runs[i].train.discriminator ? "WAL-att-adv" : "WAL-att";
    char row[512];
    std::snprintf(row, sizeof row, "%s,%s,%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f\n", axis.c_str(), values[i].c_str(),
                  label.c_str(), static_cast<unsigned long long>(runs[i].train.seed), rep.video_search.map,
                  rep.video_search.rec5, rep.sentence_search.map, rep.sentence_search.rec5,
                  100.0 * r.history.back().z0_fraction);
    csv += row;
    std::fprintf(stderr, "%s", row);
  }
  write_text(out / "ablation.csv", csv);
  std::cout << "wrote " << runs.size() << " rows to " << (out / "ablation.csv").string() << "\n";
  return 0;
}

int cmd_attention_dump(const fs::path& checkpoint, const fs::path& test, const fs::path& out) {
  if (!fs::exists(checkpoint)) throw ValidationError("checkpoint " + checkpoint.string() + " does not exist");
  const ModelParams params = load_checkpoint(checkpoint);
  const auto pairs = load_corpus(test);
  if (!pairs.empty() && pairs.front().sentence_raw.size() != params.input_dim())
    throw ValidationError("dimension mismatch between checkpoint and corpus");
  std::string csv = "pair_id,frame_index,normalized_score\n";
  char row[256];
  for (const auto& p : pairs)
    for (const auto& fsc : export_attention(params, p)) {
      std::snprintf(row, sizeof row, "%s,%zu,%.9f\n", p.id.c_str(), fsc.frame_index, fsc.score);
      csv += row;
    }
  write_text(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wal: cross-modal training with adversarial gating of noisy pairs"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, ablate_opts;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "generate train/test corpora with planted noise tags");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string train_corpus, train_out;
  auto* tr = app.add_subcommand("train", "train a model; writes metrics.csv, checkpoints and manifest.txt");
  add_common(tr, train_opts);
  tr->add_option("--corpus", train_corpus, "corpus directory or train .jsonl file")->required();
  tr->add_option("--out", train_out, "run directory")->required();
  std::string loss, attention, sampler, input_mode, disc;
  std::optional<int> bvf;
  tr->add_option("--loss", loss, "bce | triplet");
  tr->add_option("--attention", attention, "uniform | dot | multiplicative | additive");
  tr->add_option("--sampler", sampler, "gumbel_hard | softmax_soft");
  tr->add_option("--input-mode", input_mode, "residual | concat | adv_only");
  tr->add_option("--bvf", bvf, "number of background visual features");
  tr->add_option("--discriminator", disc, "on | off");

  std::string eval_ckpt, eval_test, eval_out;
  auto* ev = app.add_subcommand("eval", "bidirectional retrieval on a test corpus");
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--test", eval_test, "test corpus .jsonl")->required();
  ev->add_option("--out", eval_out, "directory for report.csv");

  std::string abl_corpus, abl_axis, abl_values, abl_out;
  auto* ab = app.add_subcommand("ablate", "train one run per axis value and compare");
  add_common(ab, ablate_opts);
  ab->add_option("--corpus", abl_corpus, "corpus directory (default: generate from config)");
  ab->add_option("--axis", abl_axis, "bvf_count | sampler_kind | input_mode | loss_kind | attention_kind | "
                                     "discriminator_on_off")
      ->required();
  ab->add_option("--values", abl_values, "comma-separated values");
  ab->add_option("--out", abl_out, "output directory")->required();

  std::string att_ckpt, att_test, att_out;
  auto* ad = app.add_subcommand("attention-dump", "per-frame attention, normalized so the maximum is 1");
  ad->add_option("--checkpoint", att_ckpt)->required();
  ad->add_option("--test", att_test)->required();
  ad->add_option("--out", att_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_corpus(gen_opts, gen_out);
    if (*tr) {
      auto push = [&](const char* key, const std::string& v) {
        if (!v.empty()) train_opts.overrides.push_back(std::string(key) + "=" + v);
      };
      push("loss_kind", loss);
      push("attention_kind", attention);
      push("sampler_kind", sampler);
      push("input_mode", input_mode);
      push("discriminator", disc);
      if (bvf) push("bvf_count", std::to_string(*bvf));
      return cmd_train(train_opts, train_corpus, train_out);
    }
    if (*ev) return cmd_eval(eval_ckpt, eval_test, eval_out.empty() ? std::nullopt : std::optional<fs::path>(eval_out));
    if (*ab)
      return cmd_ablate(ablate_opts, abl_corpus.empty() ? std::nullopt : std::optional<fs::path>(abl_corpus),
                        abl_axis, abl_values, abl_out);
    if (*ad) return cmd_attention_dump(att_ckpt, att_test, att_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
