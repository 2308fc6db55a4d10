#include "wal/training.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>

namespace wal {

std::string_view to_string(LossKind kind) { return kind == LossKind::bce ? "bce" : "triplet"; }
std::string_view to_string(Phase phase) { return phase == Phase::freeze ? "freeze" : "joint"; }

LossKind parse_loss_kind(std::string_view text) {
  if (text == "bce") return LossKind::bce;
  if (text == "triplet") return LossKind::triplet;
  throw ValidationError("unknown loss kind '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("invalid " + field + ": " + why);
  };
  if (!(lr > 0)) fail("lr", "must be positive");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay", "must be nonnegative");
  if (batch_size < 2 || batch_size % 2 != 0) fail("batch_size", "must be even and at least 2");
  if (n_f < 1) fail("n_f", "must be at least 1");
  if (freeze_epochs < 0) fail("freeze_epochs", "must be nonnegative");
  if (joint_epochs < 0) fail("joint_epochs", "must be nonnegative");
  if (freeze_epochs + joint_epochs < 1) fail("freeze_epochs/joint_epochs", "need at least one epoch");
  if (!(lr_drop_factor > 0)) fail("lr_drop_factor", "must be positive");
  if (bvf_count < 1) fail("bvf_count", "must be at least 1");
  if (!(tau > 0)) fail("tau", "must be positive");
  if (!(triplet_margin >= 0)) fail("triplet_margin", "must be nonnegative");
  if (d_emb < 1) fail("d_emb", "must be at least 1");
  if (loss_kind == LossKind::triplet && batch_size < 4) fail("batch_size", "triplet loss needs at least 4");
}

ModelShape TrainConfig::shape(int d_in) const {
  ModelShape s;
  s.d_in = d_in;
  s.d_emb = d_emb;
  s.bvf_count = bvf_count;
  s.attention = attention_kind;
  s.input_mode = input_mode;
  return s;
}

double bce_loss(int y, double f) {
  if (y != 0 && y != 1) throw ValidationError("bce label must be 0 or 1, got " + std::to_string(y));
  // -[y log s(f) + (1-y) log(1 - s(f))] = softplus(f) - y f
  const double softplus = std::max(f, 0.0) + std::log1p(std::exp(-std::abs(f)));
  return softplus - y * f;
}

double bce_grad(int y, double f) {
  if (y != 0 && y != 1) throw ValidationError("bce label must be 0 or 1, got " + std::to_string(y));
  return sigmoid(f) - y;
}

double adversarial_loss(double f_adv) { return bce_loss(0, f_adv); }

PairLoss pair_loss(const GateDecision& d, SamplerKind sampler, int y, double f_lvc) {
  PairLoss out;
  if (sampler == SamplerKind::gumbel_hard) {
    out.routed_adv = d.z == 1;
    out.loss = out.routed_adv ? adversarial_loss(d.f_adv) : bce_loss(y, f_lvc);
  } else {
    const double w = d.soft_weight;
    out.routed_adv = w > 0.5;
    out.loss = (1.0 - w) * bce_loss(y, f_lvc) + w * adversarial_loss(d.f_adv);
  }
  return out;
}

double triplet_batch_loss(const Mat& sim, double margin) {
  if (sim.rows() != sim.cols()) throw ValidationError("triplet loss needs a square similarity matrix");
  const auto m = sim.rows();
  if (m < 2) throw ValidationError("triplet loss needs a batch of at least 2");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double hard_v = -std::numeric_limits<double>::infinity();
    double hard_s = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      hard_v = std::max(hard_v, sim(i, j));
      hard_s = std::max(hard_s, sim(j, i));
    }
    total += std::max(0.0, margin - sim(i, i) + hard_v) + std::max(0.0, margin - sim(i, i) + hard_s);
  }
  return total / static_cast<double>(m);
}

std::vector<PairInput> prepare_batch(std::span<const ClipRecord> corpus, const PairBatch& batch, int n_f,
                                     Rng& rng) {
  std::vector<PairInput> out;
  out.reserve(batch.entries.size());
  for (const auto& e : batch.entries) {
    const ClipRecord& clip = corpus[e.clip];
    PairInput in;
    in.id = clip.id + (e.label == 1 ? "/pos" : "/neg:" + corpus[e.sentence].id);
    in.sentence_raw = corpus[e.sentence].sentence_raw;
    in.frames_raw = sample_frames(clip, n_f, rng);
    in.label = e.label;
    in.tag = clip.tag;
    in.noise = draw_gate_noise(rng);
    out.push_back(std::move(in));
  }
  return out;
}

void sgd_step(ModelParams& params, const ModelParams& grad, OptimizerState& state, double lr, double momentum,
              double weight_decay, const std::function<bool(std::string_view)>& trainable) {
  // Shape check first so a mismatch never leaves params half-updated.
  for_each_tensor_pair(params, grad, [](std::string_view, auto, auto) {});
  for_each_tensor_pair(params, state.velocity, [](std::string_view, auto, auto) {});

  std::vector<Eigen::Map<const Vec>> grads;
  for_each_tensor(grad, [&](std::string_view, auto view) { grads.emplace_back(view.data(), view.size()); });
  std::size_t k = 0;
  for_each_tensor_pair(params, state.velocity, [&](std::string_view name, auto param, auto velocity) {
    const auto& g = grads[k++];
    if (trainable && !trainable(name)) return;
    velocity = momentum * velocity + (g + weight_decay * param);
    param -= lr * velocity;
  });
}

namespace {

Vec initial_video_feature(const ModelParams& p, const ClipRecord& clip) {
  const Vec s = embed_sentence(p, clip.sentence_raw);
  const std::vector<Vec> h = embed_frames(p, clip.frames_raw);
  return pool_video(attention_weights(p.attention, s, h), h);
}

}  // namespace

ModelParams initial_params(const TrainConfig& config, std::span<const ClipRecord> corpus) {
  config.validate();
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  const int d_in = static_cast<int>(corpus.front().sentence_raw.size());
  Rng rng(derive_seed(config.seed, {0x1417}));
  ModelParams p = init_params(config.shape(d_in), rng);
  std::vector<Vec> features;
  features.reserve(corpus.size());
  for (const auto& clip : corpus) features.push_back(initial_video_feature(p, clip));
  if (features.size() < static_cast<std::size_t>(config.bvf_count)) {
    // Tiny corpora: reuse features so every group has a member.
    const std::size_t n = features.size();
    for (std::size_t i = 0; features.size() < static_cast<std::size_t>(config.bvf_count); ++i)
      features.push_back(features[i % n]);
  }
  p.disc.bvf = init_bvf(features, config.bvf_count, rng);
  // Centre the gate: the median training positive starts at f_adv = 0, i.e.
  // an even chance of being gated out before the discriminator learns.
  std::vector<double> logits;
  logits.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Vec s = embed_sentence(p, corpus[i].sentence_raw);
    logits.push_back(discriminator_logit(p.disc, s.dot(features[i]), background_similarity(p.disc, s)));
  }
  const auto mid = logits.begin() + static_cast<std::ptrdiff_t>(logits.size() / 2);
  std::nth_element(logits.begin(), mid, logits.end());
  p.disc.bias = -*mid;
  return p;
}

TrainResult train(const TrainConfig& config, std::span<const ClipRecord> corpus, const TrainHooks& hooks) {
  config.validate();
  if (corpus.size() < 2) throw ValidationError("training needs at least 2 clips");
  TrainResult result;
  result.params = initial_params(config, corpus);
  ModelParams& params = result.params;
  OptimizerState state = OptimizerState::zeros_for(params);

  const auto trainable_in_freeze = [](std::string_view name) { return !is_discriminator_tensor(name); };

  for (int epoch = 0; epoch < config.total_epochs(); ++epoch) {
    const Phase phase = epoch < config.freeze_epochs ? Phase::freeze : Phase::joint;
    const double lr = phase == Phase::freeze ? config.lr : config.lr / config.lr_drop_factor;

    Rng epoch_rng(derive_seed(config.seed, {0xe90c, static_cast<std::uint64_t>(epoch)}));
    const auto batches = epoch_batches(corpus.size(), static_cast<std::size_t>(config.batch_size), epoch_rng);

    EpochMetrics m;
    m.epoch = epoch;
    m.phase = phase;
    m.lr = lr;
    double lvc_sum = 0.0, lvc_weight = 0.0, adv_sum = 0.0, adv_weight = 0.0, z0_sum = 0.0;
    std::array<double, 3> out_sum{}, tag_count{};

    for (std::size_t b = 0; b < batches.size(); ++b) {
      Rng batch_rng(derive_seed(config.seed, {0xba7c, static_cast<std::uint64_t>(epoch), b}));
      const auto inputs = prepare_batch(corpus, batches[b], config.n_f, batch_rng);
      const BatchResult r = compute_gradients(params, inputs, config, phase);
      for (std::size_t k = 0; k < r.pairs.size(); ++k) {
        const PairOutcome& po = r.pairs[k];
        const PairInput& in = inputs[r.pair_index[k]];
        double out_w = 0.0;  // mass routed to the adversarial loss
        if (config.discriminator)
          out_w = config.sampler_kind == SamplerKind::gumbel_hard ? po.gate.z : po.gate.soft_weight;
        lvc_sum += (1.0 - out_w) * po.loss_lvc;
        lvc_weight += 1.0 - out_w;
        adv_sum += out_w * po.loss_adv;
        adv_weight += out_w;
        z0_sum += 1.0 - out_w;
        ++m.pairs;
        if (in.label == 1) {
          const auto t = static_cast<std::size_t>(in.tag);
          out_sum[t] += out_w;
          tag_count[t] += 1.0;
        }
      }
      if (phase == Phase::freeze)
        sgd_step(params, r.grad, state, lr, config.momentum, config.weight_decay, trainable_in_freeze);
      else
        sgd_step(params, r.grad, state, lr, config.momentum, config.weight_decay);
    }

    m.loss_lvc = lvc_weight > 0 ? lvc_sum / lvc_weight : 0.0;
    m.loss_adv = adv_weight > 0 ? adv_sum / adv_weight : 0.0;
    m.z0_fraction = m.pairs > 0 ? z0_sum / static_cast<double>(m.pairs) : 0.0;
    for (std::size_t t = 0; t < 3; ++t) m.z1_rate_by_tag[t] = tag_count[t] > 0 ? out_sum[t] / tag_count[t] : -1.0;
    result.history.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);

    const bool phase_ends = epoch + 1 == config.total_epochs() || epoch + 1 == config.freeze_epochs;
    if (phase_ends && hooks.on_phase_end) hooks.on_phase_end(params, phase);
  }
  return result;
}

std::string metrics_csv_header() {
  return "epoch,phase,lr,loss_lvc,loss_adv,z0_fraction,z1_rate_clean,z1_rate_loose,z1_rate_noise";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", m.epoch,
                std::string(to_string(m.phase)).c_str(), m.lr, m.loss_lvc, m.loss_adv, m.z0_fraction,
                m.z1_rate_by_tag[0], m.z1_rate_by_tag[1], m.z1_rate_by_tag[2]);
  return buf;
}

}  // namespace wal
