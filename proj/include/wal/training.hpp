#pragma once

#include "wal/corpus.hpp"
#include "wal/model.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace wal {

enum class LossKind { bce, triplet };
enum class Phase { freeze, joint };

std::string_view to_string(LossKind kind);
std::string_view to_string(Phase phase);
LossKind parse_loss_kind(std::string_view text);

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int batch_size = 60;
  int n_f = 5;
  int freeze_epochs = 10;
  int joint_epochs = 20;
  double lr_drop_factor = 10.0;
  AttentionKind attention_kind = AttentionKind::dot;
  SamplerKind sampler_kind = SamplerKind::gumbel_hard;
  InputMode input_mode = InputMode::residual;
  int bvf_count = 4;
  double tau = 1.0;
  LossKind loss_kind = LossKind::bce;
  double triplet_margin = 0.2;
  // Off means the gate is forced to z=0 for every pair (no adversarial loss).
  bool discriminator = true;
  int d_emb = 32;
  std::uint64_t seed = 1;

  void validate() const;
  ModelShape shape(int d_in) const;
  int total_epochs() const { return freeze_epochs + joint_epochs; }
};

/// Momentum buffers, one per parameter tensor.
struct OptimizerState {
  ModelParams velocity;
  static OptimizerState zeros_for(const ModelParams& params) { return {zeros_like(params)}; }
};

struct EpochMetrics {
  int epoch = 0;
  Phase phase = Phase::freeze;
  double lr = 0.0;
  double loss_lvc = 0.0;  // mean LVC loss over pairs routed to LVC
  double loss_adv = 0.0;  // mean adversarial loss over pairs routed to ADV
  double z0_fraction = 0.0;
  // Gate-out rate of positive pairs by planted tag (clean, loose, noise);
  // -1 when no positive pair of that tag was seen in the epoch.
  std::array<double, 3> z1_rate_by_tag{-1.0, -1.0, -1.0};
  std::size_t pairs = 0;

  double z1_rate(Tag tag) const { return z1_rate_by_tag[static_cast<std::size_t>(tag)]; }
};

// -- losses ---------------------------------------------------------------

// Cross-entropy on a logit, stable log-sum-exp form. Throws on non-binary y.
double bce_loss(int y, double f);
// d bce_loss / d f = sigmoid(f) - y.
double bce_grad(int y, double f);
// Cross-entropy with the label fixed to 0.
double adversarial_loss(double f_adv);

struct PairLoss {
  double loss = 0.0;
  bool routed_adv = false;  // soft sampler: true when soft_weight > 0.5
};

PairLoss pair_loss(const GateDecision& decision, SamplerKind sampler, int y, double f_lvc);

// Hardest-negative hinge in both directions; sim(i, j) = s_i . v_j.
double triplet_batch_loss(const Mat& sim, double margin);

// -- gradients ------------------------------------------------------------

/// One sentence-video pair after frame sampling, with its pre-drawn gate noise.
struct PairInput {
  std::string id;
  Vec sentence_raw;
  std::vector<Vec> frames_raw;
  int label = 1;
  Tag tag = Tag::clean;
  GateNoise noise;
};

struct PairOutcome {
  GateDecision gate;
  double loss_lvc = 0.0;  // bce on f_lvc, or the triplet term for positives
  double loss_adv = 0.0;
  double loss = 0.0;      // routed loss actually applied
};

struct BatchResult {
  ModelParams grad;
  double loss = 0.0;  // mean of per-pair routed losses
  // Parallel to the inputs that take part in the loss (all pairs for bce,
  // positives only for triplet).
  std::vector<PairOutcome> pairs;
  std::vector<std::size_t> pair_index;
};

/// Exact gradient of the mean batch loss. The gate is straight-through:
/// hard z forward, d soft_weight backward. During Phase::freeze the
/// discriminator tensors get zero gradient and the adversarial loss sends no
/// gradient anywhere, while gating stays active.
BatchResult compute_gradients(const ModelParams& params, std::span<const PairInput> batch, const TrainConfig& config,
                              Phase phase);

// Assembles PairInputs for a sampled batch: frame sampling and gate noise.
std::vector<PairInput> prepare_batch(std::span<const ClipRecord> corpus, const PairBatch& batch, int n_f,
                                     Rng& rng);

// -- optimizer ------------------------------------------------------------

/// velocity = momentum * velocity + (grad + weight_decay * param)
/// param   -= lr * velocity
/// Tensors for which `trainable(name)` is false are left untouched.
void sgd_step(ModelParams& params, const ModelParams& grad, OptimizerState& state, double lr, double momentum,
              double weight_decay, const std::function<bool(std::string_view)>& trainable = {});

// -- training loop --------------------------------------------------------

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  // Called with the parameters at the end of each phase.
  std::function<void(const ModelParams&, Phase)> on_phase_end;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;
};

// Initial parameters for `config`, BVF rows filled from the corpus.
ModelParams initial_params(const TrainConfig& config, std::span<const ClipRecord> corpus);

TrainResult train(const TrainConfig& config, std::span<const ClipRecord> corpus, const TrainHooks& hooks = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

}  // namespace wal
