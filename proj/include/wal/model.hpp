#pragma once

#include "wal/rng.hpp"
#include "wal/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <string_view>
#include <vector>

namespace wal {

// Initial slopes of the two affine classifiers (see init_params).
inline constexpr double kLvcSlope = 10.0;
inline constexpr double kDiscSlope = 5.0;

// `uniform` is mean pooling over frames (no attention module).
enum class AttentionKind { uniform, dot, multiplicative, additive };
// Input to the discriminator classifier.
enum class InputMode { residual, concat, adv_only };
enum class SamplerKind { gumbel_hard, softmax_soft };

std::string_view to_string(AttentionKind kind);
std::string_view to_string(InputMode mode);
std::string_view to_string(SamplerKind kind);
AttentionKind parse_attention_kind(std::string_view text);
InputMode parse_input_mode(std::string_view text);
SamplerKind parse_sampler_kind(std::string_view text);

/// Embedding module: out = normalize(relu(weight * x + bias)).
/// weight is d_emb x d_in.
struct ChannelParams {
  Mat weight;
  Vec bias;
};

/// Only the tensors of the active kind are allocated:
///   dot:            e_i = s . h_i
///   multiplicative: e_i = s^T bilinear h_i             (bilinear: d_emb x d_emb)
///   additive:       e_i = score . tanh(proj_sentence^T s + proj_frame^T h_i)
///                   (proj_*: d_emb x d_att, score: d_att)
struct AttentionParams {
  AttentionKind kind = AttentionKind::dot;
  Mat bilinear;
  Mat proj_sentence;
  Mat proj_frame;
  Vec score;
};

/// Background visual features (one per row) plus the affine gate classifier.
/// coef has one entry for residual/adv_only and two for concat
/// (coef[0] multiplies p_adv, coef[1] multiplies p_lvc).
struct DiscriminatorParams {
  InputMode input_mode = InputMode::residual;
  Mat bvf;
  Vec coef;
  double bias = 0.0;
};

struct ModelParams {
  ChannelParams language;
  ChannelParams vision;
  AttentionParams attention;
  DiscriminatorParams disc;
  double lvc_scale = 1.0;
  double lvc_bias = 0.0;

  int input_dim() const { return static_cast<int>(language.weight.cols()); }
  int embed_dim() const { return static_cast<int>(language.weight.rows()); }
};

struct ModelShape {
  int d_in = 32;
  int d_emb = 32;
  int d_att = 0;  // 0 means d_emb
  int bvf_count = 4;
  AttentionKind attention = AttentionKind::dot;
  InputMode input_mode = InputMode::residual;
};

// Random initialization. BVF rows start at zero; fill them with init_bvf.
ModelParams init_params(const ModelShape& shape, Rng& rng);

// A zero-valued tensor set with the same shapes as `like`, used for gradients.
ModelParams zeros_like(const ModelParams& like);

/// Calls fn(name, flat_view) for every trainable tensor, scalars included,
/// in a fixed order. Works on const and non-const params.
template <class P, class Fn>
void for_each_tensor(P& params, Fn&& fn);

/// Same as above over two identically shaped parameter sets.
template <class P, class Q, class Fn>
void for_each_tensor_pair(P& a, Q& b, Fn&& fn);

// True for tensors owned by the discriminator channel (bvf, coef, bias).
bool is_discriminator_tensor(std::string_view name);

struct Embedding {
  Vec pre;   // affine output before relu
  Vec out;   // normalized (or zero) embedding
  double norm = 0.0;  // norm of relu(pre)
};

Embedding embed(const ChannelParams& channel, const Vec& x);
Vec embed_sentence(const ModelParams& params, const Vec& sentence_raw);
std::vector<Vec> embed_frames(const ModelParams& params, std::span<const Vec> frames_raw);

Vec softmax(const Vec& scores);
Vec attention_scores(const AttentionParams& attn, const Vec& s, std::span<const Vec> frames);
Vec attention_weights(const AttentionParams& attn, const Vec& s, std::span<const Vec> frames);
Vec pool_video(const Vec& alpha, std::span<const Vec> frames);

/// Randomly partitions the L2-normalized features into `count` groups and
/// returns the normalized group means, one per row.
Mat init_bvf(std::span<const Vec> video_features, int count, Rng& rng);

// max_b s . bvf_b; `argmax` receives the winning row when non-null.
double background_similarity(const DiscriminatorParams& disc, const Vec& s, Eigen::Index* argmax = nullptr);
double discriminator_logit(const DiscriminatorParams& disc, double p_lvc, double p_adv);
double lvc_logit(const ModelParams& params, const Vec& s, const Vec& v);

/// Gumbel draws for the two gate logits (z=0, z=1).
struct GateNoise {
  double g0 = 0.0;
  double g1 = 0.0;
};

struct GateSample {
  int z = 0;
  double soft_weight = 0.0;
};

struct GateDecision {
  double p_lvc = 0.0;
  double p_adv = 0.0;
  double f_adv = 0.0;
  int z = 0;
  double soft_weight = 0.0;
};

GateNoise draw_gate_noise(Rng& rng);
// Deterministic gate given pre-drawn noise. For softmax_soft the noise is
// ignored, soft_weight = sigmoid(f/tau) and z = [soft_weight > 0.5].
GateSample gate_from_noise(double f_adv, double tau, SamplerKind sampler, const GateNoise& noise);
GateSample sample_gate(double f_adv, double tau, SamplerKind sampler, Rng& rng);

// Full forward of one pair through the discriminator.
GateDecision decide(const ModelParams& params, const Vec& s, const Vec& v, double tau, SamplerKind sampler,
                    const GateNoise& noise);

double sigmoid(double x);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <class P, class Fn>
void for_each_tensor(P& p, Fn&& fn) {
  using Scalar = std::conditional_t<std::is_const_v<P>, const double, double>;
  using Map = Eigen::Map<std::conditional_t<std::is_const_v<P>, const Vec, Vec>>;
  auto flat = [](auto& m) { return Map(m.data(), m.size()); };
  auto scalar = [](Scalar& x) { return Map(&x, 1); };
  fn(std::string_view("language.weight"), flat(p.language.weight));
  fn(std::string_view("language.bias"), flat(p.language.bias));
  fn(std::string_view("vision.weight"), flat(p.vision.weight));
  fn(std::string_view("vision.bias"), flat(p.vision.bias));
  fn(std::string_view("attention.bilinear"), flat(p.attention.bilinear));
  fn(std::string_view("attention.proj_sentence"), flat(p.attention.proj_sentence));
  fn(std::string_view("attention.proj_frame"), flat(p.attention.proj_frame));
  fn(std::string_view("attention.score"), flat(p.attention.score));
  fn(std::string_view("disc.bvf"), flat(p.disc.bvf));
  fn(std::string_view("disc.coef"), flat(p.disc.coef));
  fn(std::string_view("disc.bias"), scalar(p.disc.bias));
  fn(std::string_view("lvc.scale"), scalar(p.lvc_scale));
  fn(std::string_view("lvc.bias"), scalar(p.lvc_bias));
}

template <class P, class Q, class Fn>
void for_each_tensor_pair(P& a, Q& b, Fn&& fn) {
  // Collect views of `b` first, then walk `a` in the same order.
  using BView = std::conditional_t<std::is_const_v<Q>, Eigen::Map<const Vec>, Eigen::Map<Vec>>;
  std::vector<BView> views;
  for_each_tensor(b, [&](std::string_view, auto view) { views.emplace_back(view.data(), view.size()); });
  std::size_t i = 0;
  for_each_tensor(a, [&](std::string_view name, auto view) {
    if (views[i].size() != view.size())
      throw ValidationError("shape mismatch in tensor '" + std::string(name) + "'");
    fn(name, view, views[i]);
    ++i;
  });
}

}  // namespace wal
