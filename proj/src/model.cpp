#include "wal/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wal {

std::string_view to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::uniform: return "uniform";
    case AttentionKind::dot: return "dot";
    case AttentionKind::multiplicative: return "multiplicative";
    case AttentionKind::additive: return "additive";
  }
  return "dot";
}

std::string_view to_string(InputMode mode) {
  switch (mode) {
    case InputMode::residual: return "residual";
    case InputMode::concat: return "concat";
    case InputMode::adv_only: return "adv_only";
  }
  return "residual";
}

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::gumbel_hard: return "gumbel_hard";
    case SamplerKind::softmax_soft: return "softmax_soft";
  }
  return "gumbel_hard";
}

AttentionKind parse_attention_kind(std::string_view text) {
  for (auto k : {AttentionKind::uniform, AttentionKind::dot, AttentionKind::multiplicative, AttentionKind::additive})
    if (text == to_string(k)) return k;
  throw ValidationError("unknown attention kind '" + std::string(text) + "'");
}

InputMode parse_input_mode(std::string_view text) {
  for (auto m : {InputMode::residual, InputMode::concat, InputMode::adv_only})
    if (text == to_string(m)) return m;
  throw ValidationError("unknown input mode '" + std::string(text) + "'");
}

SamplerKind parse_sampler_kind(std::string_view text) {
  for (auto k : {SamplerKind::gumbel_hard, SamplerKind::softmax_soft})
    if (text == to_string(k)) return k;
  throw ValidationError("unknown sampler kind '" + std::string(text) + "'");
}

namespace {

Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
  return m;
}

}  // namespace

ModelParams init_params(const ModelShape& shape, Rng& rng) {
  if (shape.d_in < 1 || shape.d_emb < 1) throw ValidationError("dimensions must be positive");
  if (shape.bvf_count < 1) throw ValidationError("bvf_count must be at least 1");
  const int d_att = shape.d_att > 0 ? shape.d_att : shape.d_emb;
  ModelParams p;
  // He initialization for the relu embedding layers.
  const double channel_std = std::sqrt(2.0 / shape.d_in);
  p.language.weight = gaussian_matrix(shape.d_emb, shape.d_in, channel_std, rng);
  p.language.bias = Vec::Zero(shape.d_emb);
  p.vision.weight = gaussian_matrix(shape.d_emb, shape.d_in, channel_std, rng);
  p.vision.bias = Vec::Zero(shape.d_emb);

  p.attention.kind = shape.attention;
  switch (shape.attention) {
    case AttentionKind::uniform:
    case AttentionKind::dot:
      break;
    case AttentionKind::multiplicative:
      // Starts as dot-product attention.
      p.attention.bilinear = Mat::Identity(shape.d_emb, shape.d_emb);
      break;
    case AttentionKind::additive:
      p.attention.proj_sentence = gaussian_matrix(shape.d_emb, d_att, 1.0 / std::sqrt(shape.d_emb), rng);
      p.attention.proj_frame = gaussian_matrix(shape.d_emb, d_att, 1.0 / std::sqrt(shape.d_emb), rng);
      p.attention.score = gaussian_matrix(d_att, 1, 1.0 / std::sqrt(d_att), rng);
      break;
  }

  p.disc.input_mode = shape.input_mode;
  p.disc.bvf = Mat::Zero(shape.bvf_count, shape.d_emb);
  // Similarities of unit relu embeddings live in [0, 1], so both classifiers
  // start with a slope that spans a useful logit range. The gate bias is
  // calibrated against data in initial_params().
  if (shape.input_mode == InputMode::concat) {
    p.disc.coef = Vec(2);
    p.disc.coef << kDiscSlope, -kDiscSlope;  // same decision function as residual at start
  } else {
    p.disc.coef = Vec::Constant(1, kDiscSlope);
  }
  p.disc.bias = 0.0;
  p.lvc_scale = kLvcSlope;
  p.lvc_bias = -0.5 * kLvcSlope;  // decision boundary at similarity 0.5
  return p;
}

ModelParams zeros_like(const ModelParams& like) {
  ModelParams z = like;
  for_each_tensor(z, [](std::string_view, auto view) { view.setZero(); });
  return z;
}

bool is_discriminator_tensor(std::string_view name) { return name.starts_with("disc."); }

Embedding embed(const ChannelParams& channel, const Vec& x) {
  if (x.size() != channel.weight.cols())
    throw ValidationError("embedding input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(channel.weight.cols()));
  Embedding e;
  e.pre = channel.weight * x + channel.bias;
  e.out = e.pre.cwiseMax(0.0);
  e.norm = e.out.norm();
  if (e.norm > 0.0) e.out /= e.norm;
  return e;
}

Vec embed_sentence(const ModelParams& params, const Vec& sentence_raw) {
  return embed(params.language, sentence_raw).out;
}

std::vector<Vec> embed_frames(const ModelParams& params, std::span<const Vec> frames_raw) {
  std::vector<Vec> out;
  out.reserve(frames_raw.size());
  for (const auto& f : frames_raw) out.push_back(embed(params.vision, f).out);
  return out;
}

Vec softmax(const Vec& scores) {
  if (scores.size() == 0) throw ValidationError("softmax over an empty score vector");
  const double m = scores.maxCoeff();
  Vec e = (scores.array() - m).exp().matrix();
  return e / e.sum();
}

Vec attention_scores(const AttentionParams& attn, const Vec& s, std::span<const Vec> frames) {
  if (frames.empty()) throw ValidationError("attention over an empty frame list");
  const auto n = static_cast<Eigen::Index>(frames.size());
  Vec e(n);
  switch (attn.kind) {
    case AttentionKind::uniform:
      e.setZero();
      break;
    case AttentionKind::dot:
      for (Eigen::Index i = 0; i < n; ++i) e[i] = s.dot(frames[i]);
      break;
    case AttentionKind::multiplicative: {
      const Vec q = attn.bilinear.transpose() * s;
      for (Eigen::Index i = 0; i < n; ++i) e[i] = q.dot(frames[i]);
      break;
    }
    case AttentionKind::additive: {
      const Vec a = attn.proj_sentence.transpose() * s;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vec u = (a + attn.proj_frame.transpose() * frames[i]).array().tanh().matrix();
        e[i] = attn.score.dot(u);
      }
      break;
    }
  }
  return e;
}

Vec attention_weights(const AttentionParams& attn, const Vec& s, std::span<const Vec> frames) {
  return softmax(attention_scores(attn, s, frames));
}

Vec pool_video(const Vec& alpha, std::span<const Vec> frames) {
  if (static_cast<std::size_t>(alpha.size()) != frames.size())
    throw ValidationError("pool_video: " + std::to_string(alpha.size()) + " weights for " +
                          std::to_string(frames.size()) + " frames");
  if (frames.empty()) throw ValidationError("pool_video over an empty frame list");
  Vec v = Vec::Zero(frames.front().size());
  for (std::size_t i = 0; i < frames.size(); ++i) v += alpha[static_cast<Eigen::Index>(i)] * frames[i];
  return v;
}

Mat init_bvf(std::span<const Vec> video_features, int count, Rng& rng) {
  if (count < 1) throw ValidationError("bvf count must be at least 1");
  if (video_features.size() < static_cast<std::size_t>(count))
    throw ValidationError("init_bvf: sample of " + std::to_string(video_features.size()) +
                          " features is smaller than " + std::to_string(count) + " groups");
  const auto dim = video_features.front().size();
  std::vector<std::size_t> order(video_features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  Mat bvf = Mat::Zero(count, dim);
  // Round-robin over the shuffled order gives every group at least one member.
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Vec& f = video_features[order[i]];
    const double n = f.norm();
    if (n > 0.0) bvf.row(static_cast<Eigen::Index>(i % count)) += (f / n).transpose();
  }
  for (Eigen::Index r = 0; r < bvf.rows(); ++r) {
    const double n = bvf.row(r).norm();
    if (n > 0.0) bvf.row(r) /= n;
  }
  return bvf;
}

double background_similarity(const DiscriminatorParams& disc, const Vec& s, Eigen::Index* argmax) {
  const Vec sims = disc.bvf * s;
  Eigen::Index best = 0;
  const double p = sims.maxCoeff(&best);
  if (argmax != nullptr) *argmax = best;
  return p;
}

double discriminator_logit(const DiscriminatorParams& disc, double p_lvc, double p_adv) {
  switch (disc.input_mode) {
    case InputMode::residual: return disc.coef[0] * (p_adv - p_lvc) + disc.bias;
    case InputMode::concat: return disc.coef[0] * p_adv + disc.coef[1] * p_lvc + disc.bias;
    case InputMode::adv_only: return disc.coef[0] * p_adv + disc.bias;
  }
  return 0.0;
}

double lvc_logit(const ModelParams& params, const Vec& s, const Vec& v) {
  if (s.size() != v.size())
    throw ValidationError("lvc_logit: sentence dimension " + std::to_string(s.size()) + " vs video dimension " +
                          std::to_string(v.size()));
  return params.lvc_scale * s.dot(v) + params.lvc_bias;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

GateNoise draw_gate_noise(Rng& rng) {
  GateNoise n;
  n.g0 = rng.gumbel();
  n.g1 = rng.gumbel();
  return n;
}

GateSample gate_from_noise(double f_adv, double tau, SamplerKind sampler, const GateNoise& noise) {
  if (!(tau > 0.0)) throw ValidationError("gate temperature must be positive");
  GateSample g;
  if (sampler == SamplerKind::gumbel_hard) {
    // Logits (0, f_adv), perturbed and tempered; z = argmax.
    const double y0 = noise.g0 / tau;
    const double y1 = (f_adv + noise.g1) / tau;
    g.z = y1 > y0 ? 1 : 0;
    g.soft_weight = sigmoid(y1 - y0);
  } else {
    g.soft_weight = sigmoid(f_adv / tau);
    g.z = g.soft_weight > 0.5 ? 1 : 0;
  }
  return g;
}

GateSample sample_gate(double f_adv, double tau, SamplerKind sampler, Rng& rng) {
  if (!(tau > 0.0)) throw ValidationError("gate temperature must be positive");
  const GateNoise noise = sampler == SamplerKind::gumbel_hard ? draw_gate_noise(rng) : GateNoise{};
  return gate_from_noise(f_adv, tau, sampler, noise);
}

GateDecision decide(const ModelParams& params, const Vec& s, const Vec& v, double tau, SamplerKind sampler,
                    const GateNoise& noise) {
  GateDecision d;
  d.p_lvc = s.dot(v);
  d.p_adv = background_similarity(params.disc, s);
  d.f_adv = discriminator_logit(params.disc, d.p_lvc, d.p_adv);
  const GateSample g = gate_from_noise(d.f_adv, tau, sampler, noise);
  d.z = g.z;
  d.soft_weight = g.soft_weight;
  return d;
}

}  // namespace wal
