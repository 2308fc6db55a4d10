// Forward caches and reverse-mode gradients for the batch loss.

#include "wal/training.hpp"

#include <cmath>

namespace wal {

namespace {

struct SentenceCache {
  const Vec* raw = nullptr;
  Embedding emb;
  Vec query;  // s (dot) or bilinear^T s (multiplicative)
  Vec proj;   // proj_sentence^T s (additive)
  Vec grad_s;
  Vec grad_query;
  Vec grad_proj;
};

struct VideoCache {
  const std::vector<Vec>* raw = nullptr;
  std::vector<Embedding> frames;
  std::vector<Vec> proj;  // proj_frame^T h_i (additive)
  std::vector<Vec> grad_h;
  std::vector<Vec> grad_proj;
};

struct AttendCache {
  Vec alpha;
  std::vector<Vec> u;  // tanh activations (additive)
  Vec v;
  double sim = 0.0;
};

SentenceCache prepare_sentence(const ModelParams& p, const Vec& x) {
  SentenceCache c;
  c.raw = &x;
  c.emb = embed(p.language, x);
  const Vec& s = c.emb.out;
  const auto d = s.size();
  c.grad_s = Vec::Zero(d);
  switch (p.attention.kind) {
    case AttentionKind::uniform:
      break;
    case AttentionKind::dot:
      c.query = s;
      c.grad_query = Vec::Zero(d);
      break;
    case AttentionKind::multiplicative:
      c.query = p.attention.bilinear.transpose() * s;
      c.grad_query = Vec::Zero(d);
      break;
    case AttentionKind::additive:
      c.proj = p.attention.proj_sentence.transpose() * s;
      c.grad_proj = Vec::Zero(c.proj.size());
      break;
  }
  return c;
}

VideoCache prepare_video(const ModelParams& p, const std::vector<Vec>& frames) {
  if (frames.empty()) throw ValidationError("pair has no frames");
  VideoCache c;
  c.raw = &frames;
  c.frames.reserve(frames.size());
  for (const auto& f : frames) {
    c.frames.push_back(embed(p.vision, f));
    c.grad_h.push_back(Vec::Zero(c.frames.back().out.size()));
    if (p.attention.kind == AttentionKind::additive) {
      c.proj.push_back(p.attention.proj_frame.transpose() * c.frames.back().out);
      c.grad_proj.push_back(Vec::Zero(c.proj.back().size()));
    }
  }
  return c;
}

AttendCache attend(const ModelParams& p, const SentenceCache& sc, const VideoCache& vc) {
  const auto n = static_cast<Eigen::Index>(vc.frames.size());
  AttendCache a;
  Vec e(n);
  switch (p.attention.kind) {
    case AttentionKind::uniform:
      e.setZero();
      break;
    case AttentionKind::dot:
    case AttentionKind::multiplicative:
      for (Eigen::Index i = 0; i < n; ++i) e[i] = sc.query.dot(vc.frames[i].out);
      break;
    case AttentionKind::additive:
      a.u.reserve(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        a.u.push_back((sc.proj + vc.proj[i]).array().tanh().matrix());
        e[i] = p.attention.score.dot(a.u.back());
      }
      break;
  }
  a.alpha = softmax(e);
  a.v = Vec::Zero(vc.frames.front().out.size());
  for (Eigen::Index i = 0; i < n; ++i) a.v += a.alpha[i] * vc.frames[i].out;
  a.sim = sc.emb.out.dot(a.v);
  return a;
}

// Propagates d(loss)/d(sim) into the sentence/video caches and the
// attention score vector.
void attend_backward(const ModelParams& p, SentenceCache& sc, VideoCache& vc, const AttendCache& a, double d_sim,
                     ModelParams& g) {
  if (d_sim == 0.0) return;
  const auto n = static_cast<Eigen::Index>(vc.frames.size());
  sc.grad_s += d_sim * a.v;
  const Vec dv = d_sim * sc.emb.out;
  Vec d_alpha(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    vc.grad_h[i] += a.alpha[i] * dv;
    d_alpha[i] = dv.dot(vc.frames[i].out);
  }
  if (p.attention.kind == AttentionKind::uniform) return;
  const Vec de = (a.alpha.array() * (d_alpha.array() - a.alpha.dot(d_alpha))).matrix();
  switch (p.attention.kind) {
    case AttentionKind::uniform:
      break;
    case AttentionKind::dot:
    case AttentionKind::multiplicative:
      for (Eigen::Index i = 0; i < n; ++i) {
        sc.grad_query += de[i] * vc.frames[i].out;
        vc.grad_h[i] += de[i] * sc.query;
      }
      break;
    case AttentionKind::additive:
      for (Eigen::Index i = 0; i < n; ++i) {
        g.attention.score += de[i] * a.u[i];
        const Vec gi = (de[i] * p.attention.score.array() * (1.0 - a.u[i].array().square())).matrix();
        sc.grad_proj += gi;
        vc.grad_proj[i] += gi;
      }
      break;
  }
}

void channel_backward(const Embedding& e, const Vec& x, const Vec& d_out, ChannelParams& g) {
  if (e.norm == 0.0) return;  // relu is dead everywhere; output is constant zero
  const Vec dr = (d_out - e.out * e.out.dot(d_out)) / e.norm;
  const Vec dpre = (dr.array() * (e.pre.array() > 0.0).cast<double>()).matrix();
  g.weight.noalias() += dpre * x.transpose();
  g.bias += dpre;
}

void finish_sentence(const ModelParams& p, SentenceCache& sc, ModelParams& g) {
  Vec ds = sc.grad_s;
  switch (p.attention.kind) {
    case AttentionKind::uniform:
      break;
    case AttentionKind::dot:
      ds += sc.grad_query;
      break;
    case AttentionKind::multiplicative:
      ds += p.attention.bilinear * sc.grad_query;
      g.attention.bilinear.noalias() += sc.emb.out * sc.grad_query.transpose();
      break;
    case AttentionKind::additive:
      ds += p.attention.proj_sentence * sc.grad_proj;
      g.attention.proj_sentence.noalias() += sc.emb.out * sc.grad_proj.transpose();
      break;
  }
  channel_backward(sc.emb, *sc.raw, ds, g.language);
}

void finish_video(const ModelParams& p, VideoCache& vc, ModelParams& g) {
  for (std::size_t i = 0; i < vc.frames.size(); ++i) {
    Vec dh = vc.grad_h[i];
    if (p.attention.kind == AttentionKind::additive) {
      dh += p.attention.proj_frame * vc.grad_proj[i];
      g.attention.proj_frame.noalias() += vc.frames[i].out * vc.grad_proj[i].transpose();
    }
    channel_backward(vc.frames[i], (*vc.raw)[i], dh, g.vision);
  }
}

// Partial derivatives of the discriminator logit.
struct LogitPartials {
  double d_plvc = 0.0;
  double d_padv = 0.0;
};

LogitPartials logit_partials(const DiscriminatorParams& disc) {
  switch (disc.input_mode) {
    case InputMode::residual: return {-disc.coef[0], disc.coef[0]};
    case InputMode::concat: return {disc.coef[1], disc.coef[0]};
    case InputMode::adv_only: return {0.0, disc.coef[0]};
  }
  return {};
}

void logit_param_backward(const DiscriminatorParams& disc, double p_lvc, double p_adv, double d_f,
                          DiscriminatorParams& g) {
  switch (disc.input_mode) {
    case InputMode::residual:
      g.coef[0] += d_f * (p_adv - p_lvc);
      break;
    case InputMode::concat:
      g.coef[0] += d_f * p_adv;
      g.coef[1] += d_f * p_lvc;
      break;
    case InputMode::adv_only:
      g.coef[0] += d_f * p_adv;
      break;
  }
  g.bias += d_f;
}

// Coefficients of the routed per-pair loss
//   loss = c_lvc * L_lvc + c_adv * L_adv,
// and the straight-through weight d(loss)/d(soft_weight).
struct Routing {
  double c_lvc = 1.0;
  double c_adv = 0.0;
  double d_weight = 0.0;
  double grad_c_lvc = 1.0;  // coefficient as seen by the backward pass
  double grad_c_adv = 0.0;
};

Routing route(const TrainConfig& cfg, Phase phase, const GateDecision& gate, double l_lvc, double l_adv) {
  Routing r;
  if (!cfg.discriminator) return r;
  const bool hard = cfg.sampler_kind == SamplerKind::gumbel_hard;
  r.c_adv = hard ? static_cast<double>(gate.z) : gate.soft_weight;
  r.c_lvc = 1.0 - r.c_adv;
  r.grad_c_lvc = r.c_lvc;
  if (phase == Phase::joint) {
    r.grad_c_adv = r.c_adv;
    r.d_weight = l_adv - l_lvc;
  } else {
    r.grad_c_adv = 0.0;
    r.d_weight = 0.0;
  }
  return r;
}

void check_finite(double value, const std::string& id, const char* what) {
  if (!std::isfinite(value)) throw NumericError(std::string("non-finite ") + what + " for pair '" + id + "'");
}

GateDecision gate_for(const ModelParams& p, const TrainConfig& cfg, const SentenceCache& sc, double p_lvc,
                      const GateNoise& noise, Eigen::Index& bvf_row) {
  GateDecision d;
  d.p_lvc = p_lvc;
  d.p_adv = background_similarity(p.disc, sc.emb.out, &bvf_row);
  d.f_adv = discriminator_logit(p.disc, d.p_lvc, d.p_adv);
  if (cfg.discriminator) {
    const GateSample gs = gate_from_noise(d.f_adv, cfg.tau, cfg.sampler_kind, noise);
    d.z = gs.z;
    d.soft_weight = gs.soft_weight;
  }
  return d;
}

// Gradient of the routed loss with respect to f_adv, p_adv and the
// discriminator parameters; returns the extra gradient on p_lvc.
double gate_backward(const ModelParams& p, const TrainConfig& cfg, SentenceCache& sc,
                     const GateDecision& gate, Eigen::Index bvf_row, const Routing& r, double scale, ModelParams& g) {
  if (!cfg.discriminator) return 0.0;
  const double dw_df = gate.soft_weight * (1.0 - gate.soft_weight) / cfg.tau;
  const double d_f = scale * (r.grad_c_adv * sigmoid(gate.f_adv) + r.d_weight * dw_df);
  if (d_f == 0.0) return 0.0;
  logit_param_backward(p.disc, gate.p_lvc, gate.p_adv, d_f, g.disc);
  const LogitPartials lp = logit_partials(p.disc);
  const double d_padv = d_f * lp.d_padv;
  if (d_padv != 0.0) {
    sc.grad_s += d_padv * p.disc.bvf.row(bvf_row).transpose();
    g.disc.bvf.row(bvf_row) += d_padv * sc.emb.out.transpose();
  }
  return d_f * lp.d_plvc;
}

BatchResult bce_gradients(const ModelParams& p, std::span<const PairInput> batch, const TrainConfig& cfg,
                          Phase phase) {
  BatchResult out;
  out.grad = zeros_like(p);
  ModelParams& g = out.grad;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const PairInput& in = batch[k];
    SentenceCache sc = prepare_sentence(p, in.sentence_raw);
    VideoCache vc = prepare_video(p, in.frames_raw);
    const AttendCache ac = attend(p, sc, vc);

    Eigen::Index bvf_row = 0;
    PairOutcome po;
    po.gate = gate_for(p, cfg, sc, ac.sim, in.noise, bvf_row);
    const double f_lvc = p.lvc_scale * ac.sim + p.lvc_bias;
    po.loss_lvc = bce_loss(in.label, f_lvc);
    po.loss_adv = adversarial_loss(po.gate.f_adv);
    const Routing r = route(cfg, phase, po.gate, po.loss_lvc, po.loss_adv);
    po.loss = r.c_lvc * po.loss_lvc + r.c_adv * po.loss_adv;
    check_finite(po.loss, in.id, "loss");

    const double d_flvc = scale * r.grad_c_lvc * bce_grad(in.label, f_lvc);
    g.lvc_scale += d_flvc * ac.sim;
    g.lvc_bias += d_flvc;
    double d_sim = d_flvc * p.lvc_scale;
    d_sim += gate_backward(p, cfg, sc, po.gate, bvf_row, r, scale, g);

    attend_backward(p, sc, vc, ac, d_sim, g);
    finish_sentence(p, sc, g);
    finish_video(p, vc, g);

    out.loss += scale * po.loss;
    out.pairs.push_back(po);
    out.pair_index.push_back(k);
  }
  return out;
}

BatchResult triplet_gradients(const ModelParams& p, std::span<const PairInput> batch, const TrainConfig& cfg,
                              Phase phase) {
  BatchResult out;
  out.grad = zeros_like(p);
  ModelParams& g = out.grad;

  std::vector<std::size_t> pos;
  for (std::size_t k = 0; k < batch.size(); ++k)
    if (batch[k].label == 1) pos.push_back(k);
  const std::size_t m = pos.size();
  if (m < 2) throw ValidationError("triplet loss needs at least 2 positive pairs in a batch");

  std::vector<SentenceCache> sents;
  std::vector<VideoCache> vids;
  sents.reserve(m);
  vids.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    sents.push_back(prepare_sentence(p, batch[pos[i]].sentence_raw));
    vids.push_back(prepare_video(p, batch[pos[i]].frames_raw));
  }
  std::vector<AttendCache> att(m * m);
  Mat sim(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      att[i * m + j] = attend(p, sents[i], vids[j]);
      sim(i, j) = att[i * m + j].sim;
    }

  const double scale = 1.0 / static_cast<double>(m);
  Mat d_sim = Mat::Zero(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const PairInput& in = batch[pos[i]];
    // Hardest negatives: video for sentence i, sentence for video i.
    Eigen::Index hard_v = -1, hard_s = -1;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      if (hard_v < 0 || sim(i, j) > sim(i, hard_v)) hard_v = static_cast<Eigen::Index>(j);
      if (hard_s < 0 || sim(j, i) > sim(hard_s, i)) hard_s = static_cast<Eigen::Index>(j);
    }
    const double h1 = cfg.triplet_margin - sim(i, i) + sim(i, hard_v);
    const double h2 = cfg.triplet_margin - sim(i, i) + sim(hard_s, i);
    PairOutcome po;
    po.loss_lvc = std::max(0.0, h1) + std::max(0.0, h2);

    Eigen::Index bvf_row = 0;
    po.gate = gate_for(p, cfg, sents[i], sim(i, i), in.noise, bvf_row);
    po.loss_adv = adversarial_loss(po.gate.f_adv);
    const Routing r = route(cfg, phase, po.gate, po.loss_lvc, po.loss_adv);
    po.loss = r.c_lvc * po.loss_lvc + r.c_adv * po.loss_adv;
    check_finite(po.loss, in.id, "loss");

    const double c = scale * r.grad_c_lvc;
    if (h1 > 0.0) {
      d_sim(i, i) -= c;
      d_sim(i, hard_v) += c;
    }
    if (h2 > 0.0) {
      d_sim(i, i) -= c;
      d_sim(hard_s, i) += c;
    }
    d_sim(i, i) += gate_backward(p, cfg, sents[i], po.gate, bvf_row, r, scale, g);

    out.loss += scale * po.loss;
    out.pairs.push_back(po);
    out.pair_index.push_back(pos[i]);
  }

  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) attend_backward(p, sents[i], vids[j], att[i * m + j], d_sim(i, j), g);
  for (auto& sc : sents) finish_sentence(p, sc, g);
  for (auto& vc : vids) finish_video(p, vc, g);
  return out;
}

}  // namespace

BatchResult compute_gradients(const ModelParams& params, std::span<const PairInput> batch, const TrainConfig& config,
                              Phase phase) {
  if (batch.empty()) throw ValidationError("compute_gradients on an empty batch");
  BatchResult r = config.loss_kind == LossKind::triplet ? triplet_gradients(params, batch, config, phase)
                                                        : bce_gradients(params, batch, config, phase);
  for_each_tensor(r.grad, [&](std::string_view name, auto view) {
    if (!view.allFinite()) throw NumericError("non-finite gradient in tensor '" + std::string(name) + "'");
  });
  return r;
}

}  // namespace wal
