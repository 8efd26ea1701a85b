#include "cvos/routing.hpp"

#include <cmath>

namespace cvos {

int64_t CapsuleGrid::types() const {
  const Shape& s = activations.shape();
  if (s.empty()) throw DimensionError("capsule grid requires at least a type axis");
  return s.back();
}

int64_t CapsuleGrid::sites() const { return activations.size() / types(); }

void CapsuleGrid::validate() const {
  const Shape& ps = poses.shape();
  const Shape& as = activations.shape();
  if (ps.size() != as.size() + 1 || ps.back() != 16) {
    throw DimensionError("capsule grid poses " + shape_str(ps) +
                         " must be activations " + shape_str(as) + " plus a 16-entry pose axis");
  }
  for (size_t i = 0; i < as.size(); ++i) {
    if (ps[i] != as[i]) {
      throw DimensionError("capsule grid index spaces differ: poses " + shape_str(ps) +
                           " vs activations " + shape_str(as));
    }
  }
  const double* a = activations.data();
  for (int64_t i = 0; i < activations.size(); ++i) {
    if (!(a[i] >= 0.0 && a[i] <= 1.0)) {
      throw ContractError("capsule activations must lie in [0, 1]");
    }
  }
}

const Tensor& TransformationWeights::get(VoteRole role) const {
  const Tensor* t = nullptr;
  switch (role) {
    case VoteRole::key: t = &key; break;
    case VoteRole::value: t = &value; break;
    case VoteRole::query: t = &query; break;
    case VoteRole::plain: t = &plain; break;
  }
  if (!t->defined()) throw ConfigError("transformation weights missing for requested role");
  return *t;
}

double RoutingConfig::lambda_at(int iteration) const {
  if (lambda_schedule.empty()) throw ConfigError("routing lambda schedule is empty");
  size_t i = std::min<size_t>(static_cast<size_t>(iteration), lambda_schedule.size() - 1);
  return lambda_schedule[i];
}

void RoutingConfig::validate(int64_t out_types) const {
  if (iterations < 1) throw ConfigError("routing iterations must be >= 1");
  if (!(sigma_floor > 0.0)) throw ConfigError("sigma_floor must be positive");
  if (lambda_schedule.empty()) throw ConfigError("lambda schedule must be non-empty");
  double prev = 0.0;
  for (double l : lambda_schedule) {
    if (!(l > 0.0) || l < prev) throw ConfigError("lambda schedule must be positive and non-decreasing");
    prev = l;
  }
  if (!beta_a.defined() || !beta_u.defined() || beta_a.size() != out_types ||
      beta_u.size() != out_types) {
    throw ConfigError("beta_a/beta_u must carry one entry per output capsule type");
  }
}

RoutingConfig RoutingConfig::with_types(int64_t out_types) {
  RoutingConfig cfg;
  cfg.beta_a = Tensor::zeros({out_types});
  cfg.beta_u = Tensor::zeros({out_types});
  return cfg;
}

VoteTensor compute_votes(const CapsuleGrid& capsules, const TransformationWeights& weights,
                         VoteRole role) {
  const Tensor& w = weights.get(role);
  return VoteTensor{pose_transform(capsules.poses, w), role};
}

Tensor capsule_pool(const std::vector<Tensor>& field_votes) {
  if (field_votes.empty()) throw ContractError("capsule_pool: empty receptive field");
  Tensor acc = field_votes[0];
  for (size_t i = 1; i < field_votes.size(); ++i) {
    if (field_votes[i].shape() != acc.shape()) {
      throw DimensionError("capsule_pool: vote shapes differ across the field");
    }
    acc = add(acc, field_votes[i]);
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(field_votes.size()));
}

VoteTensor capsule_pool(const std::vector<VoteTensor>& field_votes) {
  if (field_votes.empty()) throw ContractError("capsule_pool: empty receptive field");
  std::vector<Tensor> vs;
  vs.reserve(field_votes.size());
  for (const VoteTensor& v : field_votes) {
    if (v.role != field_votes[0].role) throw ContractError("capsule_pool: mixed vote roles");
    vs.push_back(v.votes);
  }
  return VoteTensor{capsule_pool(vs), field_votes[0].role};
}

namespace {

struct RoutingDims {
  int64_t L, I, J, H;
};

RoutingDims routing_dims(const Tensor& votes) {
  const Shape& vs = votes.shape();
  if (vs.size() != 4) {
    throw DimensionError("routing expects votes shaped [L, I, J, 16], got " + shape_str(vs));
  }
  return RoutingDims{vs[0], vs[1], vs[2], vs[3]};
}

}  // namespace

MStepResult m_step(const Tensor& assignments, const Tensor& a_in, const Tensor& votes,
                   const RoutingConfig& cfg, double lambda) {
  RoutingDims d = routing_dims(votes);
  if (assignments.shape() != Shape{d.L, d.I, d.J}) {
    throw DimensionError("m_step: assignments " + shape_str(assignments.shape()) +
                         " do not match votes " + shape_str(votes.shape()));
  }
  if (a_in.shape() != Shape{d.L, d.I}) {
    throw DimensionError("m_step: activations " + shape_str(a_in.shape()) +
                         " do not match votes " + shape_str(votes.shape()));
  }
  const double* rp_chk = assignments.data();
  for (int64_t i = 0; i < assignments.size(); ++i) {
    if (rp_chk[i] < 0.0) throw ContractError("m_step: assignments must be non-negative");
  }
  cfg.validate(d.J);

  Tensor rp = mul(assignments, reshape(a_in, {d.L, d.I, 1}));  // [L,I,J]
  Tensor mass = sum(rp, {1});                                  // [L,J]
  Tensor pos = positive_mask(mass);                            // untracked
  Tensor denom = add(mass, add_scalar(mul_scalar(pos, -1.0), 1.0));  // mass, or 1 where empty
  Tensor denom_h = reshape(denom, {d.L, d.J, 1});

  Tensor rp4 = reshape(rp, {d.L, d.I, d.J, 1});
  Tensor mu = div(sum(mul(rp4, votes), {1}), denom_h);  // [L,J,16]
  Tensor dev = sub(votes, reshape(mu, {d.L, 1, d.J, d.H}));
  Tensor var = div(sum(mul(rp4, mul(dev, dev)), {1}), denom_h);
  Tensor var_floored = clamp(var, cfg.sigma_floor, std::numeric_limits<double>::infinity());
  Tensor sigma = sqrt(var_floored);

  Tensor log_sigma = mul_scalar(log(var_floored), 0.5);
  Tensor beta_u_h = reshape(cfg.beta_u, {d.J, 1});  // broadcasts over [L,J,16]
  Tensor cost = sum(mul(add(beta_u_h, log_sigma), reshape(mass, {d.L, d.J, 1})), {2});  // [L,J]
  Tensor act = mul(sigmoid(mul_scalar(sub(cfg.beta_a, cost), lambda)), pos);
  // zero-mass outputs keep mu exactly zero as documented
  Tensor mu_masked = mul(mu, reshape(pos, {d.L, d.J, 1}));
  return MStepResult{mu_masked, sigma, act};
}

Tensor e_step(const Tensor& mu, const Tensor& sigma, const Tensor& a_out, const Tensor& votes) {
  RoutingDims d = routing_dims(votes);
  if (mu.shape() != Shape{d.L, d.J, d.H} || sigma.shape() != Shape{d.L, d.J, d.H} ||
      a_out.shape() != Shape{d.L, d.J}) {
    throw DimensionError("e_step: statistics do not match votes " + shape_str(votes.shape()));
  }
  Tensor var = mul(sigma, sigma);
  Tensor mu_b = reshape(mu, {d.L, 1, d.J, d.H});
  Tensor var_b = reshape(var, {d.L, 1, d.J, d.H});
  Tensor dev = sub(votes, mu_b);
  Tensor quad = div(mul(dev, dev), var_b);
  Tensor log_term = reshape(log(mul_scalar(var, 2.0 * M_PI)), {d.L, 1, d.J, d.H});
  Tensor logp = mul_scalar(sum(add(quad, log_term), {3}), -0.5);  // [L,I,J]
  Tensor loga = log(clamp(a_out, 1e-300, std::numeric_limits<double>::infinity()));
  Tensor scores = add(logp, reshape(loga, {d.L, 1, d.J}));
  Tensor r = softmax(scores, 2);

  // documented degenerate rule: rows with zero activation mass become uniform
  Tensor any_pos = positive_mask(max_reduce(a_out, {1}));  // [L], untracked
  Tensor zero_rows = add_scalar(mul_scalar(any_pos, -1.0), 1.0);
  Tensor keep = reshape(any_pos, {d.L, 1, 1});
  Tensor uniform = mul_scalar(reshape(zero_rows, {d.L, 1, 1}), 1.0 / static_cast<double>(d.J));
  return add(mul(r, keep), uniform);
}

std::pair<Tensor, Tensor> em_routing(const Tensor& a_in, const Tensor& votes,
                                     const RoutingConfig& cfg) {
  RoutingDims d = routing_dims(votes);
  cfg.validate(d.J);
  if (a_in.shape() != Shape{d.L, d.I}) {
    throw DimensionError("em_routing: activations " + shape_str(a_in.shape()) +
                         " do not match votes " + shape_str(votes.shape()));
  }
  Tensor r = Tensor::full({d.L, d.I, d.J}, 1.0 / static_cast<double>(d.J));
  MStepResult ms;
  for (int it = 0; it < cfg.iterations; ++it) {
    ms = m_step(r, a_in, votes, cfg, cfg.lambda_at(it));
    if (it + 1 < cfg.iterations) r = e_step(ms.mu, ms.sigma, ms.activation, votes);
  }
  return {ms.mu, ms.activation};
}

Tensor assignment_from_distance(const Tensor& query_poses, const Tensor& key_votes) {
  RoutingDims d = routing_dims(key_votes);
  if (query_poses.shape() != Shape{d.L, d.J, d.H}) {
    throw DimensionError("assignment_from_distance: query poses " + shape_str(query_poses.shape()) +
                         " do not match key votes " + shape_str(key_votes.shape()));
  }
  Tensor dev = sub(reshape(query_poses, {d.L, 1, d.J, d.H}), key_votes);
  Tensor dist = sum(mul(dev, dev), {3});  // [L,I,J]
  return softmax(neg(dist), 2);
}

std::pair<Tensor, Tensor> attention_route_votes(const AttentionVotes& votes,
                                                const RoutingConfig& cfg) {
  RoutingDims dk = routing_dims(votes.v_key);
  RoutingDims dq = routing_dims(votes.v_query);
  if (dk.J != dq.J) {
    throw ConfigError("attention routing: key and query weight tables disagree on output types");
  }
  if (votes.v_value.shape() != votes.v_key.shape()) {
    throw DimensionError("attention routing: value votes " + shape_str(votes.v_value.shape()) +
                         " do not match key votes " + shape_str(votes.v_key.shape()));
  }
  auto [query_poses, query_acts] = em_routing(votes.a_frame, votes.v_query, cfg);
  (void)query_acts;  // the algorithm consumes only the routed query poses
  Tensor rv = assignment_from_distance(query_poses, votes.v_key);
  MStepResult ms = m_step(rv, votes.a_video, votes.v_value, cfg, cfg.lambda_at(cfg.iterations - 1));
  return {ms.mu, ms.activation};
}

CapsuleGrid attention_routing(const CapsuleGrid& video, const CapsuleGrid& frame,
                              const TransformationWeights& weights, const RoutingConfig& cfg) {
  if (video.sites() != frame.sites()) {
    throw DimensionError("attention_routing: video and frame capsule grids must share site extents");
  }
  int64_t sites = video.sites();
  int64_t i_types = video.types();
  int64_t k_types = frame.types();
  Tensor vposes = reshape(video.poses, {sites, i_types, 16});
  Tensor fposes = reshape(frame.poses, {sites, k_types, 16});
  AttentionVotes av;
  av.v_key = pose_transform(vposes, weights.get(VoteRole::key));
  av.v_value = pose_transform(vposes, weights.get(VoteRole::value));
  av.v_query = pose_transform(fposes, weights.get(VoteRole::query));
  av.a_video = reshape(video.activations, {sites, i_types});
  av.a_frame = reshape(frame.activations, {sites, k_types});
  auto [poses, acts] = attention_route_votes(av, cfg);

  // restore the caller's site axes with the new type count
  Shape site_shape(video.activations.shape().begin(), video.activations.shape().end() - 1);
  int64_t j = acts.extent(1);
  Shape pose_shape = site_shape;
  pose_shape.push_back(j);
  pose_shape.push_back(16);
  Shape act_shape = site_shape;
  act_shape.push_back(j);
  return CapsuleGrid{reshape(poses, pose_shape), reshape(acts, act_shape)};
}

}  // namespace cvos
