#pragma once

#include <utility>
#include <vector>

#include "cvos/ops.hpp"
#include "cvos/tensor.hpp"

namespace cvos {

// Matrix capsules: a 4x4 pose per (site..., type) plus a scalar activation in
// [0,1] over the same index space. Poses are kept flattened to 16 entries.
struct CapsuleGrid {
  Tensor poses;        // [..., types, 16]
  Tensor activations;  // [..., types]

  int64_t types() const;
  int64_t sites() const;  // product of the leading site axes
  void validate() const;
};

enum class VoteRole { key, value, query, plain };

// Votes from input capsules for output capsule types.
struct VoteTensor {
  Tensor votes;  // [..., I, J, 16]
  VoteRole role = VoteRole::plain;
};

// One learned 4x4 matrix per (input type, output type, role); shared across
// spatial positions.
struct TransformationWeights {
  Tensor key;    // [I, J, 16]
  Tensor value;  // [I, J, 16]
  Tensor query;  // [K, J, 16]
  Tensor plain;  // [I, J, 16]

  const Tensor& get(VoteRole role) const;  // ConfigError when the table is missing
};

struct RoutingConfig {
  int iterations = 3;
  Tensor beta_a;  // [J], learned
  Tensor beta_u;  // [J], learned
  std::vector<double> lambda_schedule{0.5, 1.0, 2.0};
  double sigma_floor = 1e-6;  // floor applied to the per-dimension variance

  double lambda_at(int iteration) const;
  void validate(int64_t out_types) const;
  static RoutingConfig with_types(int64_t out_types);  // betas initialised to zero
};

// V_ij = M_i * W_ij for every (input type, output type) pair of the role.
VoteTensor compute_votes(const CapsuleGrid& capsules, const TransformationWeights& weights,
                         VoteRole role);

// Mean of votes across the positions of a receptive field, per (i, j) pair.
// Empty fields are a contract violation.
Tensor capsule_pool(const std::vector<Tensor>& field_votes);
VoteTensor capsule_pool(const std::vector<VoteTensor>& field_votes);

struct MStepResult {
  Tensor mu;          // [L, J, 16]
  Tensor sigma;       // [L, J, 16], >= sqrt(sigma_floor)
  Tensor activation;  // [L, J], in [0,1]
};

// Weighted Gaussian statistics per output type. R: [L,I,J], a_in: [L,I],
// votes: [L,I,J,16]. Zero total mass for an output type yields mu = 0, a = 0.
MStepResult m_step(const Tensor& assignments, const Tensor& a_in, const Tensor& votes,
                   const RoutingConfig& cfg, double lambda);

// Posterior assignments from Gaussian log-densities. Rows whose activations
// are all exactly zero fall back to the uniform row.
Tensor e_step(const Tensor& mu, const Tensor& sigma, const Tensor& a_out, const Tensor& votes);

// Alternating m/e steps from uniform assignments; returns (poses, activations).
std::pair<Tensor, Tensor> em_routing(const Tensor& a_in, const Tensor& votes,
                                     const RoutingConfig& cfg);

// D_ij = sum_h (M_j^q - V_ij^k)^2 ; R^v = softmax_j(-D) with max subtraction.
Tensor assignment_from_distance(const Tensor& query_poses, const Tensor& key_votes);

// Attention routing on precomputed (possibly pooled) votes.
struct AttentionVotes {
  Tensor a_video;  // [L, I]
  Tensor v_key;    // [L, I, J, 16]
  Tensor v_value;  // [L, I, J, 16]
  Tensor a_frame;  // [L, K]
  Tensor v_query;  // [L, K, J, 16]
};
std::pair<Tensor, Tensor> attention_route_votes(const AttentionVotes& votes,
                                                const RoutingConfig& cfg);

// Full conditioning step: key/value votes from the video capsules, query votes
// from the frame capsules, query EM routing, distance softmax, final M-step.
CapsuleGrid attention_routing(const CapsuleGrid& video, const CapsuleGrid& frame,
                              const TransformationWeights& weights, const RoutingConfig& cfg);

}  // namespace cvos
