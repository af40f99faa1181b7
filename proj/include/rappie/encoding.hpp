#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "rappie/agents.hpp"
#include "rappie/attention.hpp"
#include "rappie/corpus.hpp"
#include "rappie/gateway.hpp"
#include "rappie/nn.hpp"

namespace rappie {

inline constexpr std::array<std::string_view, 4> kRoleNames = {
    "Emotional person", "Gatekeeper", "Onlooker", "Rationalist"};
inline constexpr std::array<std::string_view, 4> kRoleSlugs = {"emotional_person", "gatekeeper",
                                                               "onlooker", "rationalist"};

struct RoleProfile {
  std::string name;
  std::string description;
  std::string example;
  std::string enriched;  // offline enrichment text shipped with the repo
  Eigen::VectorXd embedding;
};

// Reads <slug>.description.txt / .example.txt / .enriched.txt for the four
// roles in fixed row order.
std::vector<RoleProfile> load_role_profiles(const std::string& dir);

std::string role_enrichment_prompt(const RoleProfile& role);
std::string role_rewriting_prompt(const std::string& enriched);
std::string attribute_prompt(const UserProfile& user);

// Text that gets encoded for one piece of feedback: the emitted emotion
// word followed by the comment.
std::string feedback_comment_text(const SimulatedFeedback& feedback);

// Fills each profile's embedding (mean-pooled encoding of the rewriting
// prompt) and returns the 4 x d1 role matrix. When a chat backend is given,
// the enrichment prompt is sent through it and the reply replaces the
// shipped enrichment text.
Eigen::MatrixXd build_role_matrix(EncoderBackend& encoder, std::vector<RoleProfile>& roles,
                                  ChatBackend* enricher = nullptr, std::uint64_t seed = 0);

// Trainable blocks that turn frozen encoder outputs into role-aware user
// embeddings.
struct UserEncoderParams {
  nn::SelfAttentionStack comment_stack;  // compresses a user's comments
  nn::Param fuse_w, fuse_b;              // d1 x 2d1, d1 x 1
  nn::MultiHeadAttention role_attention;
  nn::Param role_w, role_b;  // d1 x 2d1, d1 x 1

  static UserEncoderParams init(Eigen::Index d1, int heads, std::uint64_t seed);
  std::vector<nn::Param*> params();
  Eigen::Index dim() const { return fuse_w.value.rows(); }
};

// Frozen per-user encoder material.
struct UserContext {
  Eigen::VectorXd attr_vec;                   // pooled attribute-prompt encoding, d1
  std::vector<Eigen::MatrixXd> comment_mats;  // real token rows x d1, top-k rank order
};

// Encodes attribute prompts and simulated comments for every user.
std::map<std::string, UserContext> build_user_contexts(const Corpus& corpus,
                                                       const FeedbackLedger& ledger,
                                                       EncoderBackend& encoder);

// Graph builders. Vectors flow as 1 x d1 rows.
nn::Tape::Var comment_embedding(nn::Tape& t, UserEncoderParams& params,
                                const std::vector<Eigen::MatrixXd>& comment_mats);
nn::Tape::Var fuse_author_reader(nn::Tape& t, UserEncoderParams& params, nn::Tape::Var attr_row,
                                 nn::Tape::Var comment_row);
nn::Tape::Var attach_roles(nn::Tape& t, UserEncoderParams& params, nn::Tape::Var fused_row,
                           nn::Tape::Var role_matrix);

// Full per-user path: comments -> fuse with attributes -> role attachment
// (skippable for the role-free ablation).
nn::Tape::Var user_embedding(nn::Tape& t, UserEncoderParams& params, const UserContext& ctx,
                             nn::Tape::Var role_matrix, bool use_roles);

// Forward-only convenience: role-aware embeddings for every user, row order
// = sorted user ids.
Eigen::MatrixXd all_user_embeddings(UserEncoderParams& params,
                                    const std::map<std::string, UserContext>& contexts,
                                    const Eigen::MatrixXd& role_matrix, bool use_roles);

}  // namespace rappie
