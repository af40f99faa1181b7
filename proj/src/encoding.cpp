#include "rappie/encoding.hpp"

#include <algorithm>
#include <utility>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace {

std::string slot_or_unknown(const std::string& value) {
  std::string t = trim(value);
  return t.empty() ? std::string("unknown") : t;
}

}  // namespace

std::vector<RoleProfile> load_role_profiles(const std::string& dir) {
  std::vector<RoleProfile> roles;
  roles.reserve(kRoleNames.size());
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    const std::string base = dir + "/" + std::string(kRoleSlugs[i]);
    RoleProfile role;
    role.name = std::string(kRoleNames[i]);
    role.description = trim(read_file(base + ".description.txt"));
    role.example = trim(read_file(base + ".example.txt"));
    role.enriched = trim(read_file(base + ".enriched.txt"));
    if (role.description.empty() || role.example.empty() || role.enriched.empty()) {
      throw DataError("role asset for '" + role.name + "' is empty");
    }
    roles.push_back(std::move(role));
  }
  return roles;
}

std::string role_enrichment_prompt(const RoleProfile& role) {
  return "The description of the propagation role is " + role.description + ", with an example " +
         role.example + ". Explain the role " + role.name +
         " based on the above description and example.";
}

std::string role_rewriting_prompt(const std::string& enriched) {
  return "Please repeat the following content: " + enriched;
}

std::string attribute_prompt(const UserProfile& user) {
  return "User individual information=[gender:" + slot_or_unknown(user.gender) +
         ", region:" + slot_or_unknown(user.region) + ", tag:" + slot_or_unknown(user.tag) + "]";
}

std::string feedback_comment_text(const SimulatedFeedback& feedback) {
  if (feedback.emotion) {
    return emotion_name(*feedback.emotion) + " " + feedback.comment;
  }
  return feedback.comment;
}

Eigen::MatrixXd build_role_matrix(EncoderBackend& encoder, std::vector<RoleProfile>& roles,
                                  ChatBackend* enricher, std::uint64_t seed) {
  if (roles.empty()) throw EmptySet("role profiles");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(roles.size()), encoder.dim());
  for (std::size_t i = 0; i < roles.size(); ++i) {
    RoleProfile& role = roles[i];
    if (enricher != nullptr) {
      role.enriched = trim(chat_generate(*enricher, role_enrichment_prompt(role),
                                         mix64(seed, fnv1a64(role.name))));
      if (role.enriched.empty()) {
        throw BackendError("enrichment reply for role '" + role.name + "' is empty");
      }
    }
    EmbeddingMatrix m = encode_text(encoder, role_rewriting_prompt(role.enriched));
    role.embedding = pool_mean(m);
    out.row(static_cast<Eigen::Index>(i)) = role.embedding.transpose();
  }
  return out;
}

UserEncoderParams UserEncoderParams::init(Eigen::Index d1, int heads, std::uint64_t seed) {
  if (d1 <= 0) throw DimensionMismatch("user encoder dimension must be positive");
  Rng rng(seed);
  UserEncoderParams p;
  p.comment_stack = nn::SelfAttentionStack("user.comments", heads, d1, rng);
  p.fuse_w = nn::Param("user.fuse.w", nn::glorot(d1, 2 * d1, rng));
  p.fuse_b = nn::Param("user.fuse.b", nn::Mat::Zero(d1, 1));
  p.role_attention = nn::MultiHeadAttention("user.roles", heads, d1, rng);
  p.role_w = nn::Param("user.role.w", nn::glorot(d1, 2 * d1, rng));
  p.role_b = nn::Param("user.role.b", nn::Mat::Zero(d1, 1));
  return p;
}

std::vector<nn::Param*> UserEncoderParams::params() {
  std::vector<nn::Param*> out = comment_stack.params();
  out.push_back(&fuse_w);
  out.push_back(&fuse_b);
  for (nn::Param* p : role_attention.params()) out.push_back(p);
  out.push_back(&role_w);
  out.push_back(&role_b);
  return out;
}

std::map<std::string, UserContext> build_user_contexts(const Corpus& corpus,
                                                       const FeedbackLedger& ledger,
                                                       EncoderBackend& encoder) {
  // Comments a user left, in the order the posts ranked in their top-k list.
  std::map<std::string, std::vector<const SimulatedFeedback*>> by_reader;
  for (const SimulatedFeedback& fb : ledger.entries) {
    if (!corpus.users.count(fb.reader_id)) {
      throw DanglingReference(fb.reader_id, "feedback ledger reader");
    }
    if (fb.behavior == Behavior::RepostWithComment) by_reader[fb.reader_id].push_back(&fb);
  }
  for (auto& [reader, items] : by_reader) {
    std::sort(items.begin(), items.end(), [](const SimulatedFeedback* a,
                                             const SimulatedFeedback* b) {
      return std::tie(a->rank, a->post_id) < std::tie(b->rank, b->post_id);
    });
  }

  std::map<std::string, UserContext> contexts;
  for (const auto& [user_id, profile] : corpus.users) {
    UserContext ctx;
    ctx.attr_vec = pool_mean(encode_text(encoder, attribute_prompt(profile)));
    auto it = by_reader.find(user_id);
    if (it != by_reader.end()) {
      ctx.comment_mats.reserve(it->second.size());
      for (const SimulatedFeedback* fb : it->second) {
        EmbeddingMatrix m = encode_text(encoder, feedback_comment_text(*fb));
        ctx.comment_mats.push_back(m.values.topRows(m.valid_rows));
      }
    }
    contexts.emplace(user_id, std::move(ctx));
  }
  return contexts;
}

nn::Tape::Var comment_embedding(nn::Tape& t, UserEncoderParams& params,
                                const std::vector<Eigen::MatrixXd>& comment_mats) {
  if (comment_mats.empty()) {
    return t.constant(nn::Mat::Zero(1, params.dim()));
  }
  std::vector<nn::Tape::Var> vars;
  vars.reserve(comment_mats.size());
  for (const Eigen::MatrixXd& m : comment_mats) vars.push_back(t.constant(m));
  return params.comment_stack.compress(t, vars);
}

nn::Tape::Var fuse_author_reader(nn::Tape& t, UserEncoderParams& params, nn::Tape::Var attr_row,
                                 nn::Tape::Var comment_row) {
  nn::Tape::Var cat = t.hstack({attr_row, comment_row});
  nn::Tape::Var prod = t.matmul(cat, t.transpose(t.leaf(params.fuse_w)));
  return t.add(prod, t.transpose(t.leaf(params.fuse_b)));
}

nn::Tape::Var attach_roles(nn::Tape& t, UserEncoderParams& params, nn::Tape::Var fused_row,
                           nn::Tape::Var role_matrix) {
  nn::Tape::Var matched = params.role_attention.forward(t, fused_row, role_matrix, role_matrix);
  nn::Tape::Var cat = t.hstack({fused_row, matched});
  nn::Tape::Var prod = t.matmul(cat, t.transpose(t.leaf(params.role_w)));
  return t.add(prod, t.transpose(t.leaf(params.role_b)));
}

nn::Tape::Var user_embedding(nn::Tape& t, UserEncoderParams& params, const UserContext& ctx,
                             nn::Tape::Var role_matrix, bool use_roles) {
  if (ctx.attr_vec.size() != params.dim()) {
    throw DimensionMismatch("attribute vector size does not match encoder dimension");
  }
  nn::Tape::Var attr_row = t.constant(ctx.attr_vec.transpose());
  nn::Tape::Var comment_row = comment_embedding(t, params, ctx.comment_mats);
  nn::Tape::Var fused = fuse_author_reader(t, params, attr_row, comment_row);
  if (!use_roles) return fused;
  return attach_roles(t, params, fused, role_matrix);
}

Eigen::MatrixXd all_user_embeddings(UserEncoderParams& params,
                                    const std::map<std::string, UserContext>& contexts,
                                    const Eigen::MatrixXd& role_matrix, bool use_roles) {
  if (contexts.empty()) throw EmptySet("user contexts");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(contexts.size()), params.dim());
  Eigen::Index row = 0;
  for (const auto& [user_id, ctx] : contexts) {
    nn::Tape t;
    nn::Tape::Var roles = t.constant(role_matrix);
    nn::Tape::Var e = user_embedding(t, params, ctx, roles, use_roles);
    out.row(row++) = t.val(e);
  }
  return out;
}

}  // namespace rappie
