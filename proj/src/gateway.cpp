#include "rappie/gateway.hpp"

#include <cmath>
#include <sstream>

#include "rappie/errors.hpp"
#include "rappie/text.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace {

constexpr std::string_view kPostMarker = "Now you read the following post: ";

std::string extract_target_post(const std::string& prompt) {
  auto pos = prompt.find(kPostMarker);
  if (pos == std::string::npos) return "";
  pos += kPostMarker.size();
  auto end = prompt.find('\n', pos);
  if (end == std::string::npos) end = prompt.size();
  return prompt.substr(pos, end - pos);
}

}  // namespace

std::string chat_generate(ChatBackend& backend, const std::string& prompt, std::uint64_t seed) {
  if (prompt.empty()) throw EmptySet("empty prompt");
  if (token_count(prompt) > backend.max_prompt_tokens())
    throw PromptTooLong("prompt exceeds " + std::to_string(backend.max_prompt_tokens()) +
                        " tokens for backend " + backend.name());
  return backend.generate(prompt, seed);
}

EmbeddingMatrix encode_text(EncoderBackend& backend, const std::string& text) {
  if (text.empty()) throw EmptySet("empty text");
  if (token_count(text) == 0) throw EmptySet("text tokenizes to nothing");
  EmbeddingMatrix m = backend.encode(text);
  if (m.values.cols() != backend.dim() || m.values.rows() != backend.max_rows())
    throw DimensionMismatch("encoder returned " + std::to_string(m.values.rows()) + "x" +
                            std::to_string(m.values.cols()) + ", expected " +
                            std::to_string(backend.max_rows()) + "x" +
                            std::to_string(backend.dim()));
  if (m.valid_rows < 1 || m.valid_rows > m.values.rows())
    throw DimensionMismatch("encoder returned invalid row count");
  for (Eigen::Index r = m.valid_rows; r < m.values.rows(); ++r)
    if (!m.values.row(r).isZero(0.0))
      throw DimensionMismatch("padding rows must be exactly zero");
  return m;
}

Eigen::VectorXd pool_mean(const EmbeddingMatrix& m) {
  if (m.valid_rows < 1) throw AllPadding("no non-padding rows to pool");
  return m.values.topRows(m.valid_rows).colwise().mean().transpose();
}

MockChatBackend::MockChatBackend(Options opts) : opts_(opts) {}

std::string MockChatBackend::generate(const std::string& prompt, std::uint64_t seed) {
  count_call();
  Rng rng(mix64(fnv1a64(prompt), mix64(seed, opts_.salt)));

  std::optional<Emotion> label;
  if (auto it = label_hints_.find(extract_target_post(prompt)); it != label_hints_.end())
    label = it->second;

  MockChatRule rule = default_rule_;
  if (label) {
    if (auto it = rules_.find(*label); it != rules_.end()) rule = it->second;
  }

  double u = rng.uniform();
  std::string behavior;
  bool with_comment = false;
  if (u < rule.p_repost) {
    behavior = "repost";
  } else if (u < rule.p_repost + rule.p_repost_with_comment) {
    behavior = "repost with comment";
    with_comment = true;
  } else {
    behavior = "no repost";
  }

  Emotion emitted;
  if (label && rng.uniform() < rule.emotion_fidelity) {
    emitted = *label;
  } else {
    std::size_t pick = static_cast<std::size_t>(rng.below(label ? 6 : 7));
    if (label && pick >= static_cast<std::size_t>(*label)) ++pick;
    emitted = kEmotions[pick % kEmotionCount];
  }
  std::string emo = emotion_name(emitted);
  std::string emo_low = lowercase_ascii(emo);

  std::ostringstream out;
  out << "Behavior: " << behavior << '\n';
  out << "Emotion: " << emo << '\n';
  out << "Comment: ";
  if (with_comment)
    out << "reading this leaves me with " << emo_low << " feelings, so much " << emo_low
        << " here";
  return out.str();
}

MockEncoderBackend::MockEncoderBackend(Eigen::Index dim, Eigen::Index max_rows, std::uint64_t seed)
    : dim_(dim), max_rows_(max_rows), seed_(seed) {}

std::string MockEncoderBackend::name() const {
  std::ostringstream s;
  s << "mock-encoder(d=" << dim_ << ",n=" << max_rows_ << ",seed=" << seed_ << ")";
  return s.str();
}

EmbeddingMatrix MockEncoderBackend::encode(const std::string& text) {
  count_call();
  auto tokens = tokenize(text);
  EmbeddingMatrix m;
  m.values = Eigen::MatrixXd::Zero(max_rows_, dim_);
  m.valid_rows = std::min<Eigen::Index>(1 + static_cast<Eigen::Index>(tokens.size()), max_rows_);
  double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (Eigen::Index r = 0; r < m.valid_rows; ++r) {
    const std::string& tok = r == 0 ? std::string("<cls>") : tokens[static_cast<std::size_t>(r - 1)];
    Rng rng(mix64(fnv1a64(tok), seed_));
    for (Eigen::Index c = 0; c < dim_; ++c) m.values(r, c) = rng.symmetric() * scale;
  }
  return m;
}

}  // namespace rappie
