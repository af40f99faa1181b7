#pragma once

#include <memory>
#include <string>

#include "rappie/gateway.hpp"

namespace rappie {

// Content-addressed on-disk cache. Keys hash (kind, backend name, seed,
// payload text); entries carry an integrity digest and are written
// atomically. A corrupt entry surfaces as CacheCorrupt and is evicted, so
// the next identical call recomputes and repairs it.
class CachedChatBackend : public ChatBackend {
 public:
  CachedChatBackend(std::shared_ptr<ChatBackend> inner, std::string cache_dir);

  std::string name() const override { return inner_->name(); }
  std::size_t max_prompt_tokens() const override { return inner_->max_prompt_tokens(); }
  DecodingParams decoding() const override { return inner_->decoding(); }
  std::string generate(const std::string& prompt, std::uint64_t seed) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::string dir_;
};

class CachedEncoderBackend : public EncoderBackend {
 public:
  CachedEncoderBackend(std::shared_ptr<EncoderBackend> inner, std::string cache_dir);

  std::string name() const override { return inner_->name(); }
  Eigen::Index dim() const override { return inner_->dim(); }
  Eigen::Index max_rows() const override { return inner_->max_rows(); }
  EmbeddingMatrix encode(const std::string& text) override;

 private:
  std::shared_ptr<EncoderBackend> inner_;
  std::string dir_;
};

std::shared_ptr<ChatBackend> with_cache(std::shared_ptr<ChatBackend> backend,
                                        const std::string& cache_dir);
std::shared_ptr<EncoderBackend> with_cache(std::shared_ptr<EncoderBackend> backend,
                                           const std::string& cache_dir);

}  // namespace rappie
