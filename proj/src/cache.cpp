#include "rappie/cache.hpp"

#include <cstring>
#include <filesystem>
#include <sstream>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace {

namespace fs = std::filesystem;

std::string cache_key(std::string_view kind, const std::string& backend_name, std::uint64_t seed,
                      std::string_view payload) {
  std::ostringstream keysrc;
  keysrc << kind << '\0' << backend_name << '\0' << seed << '\0' << payload;
  return sha256_hex(keysrc.str());
}

fs::path entry_path(const std::string& dir, const std::string& key) {
  return fs::path(dir) / (key + ".entry");
}

// Entry layout: "RAPPIECACHE1\n" + 64-hex payload digest + "\n" + payload.
std::optional<std::string> read_entry(const std::string& dir, const std::string& key) {
  fs::path path = entry_path(dir, key);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  std::string blob;
  try {
    blob = read_file(path.string());
  } catch (const Error&) {
    fs::remove(path, ec);
    throw CacheCorrupt(key);
  }
  constexpr std::string_view magic = "RAPPIECACHE1\n";
  if (blob.size() < magic.size() + 65 || blob.compare(0, magic.size(), magic) != 0) {
    fs::remove(path, ec);
    throw CacheCorrupt(key);
  }
  std::string digest = blob.substr(magic.size(), 64);
  if (blob[magic.size() + 64] != '\n') {
    fs::remove(path, ec);
    throw CacheCorrupt(key);
  }
  std::string payload = blob.substr(magic.size() + 65);
  if (sha256_hex(payload) != digest) {
    fs::remove(path, ec);
    throw CacheCorrupt(key);
  }
  return payload;
}

void write_entry(const std::string& dir, const std::string& key, std::string_view payload) {
  std::string blob = "RAPPIECACHE1\n" + sha256_hex(payload) + "\n" + std::string(payload);
  write_file_atomic(entry_path(dir, key).string(), blob);
}

std::string serialize_matrix(const EmbeddingMatrix& m) {
  std::string out;
  std::uint64_t header[3] = {static_cast<std::uint64_t>(m.values.rows()),
                             static_cast<std::uint64_t>(m.values.cols()),
                             static_cast<std::uint64_t>(m.valid_rows)};
  out.append(reinterpret_cast<const char*>(header), sizeof(header));
  for (Eigen::Index r = 0; r < m.values.rows(); ++r)
    out.append(reinterpret_cast<const char*>(m.values.row(r).eval().data()),
               sizeof(double) * static_cast<std::size_t>(m.values.cols()));
  return out;
}

EmbeddingMatrix deserialize_matrix(const std::string& payload, const std::string& key) {
  std::uint64_t header[3];
  if (payload.size() < sizeof(header)) throw CacheCorrupt(key);
  std::memcpy(header, payload.data(), sizeof(header));
  Eigen::Index rows = static_cast<Eigen::Index>(header[0]);
  Eigen::Index cols = static_cast<Eigen::Index>(header[1]);
  if (payload.size() != sizeof(header) + sizeof(double) * static_cast<std::size_t>(rows * cols))
    throw CacheCorrupt(key);
  EmbeddingMatrix m;
  m.values.resize(rows, cols);
  m.valid_rows = static_cast<Eigen::Index>(header[2]);
  const char* p = payload.data() + sizeof(header);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v;
      std::memcpy(&v, p, sizeof(double));
      m.values(r, c) = v;
      p += sizeof(double);
    }
  }
  return m;
}

}  // namespace

CachedChatBackend::CachedChatBackend(std::shared_ptr<ChatBackend> inner, std::string cache_dir)
    : inner_(std::move(inner)), dir_(std::move(cache_dir)) {
  fs::create_directories(dir_);
}

std::string CachedChatBackend::generate(const std::string& prompt, std::uint64_t seed) {
  std::string key = cache_key("chat", inner_->name(), seed, prompt);
  if (auto hit = read_entry(dir_, key)) return *hit;
  std::string out = inner_->generate(prompt, seed);
  write_entry(dir_, key, out);
  return out;
}

CachedEncoderBackend::CachedEncoderBackend(std::shared_ptr<EncoderBackend> inner,
                                           std::string cache_dir)
    : inner_(std::move(inner)), dir_(std::move(cache_dir)) {
  fs::create_directories(dir_);
}

EmbeddingMatrix CachedEncoderBackend::encode(const std::string& text) {
  std::string key = cache_key("encode", inner_->name(), 0, text);
  if (auto hit = read_entry(dir_, key)) return deserialize_matrix(*hit, key);
  EmbeddingMatrix m = inner_->encode(text);
  write_entry(dir_, key, serialize_matrix(m));
  return m;
}

std::shared_ptr<ChatBackend> with_cache(std::shared_ptr<ChatBackend> backend,
                                        const std::string& cache_dir) {
  return std::make_shared<CachedChatBackend>(std::move(backend), cache_dir);
}

std::shared_ptr<EncoderBackend> with_cache(std::shared_ptr<EncoderBackend> backend,
                                           const std::string& cache_dir) {
  return std::make_shared<CachedEncoderBackend>(std::move(backend), cache_dir);
}

}  // namespace rappie
