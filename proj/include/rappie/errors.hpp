#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rappie {

// Base for every condition the pipeline can surface. The CLI maps these to
// exit codes: data problems -> 2, backend problems -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : Error {
  using Error::Error;
};

struct BackendError : Error {
  using Error::Error;
};

struct MalformedRecord : DataError {
  std::size_t line;
  MalformedRecord(std::size_t line_no, const std::string& what_arg)
      : DataError("malformed record at line " + std::to_string(line_no) + ": " + what_arg),
        line(line_no) {}
};

struct DuplicateId : DataError {
  std::string id;
  explicit DuplicateId(const std::string& dup, const std::string& context = "")
      : DataError("duplicate id '" + dup + "'" + (context.empty() ? "" : " in " + context)),
        id(dup) {}
};

struct DanglingReference : DataError {
  std::string id;
  explicit DanglingReference(const std::string& ref, const std::string& context = "")
      : DataError("dangling reference '" + ref + "'" + (context.empty() ? "" : " in " + context)),
        id(ref) {}
};

struct BadRatios : DataError {
  using DataError::DataError;
};

struct BackendUnavailable : BackendError {
  using BackendError::BackendError;
};

struct PromptTooLong : BackendError {
  using BackendError::BackendError;
};

struct CacheCorrupt : BackendError {
  std::string key;
  explicit CacheCorrupt(const std::string& cache_key)
      : BackendError("corrupt cache entry '" + cache_key + "'"), key(cache_key) {}
};

struct AllPadding : DataError {
  using DataError::DataError;
};

struct EmptyHistory : DataError {
  using DataError::DataError;
};

struct EmptySet : DataError {
  using DataError::DataError;
};

struct DimensionMismatch : DataError {
  using DataError::DataError;
};

struct EmptyBatch : DataError {
  using DataError::DataError;
};

struct NoEdges : DataError {
  using DataError::DataError;
};

struct NodeSetMismatch : DataError {
  using DataError::DataError;
};

struct MissingArtifact : DataError {
  using DataError::DataError;
};

struct LengthMismatch : DataError {
  using DataError::DataError;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace rappie
