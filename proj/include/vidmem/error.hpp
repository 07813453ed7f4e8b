#pragma once

#include <stdexcept>
#include <string>

namespace vidmem {

enum class Errc {
  DimensionMismatch,
  ZeroNorm,
  ShapeMismatch,
  NonFiniteValue,
  IoFailure,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  InvalidSpec,
  BufferNotEmpty,
  SeedTooLarge,
  PositionOutOfRange,
  MemoryTooLongForTable,
  InvalidTarget,
  EmptyInput,
  MissingQuestion,
  InvalidLambda,
  NotFlushed,
  StaleTimestamp,
  GridTooLarge,
  InvalidConfig,
};

const char* to_string(Errc code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace vidmem
