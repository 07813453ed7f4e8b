#pragma once

// MCES v1 embedding-stream container and the seeded synthetic generator.
//
// Layout (all little-endian):
//   0  magic     "MCES"
//   4  version   u16 (= 1)
//   6  frames    u32 (T)
//   10 tokens    u16 (N)
//   12 dims      u16 (D)
//   14 flags     u16 (bit 0: question vector present)
//   16 reserved  4 bytes, zero
//   20 question  D x f32, when flagged
//      frames    T x N x D x f32, frame-major, row-major within a frame

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "vidmem/tensor.hpp"

namespace vidmem {

inline constexpr std::size_t kHeaderBytes = 20;
inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::uint16_t kFlagQuestion = 1;

struct StreamHeader {
  std::uint16_t version = kStreamVersion;
  std::uint32_t frame_count = 0;
  std::uint16_t tokens_per_frame = 0;
  std::uint16_t dims = 0;
  std::uint16_t flags = 0;

  bool has_question() const noexcept { return (flags & kFlagQuestion) != 0; }
  FrameShape shape() const noexcept { return {tokens_per_frame, dims}; }
  std::uint64_t payload_bytes() const noexcept;

  static StreamHeader make(std::uint64_t frames, FrameShape shape, bool with_question);
  bool operator==(const StreamHeader&) const = default;
};

struct EmbeddingStream {
  StreamHeader header;
  std::vector<TokenMatrix> frames;
  std::optional<std::vector<double>> question;
};

/// Incremental writer; values are stored as 32-bit floats.
class StreamWriter {
 public:
  StreamWriter(std::ostream& sink, const StreamHeader& header,
               std::optional<std::span<const double>> question);

  void write_frame(const TokenMatrix& frame);
  /// Verifies the frame count promised by the header. Returns bytes written.
  std::uint64_t finish();
  std::uint64_t bytes_written() const noexcept { return bytes_; }

 private:
  void put(std::span<const double> values);

  std::ostream& sink_;
  StreamHeader header_;
  std::uint64_t frames_written_ = 0;
  std::uint64_t bytes_ = 0;
};

std::uint64_t write_stream(std::ostream& sink, const StreamHeader& header,
                           std::span<const TokenMatrix> frames,
                           const std::optional<std::vector<double>>& question);
std::uint64_t write_stream_file(const std::filesystem::path& path, const StreamHeader& header,
                                std::span<const TokenMatrix> frames,
                                const std::optional<std::vector<double>>& question);

/// Frame-at-a-time reader; the question (if any) is parsed with the header.
class StreamReader {
 public:
  explicit StreamReader(std::istream& source);
  explicit StreamReader(const std::filesystem::path& path);
  ~StreamReader();
  StreamReader(StreamReader&&) noexcept;

  const StreamHeader& header() const noexcept { return header_; }
  const std::optional<std::vector<double>>& question() const noexcept { return question_; }
  std::uint64_t frames_read() const noexcept { return next_frame_; }

  /// Next frame, or nullopt once T frames have been read.
  std::optional<TokenMatrix> next();

 private:
  void read_preamble();

  std::unique_ptr<std::istream> owned_;
  std::istream* source_;
  StreamHeader header_;
  std::optional<std::vector<double>> question_;
  std::uint64_t next_frame_ = 0;
  std::vector<float> scratch_;
};

EmbeddingStream read_stream(std::istream& source);
EmbeddingStream read_stream_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic streams

/// Frames [start, end) whose descriptors sit at cosine `relevance` to q.
struct PlantedSegment {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  double relevance = 0.0;
  bool operator==(const PlantedSegment&) const = default;
};

struct SyntheticSpec {
  std::uint64_t frames = 0;  // T
  std::size_t tokens = 0;    // N
  std::size_t dims = 0;      // D
  std::vector<PlantedSegment> segments;
  double noise_scale = 0.1;
  std::uint64_t seed = 0;
  // AR(1) coefficient on the background direction between consecutive frames.
  double temporal_correlation = 0.5;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

/// Standard normal draws from mt19937_64 via Box-Muller, so streams do not
/// depend on the standard library's distribution implementation.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}
  double operator()();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Streaming generator; produces frame t on the t-th call to next().
class SyntheticSource {
 public:
  explicit SyntheticSource(SyntheticSpec spec);

  const SyntheticSpec& spec() const noexcept { return spec_; }
  FrameShape shape() const noexcept { return {spec_.tokens, spec_.dims}; }
  const std::vector<double>& question() const noexcept { return question_; }
  std::optional<TokenMatrix> next();

 private:
  double relevance_at(std::uint64_t t);
  std::vector<double> orthogonal_unit();

  SyntheticSpec spec_;
  GaussianSource gauss_;
  std::vector<double> question_;
  std::vector<double> direction_;
  std::uint64_t next_frame_ = 0;
  std::size_t segment_cursor_ = 0;
};

struct SyntheticStream {
  std::vector<TokenMatrix> frames;
  std::vector<double> question;
};

SyntheticStream generate_synthetic(const SyntheticSpec& spec);

/// One segment of `length` frames per `block` frames, at a seeded offset
/// inside each block.
std::vector<PlantedSegment> planted_every(std::uint64_t frames, std::uint64_t block,
                                          std::uint64_t length, double relevance,
                                          std::uint64_t seed);

}  // namespace vidmem
