#include "vidmem/streamio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "vidmem/error.hpp"

namespace vidmem {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'C', 'E', 'S'};

void put_u16(unsigned char* p, std::uint16_t v) {
  p[0] = static_cast<unsigned char>(v & 0xff);
  p[1] = static_cast<unsigned char>(v >> 8);
}

void put_u32(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

void encode_floats(std::span<const double> values, std::vector<unsigned char>& out) {
  out.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    put_u32(out.data() + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  }
}

// Reads exactly `count` floats or throws Truncated.
void read_floats(std::istream& in, std::size_t count, std::vector<float>& out,
                 const std::string& what) {
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw Error(Errc::Truncated, what + ": expected " + std::to_string(raw.size()) +
                                     " bytes, got " + std::to_string(in.gcount()));
  }
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
  }
}

float to_f32(double x) { return static_cast<float>(x); }

}  // namespace

std::uint64_t StreamHeader::payload_bytes() const noexcept {
  const std::uint64_t q = has_question() ? dims : 0;
  return 4 * (q + std::uint64_t{frame_count} * tokens_per_frame * dims);
}

StreamHeader StreamHeader::make(std::uint64_t frames, FrameShape shape, bool with_question) {
  if (frames == 0 || frames > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::ShapeMismatch, "frame count must be in [1, 2^32)");
  }
  if (shape.tokens == 0 || shape.tokens > 0xffff || shape.dims == 0 || shape.dims > 0xffff) {
    throw Error(Errc::ShapeMismatch, "N and D must be in [1, 65535]");
  }
  StreamHeader h;
  h.frame_count = static_cast<std::uint32_t>(frames);
  h.tokens_per_frame = static_cast<std::uint16_t>(shape.tokens);
  h.dims = static_cast<std::uint16_t>(shape.dims);
  h.flags = with_question ? kFlagQuestion : 0;
  return h;
}

// ---------------------------------------------------------------------------

StreamWriter::StreamWriter(std::ostream& sink, const StreamHeader& header,
                           std::optional<std::span<const double>> question)
    : sink_(sink), header_(header) {
  if (header.version != kStreamVersion) {
    throw Error(Errc::UnsupportedVersion, "writer only emits version 1");
  }
  if (header.frame_count == 0 || header.tokens_per_frame == 0 || header.dims == 0) {
    throw Error(Errc::ShapeMismatch, "header promises an empty stream");
  }
  if (header.has_question() != question.has_value()) {
    throw Error(Errc::ShapeMismatch, "question presence does not match header flag");
  }

  std::array<unsigned char, kHeaderBytes> raw{};
  std::copy(kMagic.begin(), kMagic.end(), raw.begin());
  put_u16(raw.data() + 4, header.version);
  put_u32(raw.data() + 6, header.frame_count);
  put_u16(raw.data() + 10, header.tokens_per_frame);
  put_u16(raw.data() + 12, header.dims);
  put_u16(raw.data() + 14, header.flags);
  sink_.write(reinterpret_cast<const char*>(raw.data()), raw.size());
  bytes_ += raw.size();

  if (question) {
    if (question->size() != header.dims) {
      throw Error(Errc::ShapeMismatch, "question has " + std::to_string(question->size()) +
                                           " dims, header says " + std::to_string(header.dims));
    }
    put(*question);
  }
  if (!sink_) throw Error(Errc::IoFailure, "write failed");
}

void StreamWriter::put(std::span<const double> values) {
  std::vector<unsigned char> raw;
  encode_floats(values, raw);
  sink_.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  bytes_ += raw.size();
}

void StreamWriter::write_frame(const TokenMatrix& frame) {
  if (frame.shape() != header_.shape()) {
    throw Error(Errc::ShapeMismatch, "frame " + std::to_string(frames_written_) +
                                         " does not match header N x D");
  }
  if (frames_written_ >= header_.frame_count) {
    throw Error(Errc::ShapeMismatch, "more frames than the header promises");
  }
  put(frame.values());
  ++frames_written_;
  if (!sink_) throw Error(Errc::IoFailure, "write failed");
}

std::uint64_t StreamWriter::finish() {
  if (frames_written_ != header_.frame_count) {
    throw Error(Errc::ShapeMismatch, "wrote " + std::to_string(frames_written_) + " of " +
                                         std::to_string(header_.frame_count) + " frames");
  }
  sink_.flush();
  if (!sink_) throw Error(Errc::IoFailure, "flush failed");
  return bytes_;
}

std::uint64_t write_stream(std::ostream& sink, const StreamHeader& header,
                           std::span<const TokenMatrix> frames,
                           const std::optional<std::vector<double>>& question) {
  if (frames.size() != header.frame_count) {
    throw Error(Errc::ShapeMismatch, "header frame count does not match frames");
  }
  std::optional<std::span<const double>> q;
  if (question) q = std::span<const double>(*question);
  StreamWriter writer(sink, header, q);
  for (const TokenMatrix& f : frames) writer.write_frame(f);
  return writer.finish();
}

std::uint64_t write_stream_file(const std::filesystem::path& path, const StreamHeader& header,
                                std::span<const TokenMatrix> frames,
                                const std::optional<std::vector<double>>& question) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
  return write_stream(out, header, frames, question);
}

// ---------------------------------------------------------------------------

StreamReader::StreamReader(std::istream& source) : source_(&source) { read_preamble(); }

StreamReader::StreamReader(const std::filesystem::path& path)
    : owned_(std::make_unique<std::ifstream>(path, std::ios::binary)), source_(owned_.get()) {
  if (!*owned_) throw Error(Errc::IoFailure, "cannot open " + path.string());
  read_preamble();
}

StreamReader::~StreamReader() = default;
StreamReader::StreamReader(StreamReader&&) noexcept = default;

void StreamReader::read_preamble() {
  std::array<unsigned char, kHeaderBytes> raw{};
  source_->read(reinterpret_cast<char*>(raw.data()), raw.size());
  const auto got = static_cast<std::size_t>(source_->gcount());
  if (got >= 4 && !std::equal(kMagic.begin(), kMagic.end(), raw.begin())) {
    throw Error(Errc::BadMagic, "not an MCES stream");
  }
  if (got < raw.size()) throw Error(Errc::Truncated, "header shorter than 20 bytes");

  header_.version = get_u16(raw.data() + 4);
  header_.frame_count = get_u32(raw.data() + 6);
  header_.tokens_per_frame = get_u16(raw.data() + 10);
  header_.dims = get_u16(raw.data() + 12);
  header_.flags = get_u16(raw.data() + 14);

  if (header_.version != kStreamVersion) {
    throw Error(Errc::UnsupportedVersion, "version " + std::to_string(header_.version));
  }
  if ((header_.flags & ~kFlagQuestion) != 0 ||
      std::any_of(raw.begin() + 16, raw.end(), [](unsigned char c) { return c != 0; })) {
    throw Error(Errc::UnsupportedVersion, "unknown flags or nonzero reserved bytes");
  }
  if (header_.frame_count == 0 || header_.tokens_per_frame == 0 || header_.dims == 0) {
    throw Error(Errc::ShapeMismatch, "header declares an empty dimension");
  }

  if (header_.has_question()) {
    read_floats(*source_, header_.dims, scratch_, "question vector");
    std::vector<double> q(scratch_.begin(), scratch_.end());
    for (std::size_t d = 0; d < q.size(); ++d) {
      if (!std::isfinite(q[d])) {
        throw Error(Errc::NonFiniteValue, "question vector, dim " + std::to_string(d));
      }
    }
    question_ = std::move(q);
  }
}

std::optional<TokenMatrix> StreamReader::next() {
  if (next_frame_ >= header_.frame_count) return std::nullopt;
  const std::size_t n = header_.tokens_per_frame;
  const std::size_t d = header_.dims;
  read_floats(*source_, n * d, scratch_, "frame " + std::to_string(next_frame_));
  for (std::size_t i = 0; i < scratch_.size(); ++i) {
    if (!std::isfinite(scratch_[i])) {
      throw Error(Errc::NonFiniteValue, "frame " + std::to_string(next_frame_) + ", token " +
                                            std::to_string(i / d));
    }
  }
  ++next_frame_;
  return TokenMatrix(n, d, std::span<const float>(scratch_));
}

EmbeddingStream read_stream(std::istream& source) {
  StreamReader reader(source);
  EmbeddingStream out;
  out.header = reader.header();
  out.question = reader.question();
  out.frames.reserve(out.header.frame_count);
  while (auto f = reader.next()) out.frames.push_back(std::move(*f));
  return out;
}

EmbeddingStream read_stream_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return read_stream(in);
}

// ---------------------------------------------------------------------------

double GaussianSource::operator()() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * kScale;  // (0, 1]
  const double u2 = static_cast<double>(engine_() >> 11) * kScale;          // [0, 1)
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  return r * std::cos(theta);
}

void SyntheticSpec::validate() const {
  if (frames == 0) throw Error(Errc::InvalidSpec, "T must be >= 1");
  if (tokens == 0) throw Error(Errc::InvalidSpec, "N must be >= 1");
  if (dims < 2) throw Error(Errc::InvalidSpec, "D must be >= 2 to hold an orthogonal background");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw Error(Errc::InvalidSpec, "noise_scale must be finite and >= 0");
  }
  if (!(temporal_correlation >= 0.0 && temporal_correlation < 1.0)) {
    throw Error(Errc::InvalidSpec, "temporal_correlation must be in [0, 1)");
  }
  std::vector<PlantedSegment> sorted = segments;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& s = sorted[i];
    if (!(s.start < s.end) || s.end > frames) {
      throw Error(Errc::InvalidSpec, "segment [" + std::to_string(s.start) + ", " +
                                         std::to_string(s.end) + ") outside [0, T)");
    }
    if (!(s.relevance >= 0.0 && s.relevance <= 1.0)) {
      throw Error(Errc::InvalidSpec, "segment relevance must be in [0, 1]");
    }
    if (i > 0 && sorted[i - 1].end > s.start) throw Error(Errc::InvalidSpec, "segments overlap");
  }
}

SyntheticSource::SyntheticSource(SyntheticSpec spec) : spec_(std::move(spec)), gauss_(spec_.seed) {
  spec_.validate();
  std::sort(spec_.segments.begin(), spec_.segments.end(),
            [](const auto& a, const auto& b) { return a.start < b.start; });

  question_.resize(spec_.dims);
  for (double& x : question_) x = gauss_();
  normalize_in_place(question_);
  for (double& x : question_) x = to_f32(x);
  direction_ = orthogonal_unit();
}

// Unit vector orthogonal to q drawn from an isotropic Gaussian.
std::vector<double> SyntheticSource::orthogonal_unit() {
  std::vector<double> v(spec_.dims);
  for (;;) {
    for (double& x : v) x = gauss_();
    double along = 0.0;
    for (std::size_t d = 0; d < v.size(); ++d) along += v[d] * question_[d];
    for (std::size_t d = 0; d < v.size(); ++d) v[d] -= along * question_[d];
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 1e-6) break;
  }
  normalize_in_place(v);
  return v;
}

double SyntheticSource::relevance_at(std::uint64_t t) {
  const auto& segs = spec_.segments;
  while (segment_cursor_ < segs.size() && segs[segment_cursor_].end <= t) ++segment_cursor_;
  if (segment_cursor_ < segs.size() && segs[segment_cursor_].start <= t) {
    return segs[segment_cursor_].relevance;
  }
  return 0.0;
}

std::optional<TokenMatrix> SyntheticSource::next() {
  if (next_frame_ >= spec_.frames) return std::nullopt;
  const std::size_t n = spec_.tokens;
  const std::size_t dims = spec_.dims;

  if (next_frame_ > 0) {
    const double keep = spec_.temporal_correlation;
    const double fresh = std::sqrt(1.0 - keep * keep);
    const std::vector<double> g = orthogonal_unit();
    for (std::size_t d = 0; d < dims; ++d) direction_[d] = keep * direction_[d] + fresh * g[d];
    double along = 0.0;
    for (std::size_t d = 0; d < dims; ++d) along += direction_[d] * question_[d];
    for (std::size_t d = 0; d < dims; ++d) direction_[d] -= along * question_[d];
    normalize_in_place(direction_);
  }

  const double rho = relevance_at(next_frame_);
  const double ortho = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  std::vector<double> centre(dims);
  for (std::size_t d = 0; d < dims; ++d) centre[d] = rho * question_[d] + ortho * direction_[d];

  // Token jitter is centred across tokens so the frame descriptor stays on
  // `centre` exactly; it only perturbs token-level similarities.
  std::vector<double> jitter(n * dims);
  for (double& x : jitter) x = gauss_() * spec_.noise_scale;
  for (std::size_t d = 0; d < dims; ++d) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += jitter[j * dims + d];
    mean /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) jitter[j * dims + d] -= mean;
  }

  std::vector<double> values(n * dims);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t d = 0; d < dims; ++d) {
      values[j * dims + d] = to_f32(centre[d] + jitter[j * dims + d]);
    }
  }
  ++next_frame_;
  return TokenMatrix(n, dims, std::span<const double>(values));
}

SyntheticStream generate_synthetic(const SyntheticSpec& spec) {
  SyntheticSource source(spec);
  SyntheticStream out;
  out.question = source.question();
  out.frames.reserve(spec.frames);
  while (auto f = source.next()) out.frames.push_back(std::move(*f));
  return out;
}

std::vector<PlantedSegment> planted_every(std::uint64_t frames, std::uint64_t block,
                                          std::uint64_t length, double relevance,
                                          std::uint64_t seed) {
  if (block == 0 || length == 0 || length > block) {
    throw Error(Errc::InvalidSpec, "planted_every needs 1 <= length <= block");
  }
  std::mt19937_64 engine(seed);
  std::vector<PlantedSegment> out;
  for (std::uint64_t start = 0; start + block <= frames; start += block) {
    const std::uint64_t slack = block - length;
    const std::uint64_t offset = slack == 0 ? 0 : engine() % (slack + 1);
    out.push_back({start + offset, start + offset + length, relevance});
  }
  return out;
}

}  // namespace vidmem
