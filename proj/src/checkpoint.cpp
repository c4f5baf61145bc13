// Binary checkpoint layout, all integers little-endian:
//
//   "HABITCKP" u32 version
//   u64 config_hash, i64 epoch, str config_json, str rng_state
//   i32 q_tokens, i32 embed_dim, mat Wc, vec bc, mat Wt, vec bt
//   i64 adam_step, vec m, vec v
//   u64 n_memories, then per memory:
//     i64 batch_id, u8 presence bits, [mat sim] [vec estimates]
//     [u64 n, i64 * n outliers] [u64 n, i32 * n mask]
//   u64 FNV-1a of every preceding byte
//
// str = u64 length + bytes; mat = u64 rows, u64 cols, column-major f64 bits;
// vec = u64 size + f64 bits.

#include <bit>
#include <fstream>
#include <sstream>

#include "habit/dataset_io.hpp"
#include "habit/error.hpp"
#include "habit/train.hpp"

namespace habit {

namespace {

constexpr char kMagic[8] = {'H', 'A', 'B', 'I', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

class Writer {
 public:
  void raw(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const Vector<double>& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k) f64(v(k));
  }
  void mat(const Matrix<double>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) f64(m.data()[k]);
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : data_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = count();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Vector<double> vec() {
    const auto n = count();
    Vector<double> v(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = f64();
    return v;
  }
  Matrix<double> mat() {
    const auto rows = count();
    const auto cols = count();
    if (rows * cols > kMaxElements) throw FormatError("checkpoint: matrix too large");
    Matrix<double> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = f64();
    return m;
  }
  std::uint64_t count() {
    const auto n = u64();
    if (n > kMaxElements || n > data_.size()) throw FormatError("checkpoint: implausible length");
    return n;
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

enum MemoryBits : std::uint8_t {
  kHasSimilarity = 1,
  kHasEstimates = 2,
  kHasOutliers = 4,
  kHasMask = 8,
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u64(ckpt.config_hash);
  w.i64(ckpt.epoch);
  w.str(ckpt.config_json);
  w.str(ckpt.rng_state);

  const EncoderParams& p = ckpt.params;
  w.i32(p.q_tokens);
  w.i32(p.embed_dim);
  w.mat(p.composed.weight);
  w.vec(p.composed.bias);
  w.mat(p.target.weight);
  w.vec(p.target.bias);

  w.i64(ckpt.optimizer.step);
  w.vec(ckpt.optimizer.first_moment);
  w.vec(ckpt.optimizer.second_moment);

  w.u64(ckpt.memories.size());
  for (const BatchMemory& m : ckpt.memories) {
    w.i64(m.batch_id);
    std::uint8_t bits = 0;
    if (m.prev_similarity) bits |= kHasSimilarity;
    if (m.prev_estimates) bits |= kHasEstimates;
    if (m.prev_outliers) bits |= kHasOutliers;
    if (m.prev_mask) bits |= kHasMask;
    w.u8(bits);
    if (m.prev_similarity) w.mat(*m.prev_similarity);
    if (m.prev_estimates) w.vec(*m.prev_estimates);
    if (m.prev_outliers) {
      w.u64(m.prev_outliers->size());
      for (Eigen::Index b : *m.prev_outliers) w.i64(b);
    }
    if (m.prev_mask) {
      w.u64(static_cast<std::uint64_t>(m.prev_mask->size()));
      for (Eigen::Index b = 0; b < m.prev_mask->size(); ++b) w.i32((*m.prev_mask)(b));
    }
  }
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw FormatError("checkpoint: truncated file");
  if (bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  {
    Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
    const std::uint64_t stored = tail.u64();
    if (stored != fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8))) {
      throw FormatError("checkpoint: checksum mismatch (corrupt or truncated file)");
    }
  }
  Reader r(std::string_view(bytes).substr(0, bytes.size() - 8));
  for (std::size_t k = 0; k < sizeof kMagic; ++k) r.u8();
  if (r.u32() != kVersion) throw FormatError("checkpoint: unsupported version");

  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  ckpt.epoch = r.i64();
  ckpt.config_json = r.str();
  ckpt.rng_state = r.str();

  EncoderParams& p = ckpt.params;
  p.q_tokens = r.i32();
  p.embed_dim = r.i32();
  p.composed.weight = r.mat();
  p.composed.bias = r.vec();
  p.target.weight = r.mat();
  p.target.bias = r.vec();
  const Eigen::Index out_dim = static_cast<Eigen::Index>(p.q_tokens) * p.embed_dim;
  if (p.q_tokens < 1 || p.embed_dim < 1 || p.composed.weight.rows() != out_dim ||
      p.composed.bias.size() != out_dim || p.target.weight.rows() != out_dim ||
      p.target.bias.size() != out_dim || p.composed.weight.cols() != 2 * p.target.weight.cols()) {
    throw FormatError("checkpoint: inconsistent encoder shapes");
  }

  ckpt.optimizer.step = r.i64();
  ckpt.optimizer.first_moment = r.vec();
  ckpt.optimizer.second_moment = r.vec();

  const auto n_memories = r.count();
  ckpt.memories.resize(n_memories);
  for (BatchMemory& m : ckpt.memories) {
    m.batch_id = r.i64();
    const std::uint8_t bits = r.u8();
    if (bits & ~0x0f) throw FormatError("checkpoint: bad memory flags");
    if (bits & kHasSimilarity) m.prev_similarity = r.mat();
    if (bits & kHasEstimates) m.prev_estimates = r.vec();
    if (bits & kHasOutliers) {
      OutlierSet set;
      const auto n = r.count();
      for (std::uint64_t k = 0; k < n; ++k) set.insert(r.i64());
      m.prev_outliers = std::move(set);
    }
    if (bits & kHasMask) {
      const auto n = r.count();
      NoiseMask mask(static_cast<Eigen::Index>(n));
      for (Eigen::Index k = 0; k < mask.size(); ++k) mask(k) = r.i32();
      m.prev_mask = std::move(mask);
    }
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path));
}

}  // namespace habit
