#include "clipot/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "clipot/random.hpp"

namespace clipot {

namespace {

constexpr char kMagic[4] = {'O', 'T', 'E', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t n, const char* block) const {
    if (remaining() < n) {
      throw ParseError(block, pos_,
                       "need " + std::to_string(n) + " bytes, " +
                           std::to_string(remaining()) + " left");
    }
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_finite(const MatrixXf& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::InvalidSpec, std::string(what) + " contains non-finite values");
  }
}

}  // namespace

std::uint32_t EmbeddingFile::flags() const {
  std::uint32_t f = 0;
  if (labels) f |= kFlagLabels;
  if (!prototypes.empty()) f |= kFlagPrototypes;
  return f;
}

void validate(const EmbeddingFile& file) {
  if (file.items.rows() != static_cast<Eigen::Index>(file.dim)) {
    throw Error(ErrorCode::ShapeMismatch, "items must have d rows");
  }
  check_finite(file.items, "items");
  for (const auto& block : file.prototypes) {
    if (block.rows() != static_cast<Eigen::Index>(file.dim) ||
        block.cols() != static_cast<Eigen::Index>(file.classes)) {
      throw Error(ErrorCode::ShapeMismatch, "prototype blocks must be d x K");
    }
    check_finite(block, "prototypes");
  }
  if (file.labels) {
    if (file.labels->size() != file.items.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "one label per item is required");
    }
    for (auto label : *file.labels) {
      if (label < 0 || static_cast<std::uint32_t>(label) >= file.classes) {
        throw Error(ErrorCode::ShapeMismatch,
                    "label " + std::to_string(label) + " outside [0, K)");
      }
    }
  }
}

std::vector<std::uint8_t> encode(const EmbeddingFile& file) {
  validate(file);
  std::vector<std::uint8_t> out;
  const std::size_t floats =
      static_cast<std::size_t>(file.dim) *
      (static_cast<std::size_t>(file.classes) * file.templates() + file.n_items());
  out.reserve(kEmbeddingHeaderBytes + 4 * floats + (file.labels ? 4 * file.n_items() : 0));

  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kEmbeddingFileVersion);
  put_u32(out, file.dim);
  put_u32(out, file.n_items());
  put_u32(out, file.classes);
  put_u32(out, file.templates());
  put_u32(out, file.flags());

  // Column-major d x K blocks already store class-major, then dimension.
  for (const auto& block : file.prototypes) {
    for (Eigen::Index i = 0; i < block.size(); ++i) put_f32(out, block.data()[i]);
  }
  for (Eigen::Index i = 0; i < file.items.size(); ++i) put_f32(out, file.items.data()[i]);
  if (file.labels) {
    for (auto label : *file.labels) put_u32(out, static_cast<std::uint32_t>(label));
  }
  return out;
}

EmbeddingFile decode(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.require(kEmbeddingHeaderBytes, "header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("header", 0, "bad magic, expected \"OTEB\"");
  }
  in.u32();
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32();
  if (version != kEmbeddingFileVersion) {
    throw ParseError("header", version_at, "unsupported version " + std::to_string(version));
  }
  EmbeddingFile file;
  file.dim = in.u32();
  const std::uint32_t n = in.u32();
  file.classes = in.u32();
  const std::uint32_t M = in.u32();
  const std::size_t flags_at = in.offset();
  const std::uint32_t flags = in.u32();
  if ((flags & ~(kFlagLabels | kFlagPrototypes)) != 0) {
    throw ParseError("header", flags_at, "unknown flag bits");
  }

  const auto d = static_cast<Eigen::Index>(file.dim);
  if (flags & kFlagPrototypes) {
    if (M == 0 || file.classes == 0) {
      throw ParseError("header", flags_at, "prototype flag set with K or M equal to zero");
    }
    const std::size_t block_floats = static_cast<std::size_t>(file.dim) * file.classes;
    in.require(4 * block_floats * M, "prototypes");
    for (std::uint32_t m = 0; m < M; ++m) {
      MatrixXf block(d, static_cast<Eigen::Index>(file.classes));
      for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = in.f32();
      file.prototypes.push_back(std::move(block));
    }
  }

  in.require(4 * static_cast<std::size_t>(file.dim) * n, "items");
  file.items.resize(d, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < file.items.size(); ++i) file.items.data()[i] = in.f32();

  if (flags & kFlagLabels) {
    in.require(4 * static_cast<std::size_t>(n), "labels");
    std::vector<std::int32_t> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t at = in.offset();
      labels[i] = static_cast<std::int32_t>(in.u32());
      if (labels[i] < 0 || static_cast<std::uint32_t>(labels[i]) >= file.classes) {
        throw ParseError("labels", at,
                         "label " + std::to_string(labels[i]) + " outside [0, " +
                             std::to_string(file.classes) + ")");
      }
    }
    file.labels = std::move(labels);
  }

  if (in.remaining() != 0) {
    throw ParseError("trailer", in.offset(),
                     std::to_string(in.remaining()) + " bytes beyond the declared payload");
  }
  return file;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file) {
  const auto bytes = encode(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write to " + path.string() + " failed");
}

EmbeddingFile read_embedding_file_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

LoadedEmbeddings read_embedding_file(const std::filesystem::path& path) {
  const EmbeddingFile file = read_embedding_file_raw(path);
  LoadedEmbeddings out;
  out.classes = file.classes;
  out.items = file.items.cast<double>();
  if (!file.prototypes.empty()) {
    std::vector<MatrixXd> blocks;
    for (const auto& b : file.prototypes) blocks.push_back(b.cast<double>());
    out.bank = build_bank(std::move(blocks));
  }
  if (file.labels) {
    out.labels = Eigen::Map<const Eigen::VectorXi>(file.labels->data(),
                                                   static_cast<Eigen::Index>(file.labels->size()));
  }
  return out;
}

EmbeddingFile make_embedding_file(const std::vector<MatrixXd>& prototypes, ConstRefMat items,
                                  const std::optional<VectorXi>& labels,
                                  std::uint32_t classes) {
  EmbeddingFile file;
  file.dim = static_cast<std::uint32_t>(items.rows());
  file.classes = classes;
  for (const auto& p : prototypes) file.prototypes.push_back(p.cast<float>());
  file.items = items.cast<float>();
  if (labels) file.labels = std::vector<std::int32_t>(labels->data(), labels->data() + labels->size());
  validate(file);
  return file;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::none: return "none";
    case ShiftKind::mean_shift: return "mean_shift";
    case ShiftKind::rotation: return "rotation";
    case ShiftKind::feature_mask: return "feature_mask";
  }
  return "unknown";
}

ShiftKind parse_shift_kind(std::string_view name) {
  for (ShiftKind k : {ShiftKind::none, ShiftKind::mean_shift, ShiftKind::rotation,
                      ShiftKind::feature_mask}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown shift kind '" + std::string(name) + "'");
}

void SyntheticShiftSpec::validate() const {
  if (d < 1 || K < 2 || M < 1 || n_per_class < 1) {
    throw Error(ErrorCode::InvalidSpec, "need d >= 1, K >= 2, M >= 1, n_per_class >= 1");
  }
  if (!(template_jitter >= 0.0) || !(sample_noise >= 0.0) || !(shift_magnitude >= 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "noise scales must be non-negative");
  }
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw Error(ErrorCode::InvalidSpec, "severity must lie in [0, 1]");
  }
  if (shift_toward_class && (*shift_toward_class < 0 || *shift_toward_class >= K)) {
    throw Error(ErrorCode::InvalidSpec, "shift_toward_class outside [0, K)");
  }
}

namespace {

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

void normalize_columns(MatrixXd& m) { m.colwise().normalize(); }

// Orthogonal polar factor of (1 - s) I + s Q: identity at s = 0, Q at s = 1.
MatrixXd interpolated_rotation(const MatrixXd& target, double s) {
  const auto d = target.rows();
  const MatrixXd blend = (1.0 - s) * MatrixXd::Identity(d, d) + s * target;
  Eigen::JacobiSVD<MatrixXd> svd(blend, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

SyntheticScenario generate_synthetic(const SyntheticShiftSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto d = static_cast<Eigen::Index>(spec.d);

  SyntheticScenario out;
  out.class_directions = gaussian(d, spec.K, rng);
  normalize_columns(out.class_directions);

  std::vector<MatrixXd> templates;
  for (int m = 0; m < spec.M; ++m) {
    MatrixXd t = out.class_directions + spec.template_jitter * gaussian(d, spec.K, rng);
    normalize_columns(t);
    templates.push_back(std::move(t));
  }
  out.bank = build_bank(std::move(templates));

  // Shift ingredients are drawn regardless of the kind in use.
  VectorXd offset = gaussian(d, 1, rng).col(0).normalized();
  if (spec.shift_toward_class) offset = out.class_directions.col(*spec.shift_toward_class);
  const MatrixXd random_orthogonal = gaussian(d, d, rng).householderQr().householderQ();
  const std::vector<int> mask_order = random_permutation(spec.d, rng);

  // Stream order: rounds over all classes, each in a fresh random order, so
  // every aligned block of K items holds each class once.
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(spec.K) * spec.n_per_class);
  for (int r = 0; r < spec.n_per_class; ++r) {
    for (int k : random_permutation(spec.K, rng)) order.push_back(k);
  }
  if (!spec.balanced) shuffle_in_place(order, rng);

  const auto n = static_cast<Eigen::Index>(order.size());
  out.labels = Eigen::Map<const VectorXi>(order.data(), n);
  out.inputs = spec.sample_noise * gaussian(d, n, rng);
  for (Eigen::Index i = 0; i < n; ++i) out.inputs.col(i) += out.class_directions.col(out.labels(i));

  switch (spec.shift_kind) {
    case ShiftKind::none:
      break;
    case ShiftKind::mean_shift:
      out.inputs.colwise() += spec.severity * spec.shift_magnitude * offset;
      break;
    case ShiftKind::rotation:
      out.inputs = interpolated_rotation(random_orthogonal, spec.severity) * out.inputs;
      break;
    case ShiftKind::feature_mask: {
      const auto masked = static_cast<std::size_t>(std::lround(spec.severity * spec.d));
      for (std::size_t i = 0; i < masked; ++i) out.inputs.row(mask_order[i]).setZero();
      break;
    }
  }
  return out;
}

std::vector<Batch> split_batches(ConstRefMat x, const VectorXi& labels, int batch_size) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (labels.size() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "one label per column is required");
  }
  std::vector<Batch> out;
  for (Eigen::Index start = 0; start < x.cols(); start += batch_size) {
    const auto len = std::min<Eigen::Index>(batch_size, x.cols() - start);
    out.push_back(Batch{x.middleCols(start, len), labels.segment(start, len)});
  }
  return out;
}

std::vector<Batch> SyntheticScenario::batches(int batch_size) const {
  return split_batches(inputs, labels, batch_size);
}

}  // namespace clipot
