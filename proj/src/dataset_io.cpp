#include "mokd/error.hpp"
#include "mokd/tasks.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace mokd {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'M', 'B', '1'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("truncated EMB1 file while reading ") + what, pos_);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

EmbeddingDataset parse_emb1(const std::string& bytes) {
  Reader r(bytes);
  for (char expected : kMagic) {
    const std::uint64_t at = r.offset();
    if (static_cast<char>(r.u8("magic")) != expected) throw ParseError("bad EMB1 magic", at);
  }
  const std::uint64_t version_at = r.offset();
  if (const auto version = r.u8("version"); version != kVersion) {
    throw ParseError("unsupported EMB1 version " + std::to_string(version), version_at);
  }
  const std::uint32_t n_classes = r.u32("class count");
  if (n_classes == 0) throw ParseError("EMB1 file declares zero classes", r.offset() - 4);

  EmbeddingDataset out;
  std::uint32_t dim = 0;
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    const std::uint32_t rows = r.u32("class row count");
    if (rows == 0) throw ParseError("class " + std::to_string(c) + " is empty", r.offset() - 4);
    const std::uint32_t d = r.u32("class dimension");
    if (d == 0) throw ParseError("zero feature dimension", r.offset() - 4);
    if (c == 0) dim = d;
    if (d != dim) {
      throw ParseError("class " + std::to_string(c) + " has dimension " + std::to_string(d) +
                           ", expected " + std::to_string(dim),
                       r.offset() - 4);
    }
    r.need(static_cast<std::size_t>(rows) * d * 4, "class payload");
    Matrix block(rows, d);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < d; ++j) {
        const std::uint64_t at = r.offset();
        const float v = r.f32("value");
        if (!std::isfinite(v)) throw ParseError("non-finite value", at);
        block(i, j) = static_cast<double>(v);
      }
    }
    out.classes.push_back(std::move(block));
  }
  if (!r.at_end()) throw ParseError("trailing bytes after last class", r.offset());
  return out;
}

double parse_double(std::string_view text, std::size_t line, std::uint64_t at) {
  double v = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\r')) --end;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("bad number '" + std::string(text) + "' on CSV line " + std::to_string(line),
                     at);
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

EmbeddingDataset parse_csv(const std::string& text) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::map<long, std::vector<std::vector<double>>> by_label;

  while (pos < text.size()) {
    const std::uint64_t line_at = pos;
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto cells = split_commas(line);
    if (line_no == 1) {
      if (cells.size() < 2 || cells[0] != "label") {
        throw ParseError("CSV header must be 'label,f0,...'", line_at);
      }
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j] != "f" + std::to_string(j - 1)) {
          throw ParseError("unexpected CSV header column '" + std::string(cells[j]) + "'", line_at);
        }
      }
      dim = cells.size() - 1;
      continue;
    }
    if (cells.size() != dim + 1) {
      throw ParseError("CSV line " + std::to_string(line_no) + " has " +
                           std::to_string(cells.size()) + " columns, expected " +
                           std::to_string(dim + 1),
                       line_at);
    }
    const double label = parse_double(cells[0], line_no, line_at);
    if (label < 0 || label != std::floor(label)) {
      throw ParseError("CSV label must be a non-negative integer", line_at);
    }
    std::vector<double> row(dim);
    for (std::size_t j = 0; j < dim; ++j) row[j] = parse_double(cells[j + 1], line_no, line_at);
    by_label[static_cast<long>(label)].push_back(std::move(row));
  }
  if (dim == 0) throw ParseError("CSV file has no header", 0);
  if (by_label.empty()) throw ParseError("CSV file has no rows", text.size());

  EmbeddingDataset out;
  long expected = 0;
  for (auto& [label, rows] : by_label) {
    if (label != expected) {
      throw ParseError("CSV labels must cover 0..N-1; missing class " + std::to_string(expected),
                       text.size());
    }
    ++expected;
    Matrix block(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    out.classes.push_back(std::move(block));
  }
  return out;
}

}  // namespace

void save_embeddings(const EmbeddingDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::string bytes(kMagic.begin(), kMagic.end());
  bytes.push_back(static_cast<char>(kVersion));
  put_u32(bytes, static_cast<std::uint32_t>(dataset.num_classes()));
  for (const Matrix& block : dataset.classes) {
    put_u32(bytes, static_cast<std::uint32_t>(block.rows()));
    put_u32(bytes, static_cast<std::uint32_t>(block.cols()));
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index j = 0; j < block.cols(); ++j) put_f32(bytes, static_cast<float>(block(i, j)));
  }
  write_file(path, bytes);
}

EmbeddingDataset load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  EmbeddingDataset out;
  if (bytes.compare(0, 5, "label") == 0) {
    out = parse_csv(bytes);
  } else {
    out = parse_emb1(bytes);
  }
  out.name = path.stem().string();
  return out;
}

void save_embeddings_csv(const EmbeddingDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ostringstream os;
  os << "label";
  for (Eigen::Index j = 0; j < dataset.dim(); ++j) os << ",f" << j;
  os << '\n';
  char buf[64];
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    const Matrix& block = dataset.classes[c];
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      os << c;
      for (Eigen::Index j = 0; j < block.cols(); ++j) {
        // Shortest representation that round-trips the double exactly.
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), block(i, j));
        os << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      }
      os << '\n';
    }
  }
  write_file(path, os.str());
}

EmbeddingDataset load_embeddings_csv(const std::filesystem::path& path) {
  EmbeddingDataset out = parse_csv(read_file(path));
  out.name = path.stem().string();
  return out;
}

}  // namespace mokd
