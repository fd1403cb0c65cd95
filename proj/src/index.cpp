#include "phrasal/index.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <zlib.h>

namespace phrasal {

static_assert(std::endian::native == std::endian::little, "vectors.bin assumes a little-endian host");

namespace {

bool better(const SearchHit& a, const SearchHit& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void push(std::uint32_t id, double score) {
    const SearchHit hit{id, score};
    if (heap_.size() < k_) {
      heap_.push_back(hit);
      std::push_heap(heap_.begin(), heap_.end(), better);
    } else if (better(hit, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = hit;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
  }
  // Cheap rejection test before building a hit.
  bool full_and_beats(float score) const {
    return heap_.size() == k_ && static_cast<double>(score) < heap_.front().score;
  }

  std::vector<SearchHit> take() && {
    std::sort_heap(heap_.begin(), heap_.end(), better);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<SearchHit> heap_;
};

void normalize(float* v, std::size_t dim) {
  double norm = 0;
  for (std::size_t k = 0; k < dim; ++k) norm += double(v[k]) * double(v[k]);
  norm = std::sqrt(norm);
  if (norm == 0) return;
  for (std::size_t k = 0; k < dim; ++k) v[k] = static_cast<float>(v[k] / norm);
}

std::string dedup_key(const IndexEntry& e) {
  std::string key = e.context_text;
  key.push_back('\x1f');
  key += std::to_string(e.s);
  key.push_back(':');
  key += std::to_string(e.e);
  return key;
}

unsigned long crc_of(const std::string& bytes) {
  return crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  const auto tmp = std::filesystem::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

std::string_view metric_name(Metric m) { return m == Metric::cosine ? "cosine" : "inner_product"; }

}  // namespace

IndexBuilder::IndexBuilder(std::uint32_t dim, Metric metric) : index_(dim, metric) {
  if (dim == 0) throw std::invalid_argument("index dimension must be positive");
}

bool IndexBuilder::add(IndexEntry entry) {
  if (entry.vector.size() != index_.dim_) {
    throw std::invalid_argument("index entry has dimension " + std::to_string(entry.vector.size()) +
                                ", expected " + std::to_string(index_.dim_));
  }
  if (entry.s > entry.e) throw std::invalid_argument("index entry span has s > e");
  if (!seen_.insert(dedup_key(entry)).second) return false;
  if (index_.metric_ == Metric::cosine) normalize(entry.vector.data(), entry.vector.size());
  index_.vectors_.insert(index_.vectors_.end(), entry.vector.begin(), entry.vector.end());
  entry.vector.clear();
  entry.vector.shrink_to_fit();
  entry.id = static_cast<std::uint32_t>(index_.entries_.size());
  index_.entries_.push_back(std::move(entry));
  return true;
}

PhraseIndex IndexBuilder::finish() && {
  seen_.clear();
  return std::move(index_);
}

PhraseIndex build_index(std::uint32_t dim, std::span<const IndexEntry> entries, Metric metric) {
  IndexBuilder builder(dim, metric);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].id != k) throw std::invalid_argument("index entry ids must be dense from 0");
    builder.add(entries[k]);
  }
  return std::move(builder).finish();
}

std::vector<std::vector<SearchHit>> PhraseIndex::search(const Matrix<float>& queries_in, std::size_t k,
                                                        Precision precision) const {
  if (k == 0) throw std::invalid_argument("search k must be >= 1");
  if (queries_in.rows() > 0 && queries_in.cols() != static_cast<Eigen::Index>(dim_)) {
    throw std::invalid_argument("query dimension " + std::to_string(queries_in.cols()) +
                                " does not match index dimension " + std::to_string(dim_));
  }
  Matrix<float> queries = queries_in;
  if (metric_ == Metric::cosine) {
    for (Eigen::Index q = 0; q < queries.rows(); ++q) normalize(queries.row(q).data(), dim_);
  }
  const std::size_t nq = static_cast<std::size_t>(queries.rows());
  const std::size_t n = entries_.size();
  std::vector<TopK> tops(nq, TopK(std::min(k, n)));
  std::vector<std::vector<SearchHit>> out(nq);
  if (n == 0) return out;

  if (precision == Precision::f64) {
    for (std::size_t q = 0; q < nq; ++q) {
      const float* qv = queries.row(static_cast<Eigen::Index>(q)).data();
      for (std::size_t id = 0; id < n; ++id) {
        const float* v = vectors_.data() + id * dim_;
        double s = 0;
        for (std::uint32_t c = 0; c < dim_; ++c) s += double(qv[c]) * double(v[c]);
        tops[q].push(static_cast<std::uint32_t>(id), s);
      }
    }
  } else {
    constexpr std::size_t kBlock = 1024;
    using ConstMap = Eigen::Map<const Matrix<float>>;
    Matrix<float> scores;
    for (std::size_t b = 0; b < n; b += kBlock) {
      const std::size_t len = std::min(kBlock, n - b);
      const ConstMap block(vectors_.data() + b * dim_, static_cast<Eigen::Index>(len), dim_);
      scores.noalias() = queries * block.transpose();
      for (std::size_t q = 0; q < nq; ++q) {
        const float* row = scores.row(static_cast<Eigen::Index>(q)).data();
        TopK& top = tops[q];
        for (std::size_t j = 0; j < len; ++j) {
          if (top.full_and_beats(row[j])) continue;
          top.push(static_cast<std::uint32_t>(b + j), static_cast<double>(row[j]));
        }
      }
    }
  }
  for (std::size_t q = 0; q < nq; ++q) out[q] = std::move(tops[q]).take();
  return out;
}

std::vector<SearchHit> PhraseIndex::search(std::span<const float> query, std::size_t k,
                                           Precision precision) const {
  if (query.size() != dim_) {
    throw std::invalid_argument("query dimension " + std::to_string(query.size()) +
                                " does not match index dimension " + std::to_string(dim_));
  }
  Matrix<float> q(1, dim_);
  std::copy(query.begin(), query.end(), q.data());
  return search(q, k, precision).front();
}

void PhraseIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string vec_bytes(vectors_.size() * sizeof(float), '\0');
  if (!vectors_.empty()) std::memcpy(vec_bytes.data(), vectors_.data(), vec_bytes.size());
  std::string entry_bytes;
  for (const auto& e : entries_) {
    nlohmann::ordered_json j{{"phrase", e.phrase_text}, {"context", e.context_text},
                             {"s", e.s},                {"e", e.e},
                             {"doc_id", e.doc_id}};
    entry_bytes += j.dump();
    entry_bytes.push_back('\n');
  }
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["dimension"] = dim_;
  manifest["count"] = entries_.size();
  manifest["metric"] = metric_name(metric_);
  manifest["checksum"] = {{"vectors_bytes", vec_bytes.size()},
                          {"vectors_crc32", crc_of(vec_bytes)},
                          {"entries_bytes", entry_bytes.size()},
                          {"entries_crc32", crc_of(entry_bytes)}};
  write_file(dir / "vectors.bin", vec_bytes);
  write_file(dir / "entries.jsonl", entry_bytes);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

PhraseIndex PhraseIndex::load(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (manifest.at("format_version").get<int>() != kFormatVersion) {
    throw std::runtime_error(dir.string() + ": index format version " +
                             std::to_string(manifest.at("format_version").get<int>()) + " is not supported");
  }
  const auto& sum = manifest.at("checksum");
  const std::string vec_bytes = read_file(dir / "vectors.bin");
  const std::string entry_bytes = read_file(dir / "entries.jsonl");
  if (vec_bytes.size() != sum.at("vectors_bytes").get<std::size_t>() ||
      crc_of(vec_bytes) != sum.at("vectors_crc32").get<unsigned long>()) {
    throw std::runtime_error(dir.string() + ": vectors.bin checksum mismatch");
  }
  if (entry_bytes.size() != sum.at("entries_bytes").get<std::size_t>() ||
      crc_of(entry_bytes) != sum.at("entries_crc32").get<unsigned long>()) {
    throw std::runtime_error(dir.string() + ": entries.jsonl checksum mismatch");
  }
  const std::string metric = manifest.at("metric");
  PhraseIndex index(manifest.at("dimension").get<std::uint32_t>(),
                    metric == "cosine" ? Metric::cosine : Metric::inner_product);
  const std::size_t count = manifest.at("count");
  if (vec_bytes.size() != count * index.dim_ * sizeof(float)) {
    throw std::runtime_error(dir.string() + ": vectors.bin size disagrees with manifest count");
  }
  index.vectors_.resize(count * index.dim_);
  if (!vec_bytes.empty()) std::memcpy(index.vectors_.data(), vec_bytes.data(), vec_bytes.size());
  index.entries_.reserve(count);
  std::istringstream lines(entry_bytes);
  std::string line;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    IndexEntry e;
    e.id = static_cast<std::uint32_t>(index.entries_.size());
    e.phrase_text = j.at("phrase");
    e.context_text = j.at("context");
    e.s = j.at("s");
    e.e = j.at("e");
    e.doc_id = j.at("doc_id");
    index.entries_.push_back(std::move(e));
  }
  if (index.entries_.size() != count) {
    throw std::runtime_error(dir.string() + ": entries.jsonl line count disagrees with manifest");
  }
  return index;
}

bool PhraseIndex::operator==(const PhraseIndex& other) const {
  if (dim_ != other.dim_ || metric_ != other.metric_ || entries_.size() != other.entries_.size()) return false;
  if (vectors_.size() != other.vectors_.size() ||
      (!vectors_.empty() &&
       std::memcmp(vectors_.data(), other.vectors_.data(), vectors_.size() * sizeof(float)) != 0)) {
    return false;
  }
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto& a = entries_[k];
    const auto& b = other.entries_[k];
    if (a.id != b.id || a.phrase_text != b.phrase_text || a.context_text != b.context_text || a.s != b.s ||
        a.e != b.e || a.doc_id != b.doc_id) {
      return false;
    }
  }
  return true;
}

}  // namespace phrasal
