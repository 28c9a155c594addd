#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/rng.hpp"
#include "glimpse/tensor.hpp"

namespace glimpse {

class ActionVocabulary {
 public:
  ActionVocabulary() = default;

  explicit ActionVocabulary(std::vector<std::string> names)
      : names_(std::move(names)) {
    for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
      if (names_[i].empty())
        throw vocab_error("empty action name at id " + std::to_string(i));
      if (!ids_.emplace(names_[i], i).second)
        throw vocab_error("duplicate action name '" + names_[i] + "'");
    }
  }

  int size() const { return static_cast<int>(names_.size()); }
  bool valid(int id) const { return id >= 0 && id < size(); }

  const std::string& name(int id) const {
    if (!valid(id)) throw vocab_error("action id " + std::to_string(id) +
                                      " outside vocabulary of size " +
                                      std::to_string(size()));
    return names_[id];
  }

  std::optional<int> id_of(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const ActionVocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

// Fixed per-action embeddings plus one reserved "no action" padding row
// (row index C). Frozen during training, standing in for a precomputed
// text-encoder table.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  EmbeddingTable(Tensor rows, int vocab_size)
      : rows_(std::move(rows)), vocab_size_(vocab_size) {
    if (rows_.rows() != vocab_size_ + 1)
      throw contract_error("embedding table must have C+1 rows");
  }

  // Deterministic unit-norm vectors, one independent draw per action id,
  // so neighboring ids are not artificially similar.
  static EmbeddingTable synthetic(int vocab_size, int dim, std::uint64_t seed) {
    Tensor rows(vocab_size + 1, dim);
    for (int id = 0; id <= vocab_size; ++id) {
      RngStream rng = RngStream::substream(seed, "embedding", id);
      double norm2 = 0.0;
      std::vector<double> v(dim);
      for (int j = 0; j < dim; ++j) {
        v[j] = rng.gaussian();
        norm2 += v[j] * v[j];
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (int j = 0; j < dim; ++j)
        rows.mut_at(id, j) = v[j] * inv;
    }
    return EmbeddingTable(std::move(rows), vocab_size);
  }

  int dim() const { return rows_.cols(); }
  int vocab_size() const { return vocab_size_; }
  int padding_id() const { return vocab_size_; }
  const Tensor& table() const { return rows_; }

  // 1×dim copy of one row; `id` may be the padding id.
  Tensor embedding(int id) const {
    if (id < 0 || id > vocab_size_)
      throw vocab_error("embedding lookup for invalid id " + std::to_string(id));
    std::vector<double> v(dim());
    for (int j = 0; j < dim(); ++j) v[j] = rows_.at(id, j);
    return Tensor::row(std::move(v));
  }

 private:
  Tensor rows_;
  int vocab_size_ = 0;
};

// Bounded FIFO of the most recent completed action ids, newest last.
// Re-pushing the action that is already newest is a no-op: an action is
// completed once, however many consecutive frames report it.
class HistoryQueue {
 public:
  HistoryQueue() = default;
  explicit HistoryQueue(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw config_error("history capacity must be positive");
  }

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(items_.size()); }
  bool empty() const { return items_.empty(); }

  const std::deque<int>& items() const { return items_; }

  void push_completed(int action_id, const ActionVocabulary& vocab) {
    if (!vocab.valid(action_id))
      throw vocab_error("push of invalid action id " + std::to_string(action_id));
    push_completed(action_id);
  }

  void push_completed(int action_id) {
    if (!items_.empty() && items_.back() == action_id) return;
    items_.push_back(action_id);
    if (static_cast<int>(items_.size()) > capacity_) items_.pop_front();
  }

  void assign(const std::vector<int>& ids) {
    items_.assign(ids.begin(), ids.end());
    while (static_cast<int>(items_.size()) > capacity_) items_.pop_front();
  }

  std::vector<int> snapshot() const {
    return std::vector<int>(items_.begin(), items_.end());
  }

 private:
  int capacity_ = 1;
  std::deque<int> items_;
};

// Fixed-width history representation: the queue left-padded with the
// no-action embedding to capacity, entries concatenated oldest→newest.
inline Tensor embed_history(const HistoryQueue& queue,
                            const EmbeddingTable& table) {
  const int n = queue.capacity();
  const int d = table.dim();
  Tensor out(1, n * d);
  auto& v = out.mut_values();
  const int pad = n - queue.size();
  int slot = 0;
  for (; slot < pad; ++slot)
    for (int j = 0; j < d; ++j)
      v[static_cast<std::size_t>(slot) * d + j] =
          table.table().at(table.padding_id(), j);
  for (int id : queue.items()) {
    if (id < 0 || id >= table.vocab_size())
      throw vocab_error("history contains invalid action id " +
                        std::to_string(id));
    for (int j = 0; j < d; ++j)
      v[static_cast<std::size_t>(slot) * d + j] = table.table().at(id, j);
    ++slot;
  }
  return out;
}

// Linear projection of the concatenated history into the joint space.
inline Tensor project_history(const Tensor& x, const Tensor& w,
                              const Tensor* bias = nullptr) {
  if (x.cols() != w.rows())
    throw dim_error("project_history: input width " + std::to_string(x.cols()) +
                    " vs projection rows " + std::to_string(w.rows()));
  Tensor y = matmul(x, w);
  return bias ? add_rowvec(y, *bias) : y;
}

struct CorruptionSpec {
  enum class Kind { none, noise, swap };
  Kind kind = Kind::none;
  double p = 0.0;
  double sigma = 0.03;

  void validate() const {
    if (p < 0.0 || p > 1.0)
      throw config_error("corruption probability must lie in [0,1]");
    if (sigma < 0.0) throw config_error("corruption sigma must be >= 0");
  }
};

inline std::string to_string(CorruptionSpec::Kind k) {
  switch (k) {
    case CorruptionSpec::Kind::none: return "none";
    case CorruptionSpec::Kind::noise: return "noise";
    case CorruptionSpec::Kind::swap: return "swap";
  }
  return "none";
}

inline CorruptionSpec::Kind corruption_kind_from_string(const std::string& s) {
  if (s == "none") return CorruptionSpec::Kind::none;
  if (s == "noise") return CorruptionSpec::Kind::noise;
  if (s == "swap") return CorruptionSpec::Kind::swap;
  throw config_error("unknown corruption kind '" + s + "'");
}

// Dropout-style masking (zero with probability p, survivors rescaled by
// 1/(1−p)) followed by additive Gaussian noise of deviation sigma.
// Training-time only; the unmasked expectation equals the input.
inline Tensor corrupt_noise(const Tensor& x, double p, double sigma,
                            RngStream& rng) {
  if (p >= 1.0)
    throw config_error("corrupt_noise: p = 1 leaves no mass to rescale");
  if (p < 0.0) throw config_error("corrupt_noise: negative probability");
  Tensor out = x.detached();
  auto& v = out.mut_values();
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& e : v) {
    if (p > 0.0) e = rng.bernoulli(p) ? 0.0 : e * keep_scale;
    if (sigma > 0.0) e += rng.gaussian(0.0, sigma);
  }
  return out;
}

// Each slot independently replaced, with probability p, by a uniformly
// drawn *different* action id. Queue length never changes.
inline HistoryQueue corrupt_swap(const HistoryQueue& queue, double p,
                                 const ActionVocabulary& vocab,
                                 RngStream& rng) {
  if (p < 0.0 || p > 1.0)
    throw config_error("corrupt_swap: probability outside [0,1]");
  if (p > 0.0 && vocab.size() < 2)
    throw config_error("corrupt_swap: need at least 2 actions to swap");
  HistoryQueue out(queue.capacity());
  std::vector<int> ids = queue.snapshot();
  for (int& id : ids) {
    if (p > 0.0 && rng.bernoulli(p)) {
      // uniform over the other C−1 ids
      long alt = rng.uniform_int(0, vocab.size() - 2);
      if (alt >= id) ++alt;
      id = static_cast<int>(alt);
    }
  }
  out.assign(ids);
  return out;
}

// External history file: one timestep per line, semicolon-separated action
// names (the queue content at that step, oldest first). '#' starts a
// comment; blank name lists give an empty queue.
inline std::vector<std::vector<int>> load_external_history(
    const std::string& path, const ActionVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open history file '" + path + "'");
  std::vector<std::vector<int>> steps;
  std::string line;
  int line_no = 0;
  auto is_space = [](unsigned char c) { return std::isspace(c); };
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = 0;
    while (first < line.size() && is_space(line[first])) ++first;
    if (first < line.size() && line[first] == '#') continue;  // comment line
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && is_space(line.back())) line.pop_back();
    line = line.substr(std::min(first, line.size()));
    if (line.empty()) {
      steps.emplace_back();  // a step with no completed actions yet
      continue;
    }
    std::vector<int> ids;
    std::stringstream ss(line);
    std::string token;
    while (std::getline(ss, token, ';')) {
      std::size_t s = 0, e = token.size();
      while (s < e && is_space(token[s])) ++s;
      while (e > s && is_space(token[e - 1])) --e;
      const std::string name = token.substr(s, e - s);
      if (name.empty()) continue;
      auto id = vocab.id_of(name);
      if (!id)
        throw data_error(path + ":" + std::to_string(line_no) +
                         ": unknown action name '" + name + "'");
      ids.push_back(*id);
    }
    steps.push_back(std::move(ids));
  }
  return steps;
}

}  // namespace glimpse
