#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "npi/errors.hpp"
#include "npi/metrics.hpp"

namespace npi {

struct EmbeddingConfig {
  std::size_t dim = 32;
  std::size_t window = 2;  // co-occurrence radius in words
  bool normalize = false;
};

// Word vectors from a symmetric eigendecomposition of the log(1 + count)
// co-occurrence matrix of the corpus. Words follow metric_words(): lowercased
// alphanumeric runs.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  static EmbeddingTable build(std::string_view corpus, const EmbeddingConfig& cfg = {}) {
    if (cfg.dim == 0) throw ConfigError("embedding dimension must be positive");
    const auto words = metric_words(corpus);
    if (words.empty()) throw DataError("embedding corpus has no words");
    std::map<std::string, std::size_t> sorted;
    for (const auto& w : words) sorted.emplace(w, 0);
    std::size_t next = 0;
    for (auto& [w, id] : sorted) id = next++;
    const std::size_t v = sorted.size();
    std::vector<std::size_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(sorted.at(w));

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(v));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size() && j <= i + cfg.window; ++j) {
        m(static_cast<Eigen::Index>(ids[i]), static_cast<Eigen::Index>(ids[j])) += 1.0;
        m(static_cast<Eigen::Index>(ids[j]), static_cast<Eigen::Index>(ids[i])) += 1.0;
      }
    m = m.unaryExpr([](double c) { return std::log1p(c); });
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    if (solver.info() != Eigen::Success) throw NumericError("co-occurrence eigendecomposition failed");

    // Largest-magnitude eigenpairs, each column signed so its largest entry is
    // positive (removes the solver's sign ambiguity).
    const Eigen::VectorXd& values = solver.eigenvalues();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(values(a)) > std::abs(values(b)); });
    EmbeddingTable t;
    t.dim_ = cfg.dim;
    t.normalized_ = cfg.normalize;
    for (const auto& [w, id] : sorted) t.vectors_.emplace(w, std::vector<double>(cfg.dim, 0.0));
    std::vector<const std::string*> by_id(v);
    for (const auto& [w, id] : sorted) by_id[id] = &w;
    for (std::size_t k = 0; k < std::min(cfg.dim, v); ++k) {
      const Eigen::Index col = order[k];
      Eigen::VectorXd u = solver.eigenvectors().col(col);
      Eigen::Index arg = 0;
      u.cwiseAbs().maxCoeff(&arg);
      if (u(arg) < 0) u = -u;
      const double s = std::sqrt(std::abs(values(col)));
      for (std::size_t i = 0; i < v; ++i) t.vectors_[*by_id[i]][k] = u(static_cast<Eigen::Index>(i)) * s;
    }
    if (cfg.normalize)
      for (auto& [w, vec] : t.vectors_) {
        double n = 0;
        for (double x : vec) n += x * x;
        n = std::sqrt(n);
        if (n > 0)
          for (double& x : vec) x /= n;
      }
    return t;
  }

  // Builds a table from explicit vectors (all of the same dimension).
  static EmbeddingTable from_vectors(std::map<std::string, std::vector<double>> vectors, bool normalized = false) {
    EmbeddingTable t;
    t.normalized_ = normalized;
    for (auto& [w, v] : vectors) {
      if (t.dim_ == 0) t.dim_ = v.size();
      if (v.size() != t.dim_ || v.empty()) throw DimensionError("embedding vectors differ in dimension");
      t.vectors_.emplace(w, std::move(v));
    }
    return t;
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool normalized() const { return normalized_; }
  bool contains(const std::string& word) const { return vectors_.contains(word); }
  const std::vector<double>& at(const std::string& word) const { return vectors_.at(word); }

  nlohmann::json to_json() const {
    nlohmann::json words = nlohmann::json::object();
    for (const auto& [w, v] : vectors_) words[w] = v;
    return {{"dim", dim_}, {"normalized", normalized_}, {"vectors", words}};
  }

  static EmbeddingTable from_json(const nlohmann::json& j) {
    std::map<std::string, std::vector<double>> vectors;
    for (const auto& [w, v] : j.at("vectors").items()) vectors.emplace(w, v.get<std::vector<double>>());
    return from_vectors(std::move(vectors), j.value("normalized", false));
  }

 private:
  std::size_t dim_ = 0;
  bool normalized_ = false;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// Bag-of-words mean of the known word vectors; unknown words are skipped and
// text with no known words maps to the zero vector.
inline std::vector<double> embed_sentence(std::string_view text, const EmbeddingTable& table) {
  std::vector<double> out(table.dim(), 0.0);
  std::size_t known = 0;
  for (const auto& w : metric_words(text)) {
    if (!table.contains(w)) continue;
    const auto& v = table.at(w);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    ++known;
  }
  if (known)
    for (double& x : out) x /= double(known);
  return out;
}

enum class DistanceKind { euclidean, cosine };

inline double vector_distance(const std::vector<double>& a, const std::vector<double>& b,
                              DistanceKind kind = DistanceKind::euclidean) {
  if (a.size() != b.size()) throw DimensionError("distance between vectors of different size");
  if (kind == DistanceKind::euclidean) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

}  // namespace npi
