#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chronopref/topics/text.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/rng.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref::topics {

struct LDAOptions {
  int K = 4;
  std::optional<double> alpha;  // default 50/K
  double beta = 0.01;
  int iterations = 1000;
  std::uint64_t seed = 1;

  double alpha_value() const { return alpha.value_or(50.0 / K); }
};

struct LDAModel {
  int K = 0;
  int V = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  int sweeps = 0;
  std::vector<std::string> vocab;
  std::vector<int> topic_term;  // K x V, row-major
  std::vector<int> topic_total; // K
  std::vector<std::vector<int>> doc_topic;    // D x K
  std::vector<std::vector<int>> assignments;  // per document, per token

  int& nkw(int k, int w) { return topic_term[static_cast<std::size_t>(k) * V + w]; }
  int nkw(int k, int w) const { return topic_term[static_cast<std::size_t>(k) * V + w]; }

  double phi(int k, int w) const { return (nkw(k, w) + beta) / (topic_total[k] + V * beta); }

  std::vector<double> theta(std::size_t d) const {
    const auto& row = doc_topic.at(d);
    const double n = static_cast<double>(assignments.at(d).size());
    std::vector<double> t(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) t[k] = (row[k] + alpha) / (n + K * alpha);
    return t;
  }
};

/// Recomputes both count matrices from the assignments and compares, and
/// checks that each marginal equals the token total.
inline bool counts_consistent(const LDAModel& m, const Corpus& corpus) {
  std::vector<int> nkw(static_cast<std::size_t>(m.K) * m.V, 0), nk(m.K, 0);
  long long total = 0;
  if (m.assignments.size() != corpus.docs.size()) return false;
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const auto& z = m.assignments[d];
    if (z.size() != corpus.docs[d].size()) return false;
    std::vector<int> ndk(m.K, 0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (z[i] < 0 || z[i] >= m.K) return false;
      ++nkw[static_cast<std::size_t>(z[i]) * m.V + corpus.docs[d][i]];
      ++nk[z[i]];
      ++ndk[z[i]];
    }
    if (ndk != m.doc_topic[d]) return false;
    total += static_cast<long long>(z.size());
  }
  if (nkw != m.topic_term || nk != m.topic_total) return false;
  long long sum_nk = 0, sum_nkw = 0, sum_ndk = 0;
  for (int v : m.topic_total) sum_nk += v;
  for (int v : m.topic_term) sum_nkw += v;
  for (const auto& row : m.doc_topic)
    for (int v : row) sum_ndk += v;
  return sum_nk == total && sum_nkw == total && sum_ndk == total;
}

/// Joint log p(w, z) under the collapsed model.
inline double lda_log_likelihood(const LDAModel& m) {
  const double Vb = m.V * m.beta;
  const double Ka = m.K * m.alpha;
  double ll = m.K * (std::lgamma(Vb) - m.V * std::lgamma(m.beta));
  for (int k = 0; k < m.K; ++k) {
    for (int w = 0; w < m.V; ++w) {
      const int c = m.nkw(k, w);
      if (c > 0) ll += std::lgamma(c + m.beta) - std::lgamma(m.beta);
    }
    ll += m.V * std::lgamma(m.beta) - std::lgamma(m.topic_total[k] + Vb);
  }
  const double D = static_cast<double>(m.doc_topic.size());
  ll += D * (std::lgamma(Ka) - m.K * std::lgamma(m.alpha));
  for (std::size_t d = 0; d < m.doc_topic.size(); ++d) {
    for (int k = 0; k < m.K; ++k) ll += std::lgamma(m.doc_topic[d][k] + m.alpha);
    ll -= std::lgamma(static_cast<double>(m.assignments[d].size()) + Ka);
  }
  return ll;
}

using SweepCallback = std::function<void(int sweep, const LDAModel&)>;

inline LDAModel fit_lda(const Corpus& corpus, const LDAOptions& opts, const SweepCallback& on_sweep = {}) {
  if (corpus.docs.empty() || corpus.vocab.empty()) throw TopicsError("cannot fit LDA on an empty corpus");
  if (opts.K < 1) throw TopicsError("K must be positive");
  if (opts.beta <= 0.0 || opts.alpha_value() <= 0.0) throw TopicsError("Dirichlet hyperparameters must be positive");
  if (opts.iterations < 0) throw TopicsError("iterations must be non-negative");

  LDAModel m;
  m.K = opts.K;
  m.V = static_cast<int>(corpus.vocab.size());
  m.alpha = opts.alpha_value();
  m.beta = opts.beta;
  m.seed = opts.seed;
  m.vocab = corpus.vocab;
  m.topic_term.assign(static_cast<std::size_t>(m.K) * m.V, 0);
  m.topic_total.assign(m.K, 0);
  m.doc_topic.assign(corpus.docs.size(), std::vector<int>(m.K, 0));
  m.assignments.resize(corpus.docs.size());

  util::Rng rng(opts.seed);
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    auto& z = m.assignments[d];
    z.resize(corpus.docs[d].size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(m.K)));
      z[i] = k;
      ++m.nkw(k, corpus.docs[d][i]);
      ++m.topic_total[k];
      ++m.doc_topic[d][k];
    }
  }

  const double Vb = m.V * m.beta;
  std::vector<double> p(static_cast<std::size_t>(m.K));
  for (int sweep = 1; sweep <= opts.iterations; ++sweep) {
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
      auto& z = m.assignments[d];
      auto& ndk = m.doc_topic[d];
      for (std::size_t i = 0; i < z.size(); ++i) {
        const int w = corpus.docs[d][i];
        int k = z[i];
        --m.nkw(k, w);
        --m.topic_total[k];
        --ndk[k];
        double total = 0.0;
        for (int t = 0; t < m.K; ++t) {
          total += (ndk[t] + m.alpha) * (m.nkw(t, w) + m.beta) / (m.topic_total[t] + Vb);
          p[t] = total;
        }
        const double u = rng.uniform() * total;
        k = 0;
        while (k < m.K - 1 && p[k] <= u) ++k;
        z[i] = k;
        ++m.nkw(k, w);
        ++m.topic_total[k];
        ++ndk[k];
      }
    }
    m.sweeps = sweep;
    if (on_sweep) on_sweep(sweep, m);
  }
  return m;
}

struct DocTopics {
  std::vector<double> theta;
  bool empty = false;  // no in-vocabulary tokens; theta is uniform
};

/// Gibbs sampling over one document with the topic-term counts frozen. Theta
/// is the average of (count + alpha) / (n + K alpha) over the kept samples.
inline DocTopics infer_doc_topics(const LDAModel& m, const std::vector<int>& tokens, std::uint64_t seed = 7,
                                  int burn_in = 20, int samples = 30) {
  DocTopics out;
  std::vector<int> doc;
  for (int w : tokens)
    if (w >= 0 && w < m.V) doc.push_back(w);
  const auto K = static_cast<std::size_t>(m.K);
  if (doc.empty()) {
    out.theta.assign(K, 1.0 / m.K);
    out.empty = true;
    return out;
  }
  util::Rng rng(seed);
  std::vector<int> z(doc.size()), ndk(K, 0);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    z[i] = static_cast<int>(rng.below(K));
    ++ndk[static_cast<std::size_t>(z[i])];
  }
  const double Vb = m.V * m.beta;
  const double n = static_cast<double>(doc.size());
  std::vector<double> p(K), acc(K, 0.0);
  for (int s = 0; s < burn_in + samples; ++s) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      --ndk[static_cast<std::size_t>(z[i])];
      double total = 0.0;
      for (int t = 0; t < m.K; ++t) {
        total += (ndk[t] + m.alpha) * (m.nkw(t, doc[i]) + m.beta) / (m.topic_total[t] + Vb);
        p[t] = total;
      }
      const double u = rng.uniform() * total;
      int k = 0;
      while (k < m.K - 1 && p[k] <= u) ++k;
      z[i] = k;
      ++ndk[k];
    }
    if (s >= burn_in)
      for (std::size_t t = 0; t < K; ++t) acc[t] += (ndk[t] + m.alpha) / (n + m.K * m.alpha);
  }
  double sum = 0.0;
  for (double a : acc) sum += a;
  out.theta.resize(K);
  for (std::size_t t = 0; t < K; ++t) out.theta[t] = acc[t] / sum;
  return out;
}

inline DocTopics infer_doc_topics(const LDAModel& m, const std::vector<std::string>& stems, std::uint64_t seed = 7) {
  std::vector<int> ids;
  for (const auto& s : stems) {
    const auto it = std::lower_bound(m.vocab.begin(), m.vocab.end(), s);
    if (it != m.vocab.end() && *it == s) ids.push_back(static_cast<int>(it - m.vocab.begin()));
  }
  return infer_doc_topics(m, ids, seed);
}

/// Terms ranked by phi within each topic; equal counts fall back to the term.
inline std::vector<std::vector<std::string>> top_words(const LDAModel& m, std::size_t n = 20) {
  std::vector<std::vector<std::string>> out;
  std::vector<int> order(static_cast<std::size_t>(m.V));
  for (int k = 0; k < m.K; ++k) {
    for (int w = 0; w < m.V; ++w) order[w] = w;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (m.nkw(k, a) != m.nkw(k, b)) return m.nkw(k, a) > m.nkw(k, b);
      return m.vocab[a] < m.vocab[b];
    });
    std::vector<std::string> words;
    for (std::size_t i = 0; i < std::min<std::size_t>(n, order.size()); ++i) words.push_back(m.vocab[order[i]]);
    out.push_back(std::move(words));
  }
  return out;
}

inline std::string render_top_words(const std::vector<std::vector<std::string>>& words) {
  std::size_t rows = 0, width = 8;
  for (const auto& col : words) {
    rows = std::max(rows, col.size());
    for (const auto& w : col) width = std::max(width, w.size());
  }
  std::string out;
  for (std::size_t k = 0; k < words.size(); ++k) {
    const auto head = "Topic " + std::to_string(k + 1);
    out += head + std::string(width + 2 - head.size(), ' ');
  }
  out = std::string(util::trim(out)) + "\n";
  for (std::size_t r = 0; r < rows; ++r) {
    std::string line;
    for (const auto& col : words) {
      const auto w = r < col.size() ? col[r] : "";
      line += w + std::string(width + 2 - w.size(), ' ');
    }
    out += std::string(util::trim(line)) + "\n";
  }
  return out;
}

/// Long format: topic,rank,term,count,phi.
inline util::CsvTable topic_terms_csv(const LDAModel& m, std::size_t n = 20) {
  util::CsvTable t({"topic", "rank", "term", "count", "phi"});
  const auto words = top_words(m, n);
  for (int k = 0; k < m.K; ++k)
    for (std::size_t r = 0; r < words[k].size(); ++r) {
      const int w = static_cast<int>(std::lower_bound(m.vocab.begin(), m.vocab.end(), words[k][r]) - m.vocab.begin());
      t.add_row({std::to_string(k + 1), std::to_string(r + 1), words[k][r], std::to_string(m.nkw(k, w)),
                 util::exact(m.phi(k, w))});
    }
  return t;
}

}  // namespace chronopref::topics
