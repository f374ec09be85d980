#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "chronopref/topics/porter.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref::topics {

class TopicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One word per line; blank lines and lines starting with '#' are ignored.
class StopwordList {
 public:
  StopwordList() = default;
  explicit StopwordList(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  static StopwordList parse(const std::string& text) {
    std::unordered_set<std::string> words;
    for (const auto& line : util::split(text, '\n')) {
      const auto w = util::to_lower(util::trim(line));
      if (w.empty() || w[0] == '#') continue;
      words.insert(w);
    }
    return StopwordList(std::move(words));
  }
  static StopwordList load(const std::string& path) { return parse(util::read_file(path)); }

  bool contains(const std::string& w) const { return words_.count(w) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

namespace detail {

inline bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

inline bool keep_term(const std::string& w, const StopwordList& stop, const StopwordList& context) {
  return w.size() >= 3 && !all_digits(w) && !stop.contains(w) && !context.contains(w);
}

}  // namespace detail

/// lowercase, split on anything that is not an ASCII letter, drop short words,
/// numerics and stopwords, then stem. Stems are filtered again so the corpus
/// never holds a term shorter than 3 characters or equal to a stopword.
inline std::vector<std::string> preprocess(const std::string& text, const StopwordList& stopwords,
                                           const StopwordList& context_stopwords) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (detail::keep_term(cur, stopwords, context_stopwords)) {
      auto stem = porter_stem(cur);
      if (detail::keep_term(stem, stopwords, context_stopwords)) out.push_back(std::move(stem));
    }
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalpha(c))
      cur.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  return out;
}

struct Document {
  std::string sample_ref;
  std::string text;
};

/// Documents CSV: sample_ref,text. Text fields are percent-escaped for commas
/// and newlines, see escape_text.
inline std::string escape_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '%': out += "%25"; break;
      case ',': out += "%2C"; break;
      case '\n': out += "%0A"; break;
      case '\r': out += "%0D"; break;
      case '"': out += "%22"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string unescape_text(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      const auto code = s.substr(i + 1, 2);
      char c = 0;
      if (code == "25") c = '%';
      else if (code == "2C") c = ',';
      else if (code == "0A") c = '\n';
      else if (code == "0D") c = '\r';
      else if (code == "22") c = '"';
      if (c != 0) {
        out += c;
        i += 2;
        continue;
      }
    }
    out += s[i];
  }
  return out;
}

inline util::CsvTable documents_to_csv(const std::vector<Document>& docs) {
  util::CsvTable t({"sample_ref", "text"});
  for (const auto& d : docs) t.add_row({d.sample_ref, escape_text(d.text)});
  return t;
}

inline std::vector<Document> documents_from_csv(const util::CsvTable& t) {
  const auto c_ref = t.column("sample_ref"), c_text = t.column("text");
  std::vector<Document> docs;
  for (const auto& r : t.rows()) docs.push_back({r[c_ref], unescape_text(r[c_text])});
  return docs;
}

struct Corpus {
  std::vector<std::string> vocab;              // sorted
  std::vector<std::string> doc_refs;           // kept documents, input order
  std::vector<std::vector<int>> docs;          // token ids per kept document
  std::vector<std::string> excluded_refs;      // empty after preprocessing

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& d : docs) n += d.size();
    return n;
  }

  int term_id(const std::string& term) const {
    const auto it = std::lower_bound(vocab.begin(), vocab.end(), term);
    return it != vocab.end() && *it == term ? static_cast<int>(it - vocab.begin()) : -1;
  }

  /// Sparse counts of one document, ordered by term id.
  std::map<int, int> doc_term_counts(std::size_t d) const {
    std::map<int, int> c;
    for (int w : docs.at(d)) ++c[w];
    return c;
  }

  /// Builds a corpus from pre-tokenized documents.
  static Corpus from_tokens(const std::vector<std::string>& refs, const std::vector<std::vector<std::string>>& tokens) {
    if (refs.size() != tokens.size()) throw TopicsError("refs and token lists differ in length");
    Corpus c;
    std::vector<std::string> terms;
    for (const auto& doc : tokens) terms.insert(terms.end(), doc.begin(), doc.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    c.vocab = std::move(terms);
    for (std::size_t d = 0; d < tokens.size(); ++d) {
      if (tokens[d].empty()) {
        c.excluded_refs.push_back(refs[d]);
        continue;
      }
      std::vector<int> ids;
      ids.reserve(tokens[d].size());
      for (const auto& t : tokens[d]) ids.push_back(c.term_id(t));
      c.doc_refs.push_back(refs[d]);
      c.docs.push_back(std::move(ids));
    }
    return c;
  }

  static Corpus build(const std::vector<Document>& documents, const StopwordList& stopwords,
                      const StopwordList& context_stopwords) {
    std::vector<std::string> refs;
    std::vector<std::vector<std::string>> tokens;
    for (const auto& d : documents) {
      refs.push_back(d.sample_ref);
      tokens.push_back(preprocess(d.text, stopwords, context_stopwords));
    }
    return from_tokens(refs, tokens);
  }
};

}  // namespace chronopref::topics
