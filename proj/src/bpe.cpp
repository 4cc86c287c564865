#include "expsolve/bpe.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

namespace expsolve {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> out;
  out.reserve(word.size());
  for (std::size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i + 1 == word.size()) s += TokenizerModel::kEndOfWord;
    out.push_back(std::move(s));
  }
  return out;
}

std::string rank_key(const std::string& left, const std::string& right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key += left;
  key += '\0';
  key += right;
  return key;
}

std::string escape(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (c <= 0x20 || c == 0x7f || c == '\\') {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\') {
      if (i + 3 >= s.size() || s[i + 1] != 'x') throw FormatError("bad escape in tokenizer file");
      out += static_cast<char>(std::stoi(s.substr(i + 2, 2), nullptr, 16));
      i += 3;
    } else {
      out += s[i];
    }
  }
  return out;
}

using PairKey = std::uint64_t;

PairKey make_key(int left, int right) {
  return (static_cast<PairKey>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}
int key_left(PairKey k) { return static_cast<int>(k >> 32); }
int key_right(PairKey k) { return static_cast<int>(k & 0xffffffffu); }

struct TrainWord {
  std::vector<int> symbols;
  std::int64_t count = 0;
};

}  // namespace

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

TokenizerModel TokenizerModel::train(const std::vector<std::string>& documents,
                                     Index target_vocab) {
  std::map<std::string, std::int64_t> word_counts;
  for (const auto& doc : documents) {
    for (auto w : split_words(doc)) ++word_counts[std::string(w)];
  }
  if (word_counts.empty()) throw DomainError("cannot train a tokenizer on an empty corpus");

  std::vector<std::string> names;
  std::unordered_map<std::string, int> name_ids;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = name_ids.emplace(s, static_cast<int>(names.size()));
    if (inserted) names.push_back(s);
    return it->second;
  };

  std::vector<TrainWord> words;
  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_counts) {
    TrainWord tw;
    tw.count = count;
    for (auto& sym : initial_symbols(word)) {
      alphabet.insert(sym);
      tw.symbols.push_back(intern(sym));
    }
    words.push_back(std::move(tw));
  }

  std::unordered_map<PairKey, std::int64_t> pair_counts;
  std::unordered_map<PairKey, std::vector<int>> where;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& syms = words[w].symbols;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const PairKey k = make_key(syms[i], syms[i + 1]);
      pair_counts[k] += words[w].count;
      where[k].push_back(static_cast<int>(w));
    }
  }

  struct Entry {
    std::int64_t count;
    PairKey key;
  };
  // Highest count first; among equal counts the lexicographically smallest
  // (left, right) pair wins.
  auto lower_priority = [&names](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = names[static_cast<std::size_t>(key_left(a.key))];
    const auto& bl = names[static_cast<std::size_t>(key_left(b.key))];
    if (al != bl) return al > bl;
    return names[static_cast<std::size_t>(key_right(a.key))] >
           names[static_cast<std::size_t>(key_right(b.key))];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(lower_priority);
  for (const auto& [k, c] : pair_counts) heap.push({c, k});

  TokenizerModel model;
  model.alphabet_.assign(alphabet.begin(), alphabet.end());
  std::unordered_set<std::string> vocab(alphabet.begin(), alphabet.end());
  Index vocab_size = static_cast<Index>(vocab.size()) + 2;

  std::vector<std::size_t> stamp(words.size(), std::numeric_limits<std::size_t>::max());
  std::unordered_set<PairKey> changed;
  while (vocab_size < target_vocab) {
    Entry top{0, 0};
    bool found = false;
    while (!heap.empty()) {
      top = heap.top();
      heap.pop();
      const auto it = pair_counts.find(top.key);
      if (it != pair_counts.end() && it->second == top.count && top.count > 0) {
        found = true;
        break;
      }
    }
    if (!found) break;

    const int left = key_left(top.key);
    const int right = key_right(top.key);
    const std::string merged = names[static_cast<std::size_t>(left)] +
                               names[static_cast<std::size_t>(right)];
    const int merged_id = intern(merged);
    model.merges_.emplace_back(names[static_cast<std::size_t>(left)],
                               names[static_cast<std::size_t>(right)]);
    if (vocab.insert(merged).second) ++vocab_size;

    const std::size_t merge_index = model.merges_.size();
    std::vector<int> affected = std::move(where[top.key]);
    where.erase(top.key);
    changed.clear();
    for (int w : affected) {
      if (stamp[static_cast<std::size_t>(w)] == merge_index) continue;
      stamp[static_cast<std::size_t>(w)] = merge_index;
      auto& word = words[static_cast<std::size_t>(w)];
      auto& syms = word.symbols;
      bool present = false;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        if (syms[i] == left && syms[i + 1] == right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const PairKey k = make_key(syms[i], syms[i + 1]);
        pair_counts[k] -= word.count;
        changed.insert(k);
      }
      std::vector<int> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const PairKey k = make_key(syms[i], syms[i + 1]);
        pair_counts[k] += word.count;
        where[k].push_back(w);
        changed.insert(k);
      }
    }
    for (PairKey k : changed) {
      const auto it = pair_counts.find(k);
      if (it == pair_counts.end()) continue;
      if (it->second > 0) {
        heap.push({it->second, k});
      } else {
        pair_counts.erase(it);
      }
    }
  }
  model.rebuild_vocab();
  return model;
}

void TokenizerModel::rebuild_vocab() {
  symbols_.clear();
  ids_.clear();
  merge_rank_.clear();
  auto add = [&](const std::string& s) {
    if (ids_.emplace(s, static_cast<TokenId>(symbols_.size())).second) symbols_.push_back(s);
  };
  add("<pad>");
  add("<oov>");
  for (const auto& a : alphabet_) add(a);
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    add(merges_[r].first + merges_[r].second);
    merge_rank_.emplace(rank_key(merges_[r].first, merges_[r].second), r);
  }
}

TokenId TokenizerModel::id_of(const std::string& symbol) const {
  const auto it = ids_.find(symbol);
  return it == ids_.end() ? kOovId : it->second;
}

std::vector<std::string> TokenizerModel::segment_word(std::string_view word) const {
  std::vector<std::string> syms = initial_symbols(word);
  // Apply merges in recorded order: repeatedly take the lowest-ranked pair
  // present whose rank is above the last one applied.
  std::size_t floor_rank = 0;
  for (;;) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = merge_rank_.find(rank_key(syms[i], syms[i + 1]));
      if (it != merge_rank_.end() && it->second >= floor_rank && it->second < best) {
        best = it->second;
      }
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    const auto& [left, right] = merges_[best];
    std::vector<std::string> next;
    next.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
        next.push_back(left + right);
        ++i;
      } else {
        next.push_back(std::move(syms[i]));
      }
    }
    syms = std::move(next);
    floor_rank = best + 1;
  }
  return syms;
}

std::vector<TokenId> TokenizerModel::encode(std::string_view text) const {
  std::unordered_map<std::string_view, std::vector<TokenId>> cache;
  std::vector<TokenId> ids;
  for (auto word : split_words(text)) {
    auto it = cache.find(word);
    if (it == cache.end()) {
      std::vector<TokenId> word_ids;
      for (const auto& sym : segment_word(word)) word_ids.push_back(id_of(sym));
      it = cache.emplace(word, std::move(word_ids)).first;
    }
    ids.insert(ids.end(), it->second.begin(), it->second.end());
  }
  return ids;
}

std::vector<std::vector<TokenId>> TokenizerModel::encode_documents(
    const std::vector<std::string>& docs) const {
  std::unordered_map<std::string_view, std::vector<TokenId>> cache;
  std::vector<std::vector<TokenId>> out;
  out.reserve(docs.size());
  for (const auto& doc : docs) {
    std::vector<TokenId> ids;
    for (auto word : split_words(doc)) {
      auto it = cache.find(word);
      if (it == cache.end()) {
        std::vector<TokenId> word_ids;
        for (const auto& sym : segment_word(word)) word_ids.push_back(id_of(sym));
        it = cache.emplace(word, std::move(word_ids)).first;
      }
      ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    out.push_back(std::move(ids));
  }
  return out;
}

void TokenizerModel::save(std::ostream& out) const {
  out << "expsolve-bpe " << vocab_size() << '\n';
  out << "alphabet " << alphabet_.size() << '\n';
  for (const auto& a : alphabet_) out << escape(a) << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) out << escape(l) << ' ' << escape(r) << '\n';
}

void TokenizerModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  save(out);
}

TokenizerModel TokenizerModel::load(std::istream& in) {
  std::string tag;
  Index vocab = 0;
  std::size_t n = 0;
  if (!(in >> tag >> vocab) || tag != "expsolve-bpe") throw FormatError("not a tokenizer file");
  if (!(in >> tag >> n) || tag != "alphabet") throw FormatError("tokenizer file: missing alphabet");
  TokenizerModel model;
  for (std::size_t i = 0; i < n; ++i) {
    std::string sym;
    if (!(in >> sym)) throw FormatError("tokenizer file: alphabet truncated");
    model.alphabet_.push_back(unescape(sym));
  }
  if (!(in >> tag >> n) || tag != "merges") throw FormatError("tokenizer file: missing merges");
  for (std::size_t i = 0; i < n; ++i) {
    std::string l, r;
    if (!(in >> l >> r)) throw FormatError("tokenizer file: merges truncated");
    model.merges_.emplace_back(unescape(l), unescape(r));
  }
  model.rebuild_vocab();
  if (model.vocab_size() != vocab) {
    throw FormatError("tokenizer file declares " + std::to_string(vocab) + " ids but rebuilds " +
                      std::to_string(model.vocab_size()));
  }
  return model;
}

TokenizerModel TokenizerModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return load(in);
}

}  // namespace expsolve
