#include "bpe/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "core/io.hpp"

namespace storygen::bpe {

namespace {

constexpr const char* kWordEnd = "</w>";

std::vector<std::string> split_words(const std::string& normalized) {
  std::vector<std::string> words;
  std::istringstream in(normalized);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> base_symbols_of(const std::string& word) {
  std::vector<std::string> symbols;
  for (size_t i = 0; i < word.size(); ++i) symbols.emplace_back(1, word[i]);
  if (!symbols.empty()) symbols.back() += kWordEnd;
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  size_t w = 0;
  for (size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == left && symbols[r + 1] == right) {
      symbols[w++] = left + right;
      r += 2;
    } else {
      symbols[w++] = std::move(symbols[r]);
      r += 1;
    }
  }
  symbols.resize(w);
}

}  // namespace

std::string BpeVocab::normalize(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

BpeVocab BpeVocab::train(const std::vector<std::string>& corpus, int vocab_size) {
  std::map<std::string, int> word_freq;
  for (const auto& line : corpus)
    for (const auto& w : split_words(normalize(line))) ++word_freq[w];
  if (word_freq.empty()) throw std::invalid_argument("bpe train: empty corpus");

  std::vector<std::pair<std::vector<std::string>, int>> words;
  std::set<std::string> base;
  for (const auto& [w, freq] : word_freq) {
    auto symbols = base_symbols_of(w);
    for (const auto& s : symbols) base.insert(s);
    words.emplace_back(std::move(symbols), freq);
  }

  const int base_count = static_cast<int>(base.size());
  if (vocab_size <= base_count)
    throw std::invalid_argument("bpe train: vocab_size " + std::to_string(vocab_size) +
                                " must exceed base symbol count " + std::to_string(base_count));

  BpeVocab vocab;
  vocab.tokens_.assign(base.begin(), base.end());

  const int merge_budget = vocab_size - base_count;
  for (int step = 0; step < merge_budget; ++step) {
    // ordered map makes the lexicographically smallest pair win ties
    std::map<std::pair<std::string, std::string>, long> pair_count;
    for (const auto& [symbols, freq] : words)
      for (size_t i = 0; i + 1 < symbols.size(); ++i)
        pair_count[{symbols[i], symbols[i + 1]}] += freq;
    if (pair_count.empty()) break;

    std::pair<std::string, std::string> best;
    long best_count = -1;
    for (const auto& [pair, count] : pair_count) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }

    for (auto& [symbols, freq] : words) apply_merge(symbols, best.first, best.second);
    vocab.merges_.push_back(best);
    const std::string merged = best.first + best.second;
    if (std::find(vocab.tokens_.begin(), vocab.tokens_.end(), merged) == vocab.tokens_.end())
      vocab.tokens_.push_back(merged);
  }

  vocab.build_indexes();
  return vocab;
}

void BpeVocab::build_indexes() {
  token_to_id_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) token_to_id_[tokens_[i]] = static_cast<int>(i);
  merge_rank_.clear();
  for (size_t i = 0; i < merges_.size(); ++i)
    merge_rank_[merges_[i].first + "\x1f" + merges_[i].second] = static_cast<int>(i);
}

std::vector<std::string> BpeVocab::word_symbols(const std::string& word) const {
  auto symbols = base_symbols_of(word);
  for (;;) {
    int best_rank = -1;
    size_t best_pos = 0;
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(symbols[i] + "\x1f" + symbols[i + 1]);
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    apply_merge(symbols, symbols[best_pos], symbols[best_pos + 1]);
  }
  return symbols;
}

std::vector<int> BpeVocab::encode_all(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(normalize(text))) {
    for (const auto& s : word_symbols(w)) {
      auto it = token_to_id_.find(s);
      ids.push_back(it == token_to_id_.end() ? unk_id() : it->second);
    }
  }
  return ids;
}

std::vector<int> BpeVocab::encode(const std::string& text, int length) const {
  std::vector<int> ids = encode_all(text);
  ids.resize(static_cast<size_t>(length), pad_id());
  return ids;
}

std::string BpeVocab::decode(const std::vector<int>& ids) const {
  std::string joined;
  for (int id : ids) {
    if (id == pad_id() || id == null_id()) continue;
    if (id == unk_id()) {
      joined += "<unk>";
      continue;
    }
    if (id < 0 || id >= learned_count())
      throw std::invalid_argument("bpe decode: id " + std::to_string(id) + " out of range");
    joined += tokens_[static_cast<size_t>(id)];
  }
  std::string out;
  size_t pos = 0;
  const std::string marker = kWordEnd;
  while (pos < joined.size()) {
    size_t hit = joined.find(marker, pos);
    if (hit == std::string::npos) {
      out += joined.substr(pos);
      break;
    }
    out += joined.substr(pos, hit - pos);
    out += ' ';
    pos = hit + marker.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

void BpeVocab::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "storygen-bpe v1\n";
  out << "tokens " << tokens_.size() << "\n";
  for (const auto& t : tokens_) out << t << "\n";
  out << "merges " << merges_.size() << "\n";
  for (const auto& [l, r] : merges_) out << l << "\t" << r << "\n";
  write_text_file(path, out.str());
}

BpeVocab BpeVocab::load(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "storygen-bpe v1")
    throw std::runtime_error("bpe load: unrecognized vocabulary file: " + path.string());

  BpeVocab vocab;
  std::string tag;
  size_t count = 0;
  in >> tag >> count;
  std::getline(in, line);
  if (tag != "tokens") throw std::runtime_error("bpe load: malformed token section");
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("bpe load: truncated token list");
    vocab.tokens_.push_back(line);
  }
  in >> tag >> count;
  std::getline(in, line);
  if (tag != "merges") throw std::runtime_error("bpe load: malformed merge section");
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("bpe load: truncated merge list");
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("bpe load: malformed merge rule");
    vocab.merges_.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  vocab.build_indexes();
  return vocab;
}

}  // namespace storygen::bpe
