#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace storygen::bpe {

// Byte-pair-encoding caption tokenizer. Text is lowercased and
// whitespace-pre-tokenized; the final symbol of each word carries an
// end-of-word marker so decoding restores word boundaries. Learned token
// ids occupy [0, learned_count); PAD/NULL/UNK sit directly above them.
class BpeVocab {
 public:
  // Deterministic training: the most frequent pair merges first, ties broken
  // by lexicographically smaller pair. vocab_size counts learned tokens
  // (base symbols + merges) and must exceed the base symbol count.
  static BpeVocab train(const std::vector<std::string>& corpus, int vocab_size);

  // fixed-length ids: padded with PAD at the tail, truncated beyond length
  std::vector<int> encode(const std::string& text, int length) const;
  // unpadded encoding (used for vocabulary-level round trips)
  std::vector<int> encode_all(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  int learned_count() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return learned_count(); }
  int null_id() const { return learned_count() + 1; }
  int unk_id() const { return learned_count() + 2; }
  int total_vocab() const { return learned_count() + 3; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  void save(const std::filesystem::path& path) const;
  static BpeVocab load(const std::filesystem::path& path);

  // lowercase + collapse whitespace; the normalization applied before encoding
  static std::string normalize(const std::string& text);

 private:
  std::vector<std::string> word_symbols(const std::string& word) const;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> merge_rank_;
  std::vector<std::string> tokens_;  // id -> symbol
  std::unordered_map<std::string, int> token_to_id_;
  void build_indexes();
};

}  // namespace storygen::bpe
