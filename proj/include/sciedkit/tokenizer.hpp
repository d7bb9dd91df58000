#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sciedkit/corpus.hpp"

namespace sciedkit {

// Subword inventory with fixed layout:
//   ids 0..4     special tokens [PAD] [UNK] [CLS] [SEP] [MASK]
//   ids 5..260   the 256 single-byte pieces (serialized as <0xNN>)
//   ids 261..    learned pieces; continuation pieces carry a "##" prefix
// The vocabulary file is UTF-8, one piece per line, line number == id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;
  static constexpr int kByteBase = 5;
  static constexpr int kFirstLearned = 261;

  Vocabulary();

  int size() const { return static_cast<int>(pieces_.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }

  // -1 when the piece is not in the inventory. Matching uses raw forms:
  // single-byte strings for byte pieces, literal text otherwise.
  int id_of(const std::string& piece) const;
  const std::string& piece_raw(int id) const;
  std::string piece_display(int id) const;

  void add_learned(const std::string& piece);  // no-op if raw form already present

  const std::string& normalization() const { return normalization_; }

  std::string serialize() const;
  static Vocabulary parse(const std::string& text, const std::string& source);
  static Vocabulary load_file(const std::string& path);
  void save_file(const std::string& path) const;
  std::array<uint8_t, 32> content_hash() const;

 private:
  std::vector<std::string> pieces_;  // raw forms, all ids
  std::unordered_map<std::string, int> map_;
  std::string normalization_ = "nfc-lower-ws";
};

struct EncodedSequence {
  std::vector<int> ids;             // length == max_len, padded with PAD
  std::vector<int> attention_mask;  // 1 at non-PAD positions
  int original_length = 0;          // CLS + pieces + SEP before padding
};

// Lowercase, collapse whitespace runs to single spaces, trim. Input is
// treated as already NFC-composed; ASCII and Latin-1 letters are folded.
std::string normalize_text(const std::string& text);

std::vector<std::string> split_words(const std::string& normalized);

// Greedy longest-match segmentation of one normalized word. Empty result
// means the word cannot be segmented and becomes UNK.
std::vector<int> wordpiece_ids(const std::string& word, const Vocabulary& vocab);

// Deterministic WordPiece-style builder: all single characters seen at
// least min_freq times become pieces, then the most frequent adjacent
// piece pair is merged until target_size is reached or no pair repeats.
Vocabulary build_vocab(const Corpus& corpus, int target_size, int min_freq);

EncodedSequence encode(const std::string& text, const Vocabulary& vocab, int max_len);
std::vector<EncodedSequence> encode_all(const std::vector<std::string>& texts,
                                        const Vocabulary& vocab, int max_len);
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace sciedkit
