#include "sciedkit/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "sciedkit/errors.hpp"
#include "sciedkit/sha256.hpp"

namespace sciedkit {

namespace {

const char* kSpecialNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Splits a UTF-8 string into codepoint-sized chunks. Invalid bytes pass
// through as single-byte chunks so the function is total.
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if (c >= 0xf0) {
      len = 4;
    } else if (c >= 0xe0) {
      len = 3;
    } else if (c >= 0xc0) {
      len = 2;
    }
    if (i + len > s.size()) len = 1;
    bool valid = true;
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) valid = false;
    }
    if (!valid) len = 1;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string lowercase_char(const std::string& ch) {
  if (ch.size() == 1) {
    const unsigned char c = static_cast<unsigned char>(ch[0]);
    if (c >= 'A' && c <= 'Z') return std::string(1, static_cast<char>(c + 32));
    return ch;
  }
  // Latin-1 supplement uppercase letters (U+00C0..U+00DE except U+00D7)
  if (ch.size() == 2 && static_cast<unsigned char>(ch[0]) == 0xc3) {
    const unsigned char c = static_cast<unsigned char>(ch[1]);
    if (c >= 0x80 && c <= 0x9e && c != 0x97) {
      std::string lower = ch;
      lower[1] = static_cast<char>(c + 0x20);
      return lower;
    }
  }
  return ch;
}

std::string byte_display(int b) {
  static const char* hex = "0123456789abcdef";
  std::string s = "<0x00>";
  s[3] = hex[(b >> 4) & 0xf];
  s[4] = hex[b & 0xf];
  return s;
}

int parse_byte_display(const std::string& s) {
  if (s.size() != 6 || s.rfind("<0x", 0) != 0 || s[5] != '>') return -1;
  int v = 0;
  for (int i = 3; i < 5; ++i) {
    const char c = s[i];
    v <<= 4;
    if (c >= '0' && c <= '9') {
      v |= c - '0';
    } else if (c >= 'a' && c <= 'f') {
      v |= c - 'a' + 10;
    } else {
      return -1;
    }
  }
  return v;
}

}  // namespace

Vocabulary::Vocabulary() {
  pieces_.reserve(kFirstLearned);
  for (int i = 0; i < kNumSpecial; ++i) pieces_.push_back(kSpecialNames[i]);
  for (int b = 0; b < 256; ++b) {
    std::string raw(1, static_cast<char>(b));
    map_.emplace(raw, kByteBase + b);
    pieces_.push_back(std::move(raw));
  }
}

int Vocabulary::id_of(const std::string& piece) const {
  auto it = map_.find(piece);
  return it == map_.end() ? -1 : it->second;
}

const std::string& Vocabulary::piece_raw(int id) const {
  if (id < 0 || id >= size()) {
    throw InputError("token id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(size()) + ")");
  }
  return pieces_[static_cast<size_t>(id)];
}

std::string Vocabulary::piece_display(int id) const {
  const std::string& raw = piece_raw(id);
  if (id >= kByteBase && id < kFirstLearned) {
    return byte_display(id - kByteBase);
  }
  return raw;
}

void Vocabulary::add_learned(const std::string& piece) {
  if (piece.empty()) throw InputError("cannot add an empty vocabulary piece");
  if (map_.count(piece)) return;
  map_.emplace(piece, size());
  pieces_.push_back(piece);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (int id = 0; id < size(); ++id) {
    out += piece_display(id);
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::parse(const std::string& text, const std::string& source) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (static_cast<int>(lines.size()) < kFirstLearned) {
    throw InputError(source + ": vocabulary file has " + std::to_string(lines.size()) +
                     " lines, need at least " + std::to_string(kFirstLearned));
  }
  for (int i = 0; i < kNumSpecial; ++i) {
    if (lines[i] != kSpecialNames[i]) {
      throw InputError(source + ":" + std::to_string(i + 1) + ": expected special token " +
                       kSpecialNames[i] + ", got `" + lines[i] + "`");
    }
  }
  for (int b = 0; b < 256; ++b) {
    if (parse_byte_display(lines[kByteBase + b]) != b) {
      throw InputError(source + ":" + std::to_string(kByteBase + b + 1) +
                       ": expected byte piece " + byte_display(b) + ", got `" +
                       lines[kByteBase + b] + "`");
    }
  }
  Vocabulary vocab;
  for (size_t i = kFirstLearned; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      throw InputError(source + ":" + std::to_string(i + 1) + ": empty vocabulary piece");
    }
    if (vocab.id_of(lines[i]) >= 0) {
      throw InputError(source + ":" + std::to_string(i + 1) + ": duplicate piece `" + lines[i] +
                       "`");
    }
    vocab.add_learned(lines[i]);
  }
  return vocab;
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

void Vocabulary::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  out << serialize();
}

std::array<uint8_t, 32> Vocabulary::content_hash() const { return sha256(serialize()); }

std::string normalize_text(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (const auto& ch : utf8_chars(text)) {
    if (ch.size() == 1 && is_ascii_space(ch[0])) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out += lowercase_char(ch);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& normalized) {
  std::vector<std::string> words;
  std::string word;
  for (char c : normalized) {
    if (c == ' ') {
      if (!word.empty()) words.push_back(std::move(word));
      word.clear();
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) words.push_back(std::move(word));
  return words;
}

std::vector<int> wordpiece_ids(const std::string& word, const Vocabulary& vocab) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos < word.size()) {
    int found = -1;
    size_t found_end = pos;
    for (size_t end = word.size(); end > pos; --end) {
      std::string candidate = word.substr(pos, end - pos);
      if (pos > 0) {
        candidate = "##" + candidate;
      } else if (candidate.rfind("##", 0) == 0) {
        continue;  // continuation pieces never match at word start
      }
      const int id = vocab.id_of(candidate);
      if (id >= 0) {
        found = id;
        found_end = end;
        break;
      }
    }
    if (found < 0) return {};
    out.push_back(found);
    pos = found_end;
  }
  return out;
}

Vocabulary build_vocab(const Corpus& corpus, int target_size, int min_freq) {
  if (corpus.documents.empty()) throw InputError("build_vocab: corpus is empty");
  if (target_size < Vocabulary::kFirstLearned) {
    throw InputError("build_vocab: target_size " + std::to_string(target_size) +
                     " is below the minimum " + std::to_string(Vocabulary::kFirstLearned) +
                     " (specials + byte pieces)");
  }
  if (min_freq < 1) throw InputError("build_vocab: min_freq must be >= 1");

  // word and character statistics (deterministic ordered maps)
  std::map<std::string, long long> word_freq;
  std::map<std::string, long long> char_freq;
  for (const auto& doc : corpus.documents) {
    for (auto& w : split_words(normalize_text(doc))) {
      ++word_freq[w];
    }
  }
  if (word_freq.empty()) throw InputError("build_vocab: corpus contains no words");
  for (const auto& [word, freq] : word_freq) {
    for (const auto& ch : utf8_chars(word)) char_freq[ch] += freq;
  }

  Vocabulary vocab;
  // single characters first: initial form (beyond the byte pieces) and
  // continuation form for every character above the frequency threshold
  std::vector<std::string> char_pieces;
  for (const auto& [ch, freq] : char_freq) {
    if (freq < min_freq) continue;
    if (ch.size() > 1) char_pieces.push_back(ch);
    char_pieces.push_back("##" + ch);
  }
  if (static_cast<int>(char_pieces.size()) + vocab.size() > target_size) {
    throw InputError("build_vocab: target_size " + std::to_string(target_size) +
                     " too small for the character inventory (" +
                     std::to_string(char_pieces.size()) + " pieces)");
  }
  for (const auto& p : char_pieces) vocab.add_learned(p);

  // words as piece sequences; words with sub-threshold characters cannot
  // participate in merging (they encode to UNK anyway)
  struct WordRepr {
    std::vector<std::string> pieces;
    long long freq;
  };
  std::vector<WordRepr> reprs;
  for (const auto& [word, freq] : word_freq) {
    const auto chars = utf8_chars(word);
    WordRepr repr;
    repr.freq = freq;
    bool ok = true;
    for (size_t i = 0; i < chars.size(); ++i) {
      if (char_freq[chars[i]] < min_freq) {
        ok = false;
        break;
      }
      repr.pieces.push_back(i == 0 ? chars[i] : "##" + chars[i]);
    }
    if (ok) reprs.push_back(std::move(repr));
  }

  const long long merge_floor = std::max<long long>(2, min_freq);
  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& repr : reprs) {
      for (size_t i = 0; i + 1 < repr.pieces.size(); ++i) {
        pair_freq[{repr.pieces[i], repr.pieces[i + 1]}] += repr.freq;
      }
    }
    // best pair by frequency; ties break to the lexicographically smallest,
    // which the ordered map gives us by visiting pairs in order
    std::pair<std::string, std::string> best;
    long long best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best_freq = freq;
        best = pair;
      }
    }
    if (best_freq < merge_floor) break;

    std::string merged = best.first;
    merged += best.second.substr(2);  // right side always carries "##"
    vocab.add_learned(merged);
    for (auto& repr : reprs) {
      auto& p = repr.pieces;
      for (size_t i = 0; i + 1 < p.size();) {
        if (p[i] == best.first && p[i + 1] == best.second) {
          p[i] = merged;
          p.erase(p.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }
  return vocab;
}

EncodedSequence encode(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 3) {
    throw InputError("encode: max_len must be >= 3 (CLS + token + SEP), got " +
                     std::to_string(max_len));
  }
  std::vector<int> piece_ids;
  for (const auto& word : split_words(normalize_text(text))) {
    const auto ids = wordpiece_ids(word, vocab);
    if (ids.empty()) {
      piece_ids.push_back(Vocabulary::kUnk);
    } else {
      piece_ids.insert(piece_ids.end(), ids.begin(), ids.end());
    }
  }
  // head-keeping truncation: drop tail content before SEP
  const size_t budget = static_cast<size_t>(max_len) - 2;
  if (piece_ids.size() > budget) piece_ids.resize(budget);

  EncodedSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kCls);
  seq.ids.insert(seq.ids.end(), piece_ids.begin(), piece_ids.end());
  seq.ids.push_back(Vocabulary::kSep);
  seq.original_length = static_cast<int>(seq.ids.size());
  seq.ids.resize(static_cast<size_t>(max_len), Vocabulary::kPad);
  seq.attention_mask.assign(static_cast<size_t>(max_len), 0);
  for (int i = 0; i < seq.original_length; ++i) seq.attention_mask[i] = 1;
  return seq;
}

std::vector<EncodedSequence> encode_all(const std::vector<std::string>& texts,
                                        const Vocabulary& vocab, int max_len) {
  std::vector<EncodedSequence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t, vocab, max_len));
  return out;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& raw = vocab.piece_raw(id);  // validates the id
    if (vocab.is_special(id)) continue;
    if (raw.rfind("##", 0) == 0) {
      out += raw.substr(2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += raw;
    }
  }
  return out;
}

}  // namespace sciedkit
